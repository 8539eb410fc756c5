#include "dbf/heads.hpp"

namespace dbf {

RegressionHead RegressionHead::init(size_t d, double dropout_rate, Rng& rng) {
  if (d < 2) throw ConfigError("regression head: model dim must be at least 2");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigError("regression head: dropout rate must be in [0, 1)");
  RegressionHead h;
  h.w1 = Tensor::randn({d, d / 2}, rng, 0.0, 0.02, true);
  h.w2 = Tensor::randn({d / 2, 1}, rng, 0.0, 0.02, true);
  h.dropout_rate = dropout_rate;
  return h;
}

Tensor head_forward(const Tensor& pooled, const RegressionHead& head, bool training,
                    Rng& rng) {
  Tensor hidden = gelu(matmul(pooled, head.w1));
  if (training && head.dropout_rate > 0.0) hidden = dropout(hidden, head.dropout_rate, rng);
  return matmul(hidden, head.w2);
}

double predict(const FusionOutput& fusion, const RegressionHead& head) {
  if (!fusion.pooled.defined())
    throw ShapeError("predict: fusion output has no pooled vector");
  Rng unused(0);
  Tensor row = stack_rows({fusion.pooled});
  return head_forward(row, head, false, unused).scalar_value();
}

Tensor task_loss(const Tensor& preds, const Tensor& labels, const Tensor& mimax) {
  if (preds.size() == 0 || preds.size() != labels.size())
    throw ShapeError("task_loss: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  if (mimax.size() != 1)
    throw ShapeError("task_loss: regularizer term must be scalar, got " + mimax.shape_str());
  Tensor mae = mean_all(abs_val(sub(preds, labels)));
  return add(mae, mimax);
}

}  // namespace dbf
