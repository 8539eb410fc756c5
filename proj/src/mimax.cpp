#include "dbf/mimax.hpp"

#include <string>

namespace dbf {

PredictorParams PredictorParams::init(size_t d, size_t d_hidden, Rng& rng) {
  if (d == 0 || d_hidden == 0)
    throw ConfigError("predictor: dims must be positive");
  PredictorParams p;
  p.w1 = Tensor::randn({d, d_hidden}, rng, 0.0, 0.02, true);
  p.w2 = Tensor::randn({d_hidden, d}, rng, 0.0, 0.02, true);
  return p;
}

Tensor pool(const Tensor& seq) {
  if (seq.rank() != 2 || seq.rows() == 0)
    throw ShapeError("pool: need a nonempty rank-2 sequence, got " + seq.shape_str());
  return mean_rows(seq);
}

Tensor predictor_forward(const Tensor& z, const PredictorParams& p) {
  return matmul(gelu(matmul(z, p.w1)), p.w2);
}

Tensor similarity(const Tensor& x_m, const Tensor& z, const PredictorParams& p) {
  if (x_m.rank() != 1 || z.rank() != 1)
    throw ShapeError("similarity: need rank-1 vectors, got " + x_m.shape_str() + ", " +
                     z.shape_str());
  Tensor pred = l2_normalize(predictor_forward(z, p));
  Tensor anchor = l2_normalize(x_m);
  return sum_all(mul(anchor, pred));
}

Tensor infonce_loss(const NceBatch& batch, Modality m, const PredictorParams& p,
                    double temperature) {
  auto it = batch.x.find(m);
  if (it == batch.x.end())
    throw ConfigError(std::string("infonce_loss: no batch vectors for modality ") +
                      modality_name(m));
  const Tensor& x = it->second;
  if (batch.z.rank() != 2 || x.rank() != 2 || batch.z.shape != x.shape)
    throw ShapeError("infonce_loss: z " + batch.z.shape_str() + " vs x " + x.shape_str());
  Tensor pred = l2_normalize_rows(predictor_forward(batch.z, p));
  Tensor anchors = l2_normalize_rows(x);
  Tensor logits = matmul_nt(pred, anchors);  // s_ij = cos(x_j, F(z_i))
  return nce_logits_loss(logits, temperature);
}

Tensor mimax_total(const NceBatch& batch,
                   const std::map<Modality, PredictorParams>& predictors, double alpha,
                   double temperature) {
  if (alpha < 0.0) throw ConfigError("mimax_total: alpha must be nonnegative");
  if (alpha == 0.0) return Tensor::scalar(0.0);
  Tensor total;
  for (const auto& [m, p] : predictors) {
    Tensor loss = infonce_loss(batch, m, p, temperature);
    total = total.defined() ? add(total, loss) : loss;
  }
  if (!total.defined()) throw ConfigError("mimax_total: no predictors");
  return scale(total, alpha);
}

}  // namespace dbf
