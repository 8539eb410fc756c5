#pragma once

#include "dbf/common.hpp"
#include "dbf/fusion.hpp"
#include "dbf/rng.hpp"
#include "dbf/tensor.hpp"

namespace dbf {

// Two-layer regression head d -> d/2 -> 1 with GELU; dropout sits after the
// nonlinearity and is active only in training mode.
struct RegressionHead {
  Tensor w1;  // [d x d/2]
  Tensor w2;  // [d/2 x 1]
  double dropout_rate = 0.0;

  static RegressionHead init(size_t d, double dropout_rate, Rng& rng);
};

// Batched head pass: pooled [B x d] -> predictions [B x 1]. `rng` is only
// consumed when training and dropout_rate > 0.
Tensor head_forward(const Tensor& pooled, const RegressionHead& head, bool training,
                    Rng& rng);

// Evaluation-mode scalar prediction for one fused sample.
double predict(const FusionOutput& fusion, const RegressionHead& head);

// Mean absolute error over the batch plus the (already alpha-weighted)
// regularizer term.
Tensor task_loss(const Tensor& preds, const Tensor& labels, const Tensor& mimax);

}  // namespace dbf
