#pragma once

#include <map>

#include "dbf/common.hpp"
#include "dbf/rng.hpp"
#include "dbf/tensor.hpp"

namespace dbf {

// Two-layer predictor (d -> d_hidden -> d, GELU between, bias-free) mapping
// the fused representation back toward one modality's embedding.
struct PredictorParams {
  Tensor w1;  // [d x d_hidden]
  Tensor w2;  // [d_hidden x d]

  static PredictorParams init(size_t d, size_t d_hidden, Rng& rng);
};

// One batch of pooled vectors for the contrastive bound: row i of z pairs
// with row i of each x[m]; every other row serves as an in-batch negative.
struct NceBatch {
  Tensor z;                      // [B x d]
  std::map<Modality, Tensor> x;  // each [B x d]
};

// Positionwise mean over a [L x d] sequence.
Tensor pool(const Tensor& seq);

Tensor predictor_forward(const Tensor& z, const PredictorParams& p);

// Cosine of unit-normalized x_m and predictor(z): the contrastive logit.
Tensor similarity(const Tensor& x_m, const Tensor& z, const PredictorParams& p);

// InfoNCE with logits s_ij = cos(x_{m,j}, F(z_i)) / tau over the batch;
// the positive j=i sits in the denominator alongside the B-1 negatives, so
// the loss is nonnegative and equals ln B on uniform logits.
Tensor infonce_loss(const NceBatch& batch, Modality m, const PredictorParams& p,
                    double temperature);

// alpha-weighted sum of the per-modality losses. alpha == 0 returns a plain
// zero constant with no graph attached: bitwise identical to removing the
// regularizer entirely.
Tensor mimax_total(const NceBatch& batch,
                   const std::map<Modality, PredictorParams>& predictors, double alpha,
                   double temperature);

}  // namespace dbf
