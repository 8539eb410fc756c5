#pragma once

#include <utility>
#include <vector>

#include "dbf/common.hpp"
#include "dbf/rng.hpp"
#include "dbf/tensor.hpp"

namespace dbf {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr size_t kDefaultHeads = 4;

// One pre-norm encoder layer: x + Attn(LN(x)), then + FFN(LN(.)) with GELU.
// Attention and feed-forward paths are bias-free; the layer norms carry the
// affine parameters.
struct EncoderLayerParams {
  size_t d = 0;
  size_t heads = 0;
  Tensor wq, wk, wv, wo;      // [d x d] each; head h owns columns [h*dh, (h+1)*dh)
  Tensor w1, w2;              // [d x 4d], [4d x d]
  Tensor ln1_gain, ln1_bias;  // [d]
  Tensor ln2_gain, ln2_bias;  // [d]

  static EncoderLayerParams init(size_t d, size_t heads, Rng& rng);
};

// Post-softmax attention probabilities for one layer pass, kept as values
// (detached) for analysis. Head h's map lives in rows [h*l_q, (h+1)*l_q).
struct AttentionRecord {
  size_t layer = 0;
  char modality = '?';  // 't'/'v'/'a' per-modality pass, 'j' joint pass
  size_t heads = 0;
  size_t l_q = 0;
  size_t l_k = 0;
  Tensor weights;  // [heads*l_q x l_k]

  double at(size_t head, size_t q, size_t k) const {
    return weights.at(head * l_q + q, k);
  }
};

// Linear map d_m -> d plus a learned positional embedding per position.
struct ModalityProjection {
  size_t d_m = 0;
  size_t d = 0;
  size_t max_len = 0;
  Tensor weight;  // [d_m x d]
  Tensor bias;    // [d]
  Tensor pos;     // [max_len x d]

  static ModalityProjection init(size_t d_m, size_t d, size_t max_len, Rng& rng);
};

Tensor project_modality(const Tensor& x, const ModalityProjection& p);

// Scaled dot-product attention over h heads (scale 1/sqrt(d/h)); masked
// positions receive exactly zero probability. Mask rows must each keep at
// least one position open.
std::pair<Tensor, AttentionRecord> multi_head_attention(const Tensor& q_in,
                                                        const Tensor& kv_in,
                                                        const Mask& mask,
                                                        const EncoderLayerParams& p,
                                                        size_t layer_index = 0,
                                                        char modality = '?');

std::pair<Tensor, AttentionRecord> encoder_layer(const Tensor& x, const Mask& mask,
                                                 const EncoderLayerParams& p,
                                                 size_t layer_index = 0,
                                                 char modality = '?');

}  // namespace dbf
