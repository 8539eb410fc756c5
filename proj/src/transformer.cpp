#include "dbf/transformer.hpp"

#include <cmath>
#include <string>

namespace dbf {

namespace {
constexpr double kInitStd = 0.02;
}

EncoderLayerParams EncoderLayerParams::init(size_t d, size_t heads, Rng& rng) {
  if (heads == 0 || d % heads != 0)
    throw ConfigError("encoder layer: model dim " + std::to_string(d) +
                      " not divisible by head count " + std::to_string(heads));
  EncoderLayerParams p;
  p.d = d;
  p.heads = heads;
  p.wq = Tensor::randn({d, d}, rng, 0.0, kInitStd, true);
  p.wk = Tensor::randn({d, d}, rng, 0.0, kInitStd, true);
  p.wv = Tensor::randn({d, d}, rng, 0.0, kInitStd, true);
  p.wo = Tensor::randn({d, d}, rng, 0.0, kInitStd, true);
  p.w1 = Tensor::randn({d, 4 * d}, rng, 0.0, kInitStd, true);
  p.w2 = Tensor::randn({4 * d, d}, rng, 0.0, kInitStd, true);
  p.ln1_gain = Tensor::full({d}, 1.0, true);
  p.ln1_bias = Tensor::zeros({d}, true);
  p.ln2_gain = Tensor::full({d}, 1.0, true);
  p.ln2_bias = Tensor::zeros({d}, true);
  return p;
}

ModalityProjection ModalityProjection::init(size_t d_m, size_t d, size_t max_len, Rng& rng) {
  if (d_m == 0 || d == 0 || max_len == 0)
    throw ConfigError("modality projection: dims and max length must be positive");
  ModalityProjection p;
  p.d_m = d_m;
  p.d = d;
  p.max_len = max_len;
  p.weight = Tensor::randn({d_m, d}, rng, 0.0, kInitStd, true);
  p.bias = Tensor::zeros({d}, true);
  p.pos = Tensor::randn({max_len, d}, rng, 0.0, kInitStd, true);
  return p;
}

Tensor project_modality(const Tensor& x, const ModalityProjection& p) {
  if (x.rank() != 2 || x.cols() != p.d_m)
    throw ShapeError("project_modality: input " + x.shape_str() + " for feature dim " +
                     std::to_string(p.d_m));
  if (x.rows() > p.max_len)
    throw ShapeError("project_modality: sequence length " + std::to_string(x.rows()) +
                     " exceeds configured max " + std::to_string(p.max_len));
  Tensor h = add_row(matmul(x, p.weight), p.bias);
  return add(h, slice_rows(p.pos, 0, x.rows()));
}

std::pair<Tensor, AttentionRecord> multi_head_attention(const Tensor& q_in,
                                                        const Tensor& kv_in,
                                                        const Mask& mask,
                                                        const EncoderLayerParams& p,
                                                        size_t layer_index, char modality) {
  if (q_in.rank() != 2 || kv_in.rank() != 2 || q_in.cols() != p.d || kv_in.cols() != p.d)
    throw ShapeError("multi_head_attention: inputs " + q_in.shape_str() + ", " +
                     kv_in.shape_str() + " for model dim " + std::to_string(p.d));
  size_t l_q = q_in.rows(), l_k = kv_in.rows();
  if ((mask.rows != l_q && mask.rows != 1) || mask.cols != l_k)
    throw ShapeError("multi_head_attention: mask " + std::to_string(mask.rows) + "x" +
                     std::to_string(mask.cols) + " for " + std::to_string(l_q) + " queries, " +
                     std::to_string(l_k) + " keys");
  size_t dh = p.d / p.heads;
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = matmul(q_in, p.wq);
  Tensor k = matmul(kv_in, p.wk);
  Tensor v = matmul(kv_in, p.wv);

  AttentionRecord rec;
  rec.layer = layer_index;
  rec.modality = modality;
  rec.heads = p.heads;
  rec.l_q = l_q;
  rec.l_k = l_k;
  rec.weights = Tensor::zeros({p.heads * l_q, l_k});

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(p.heads);
  for (size_t h = 0; h < p.heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor att = softmax_masked(scale(matmul_nt(qh, kh), inv_scale), mask);
    for (size_t i = 0; i < l_q; ++i)
      for (size_t j = 0; j < l_k; ++j) rec.weights.at(h * l_q + i, j) = att.at(i, j);
    head_outputs.push_back(matmul(att, vh));
  }
  Tensor out = matmul(concat_cols(head_outputs), p.wo);
  return {out, rec};
}

std::pair<Tensor, AttentionRecord> encoder_layer(const Tensor& x, const Mask& mask,
                                                 const EncoderLayerParams& p,
                                                 size_t layer_index, char modality) {
  Tensor h1 = layer_norm(x, p.ln1_gain, p.ln1_bias, kLayerNormEps);
  auto [attn, rec] = multi_head_attention(h1, h1, mask, p, layer_index, modality);
  Tensor x1 = add(x, attn);
  Tensor h2 = layer_norm(x1, p.ln2_gain, p.ln2_bias, kLayerNormEps);
  Tensor ffn = matmul(gelu(matmul(h2, p.w1)), p.w2);
  return {add(x1, ffn), rec};
}

}  // namespace dbf
