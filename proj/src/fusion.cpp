#include "dbf/fusion.hpp"

#include <string>

namespace dbf {

BottleneckState init_bottleneck(size_t l_b, size_t d, uint64_t seed) {
  if (l_b == 0) throw ConfigError("init_bottleneck: need at least one bottleneck slot");
  if (d == 0) throw ConfigError("init_bottleneck: model dim must be positive");
  Rng rng(seed);
  BottleneckState state;
  state.b = Tensor::randn({l_b, d}, rng, 0.0, 0.02, true);
  state.layer = 0;
  return state;
}

FusionLayerResult fusion_layer(const std::vector<Tensor>& streams, const Tensor& b,
                               const std::vector<const EncoderLayerParams*>& params,
                               size_t layer_index, const std::vector<Modality>& modalities) {
  if (streams.empty() || streams.size() != params.size() || streams.size() != modalities.size())
    throw ShapeError("fusion_layer: " + std::to_string(streams.size()) + " streams, " +
                     std::to_string(params.size()) + " parameter sets, " +
                     std::to_string(modalities.size()) + " modality tags");
  size_t d = b.cols();
  if (b.rank() != 2)
    throw ShapeError("fusion_layer: bottleneck must be rank 2, got " + b.shape_str());
  size_t l_b = b.rows();

  FusionLayerResult result;
  std::vector<Tensor> b_views;
  for (size_t m = 0; m < streams.size(); ++m) {
    const Tensor& x = streams[m];
    if (x.rank() != 2 || x.cols() != d)
      throw ShapeError("fusion_layer: stream " + std::string(1, modality_tag(modalities[m])) +
                       " has shape " + x.shape_str() + ", bottleneck dim " + std::to_string(d));
    size_t l_m = x.rows();
    Tensor cat = concat_rows(x, b);
    Mask open = Mask::all_open(l_m + l_b, l_m + l_b);
    auto [out, rec] = encoder_layer(cat, open, *params[m], layer_index,
                                    modality_tag(modalities[m]));
    result.streams.push_back(slice_rows(out, 0, l_m));
    b_views.push_back(slice_rows(out, l_m, l_b));
    result.records.push_back(std::move(rec));
  }
  // Offset form of the elementwise mean: b0 + (sum of deltas)/k. Equivalent
  // in value and gradient, and exact (delta sums vanish) when the
  // per-modality views coincide.
  if (b_views.size() == 1) {
    result.b_next = b_views[0];
  } else {
    Tensor deltas = sub(b_views[1], b_views[0]);
    for (size_t m = 2; m < b_views.size(); ++m)
      deltas = add(deltas, sub(b_views[m], b_views[0]));
    result.b_next =
        add(b_views[0], scale(deltas, 1.0 / static_cast<double>(b_views.size())));
  }
  return result;
}

namespace {

// Shared front half of both pipelines: projection + N per-modality
// pre-encoder layers with self-attention inside the modality.
void run_front(const MultimodalSample& sample, const FusionStack& stack, FusionOutput& out,
               std::vector<Tensor>& streams) {
  if (stack.modalities.empty()) throw ConfigError("fusion: no active modalities");
  for (Modality m : stack.modalities) {
    const Tensor& raw = sample.features(m);
    Tensor x = project_modality(raw, stack.projections.at(m));
    out.projected[m] = x;
    const auto& pres = stack.pre_layers.at(m);
    for (size_t l = 0; l < pres.size(); ++l) {
      Mask open = Mask::all_open(x.rows(), x.rows());
      auto [nx, rec] = encoder_layer(x, open, pres[l], l, modality_tag(m));
      x = nx;
      out.records.push_back(std::move(rec));
    }
    streams.push_back(x);
  }
}

void finish_output(const FusionStack& stack, FusionOutput& out,
                   const std::vector<Tensor>& streams) {
  for (size_t m = 0; m < stack.modalities.size(); ++m)
    out.final_unimodal[stack.modalities[m]] = streams[m];
  out.z = out.final_unimodal.at(stack.center);
  out.pooled = mean_rows(out.z);
}

}  // namespace

FusionOutput fusion_forward(const MultimodalSample& sample, const FusionStack& stack) {
  if (!stack.bottleneck_on)
    throw ConfigError("fusion_forward: stack built without a bottleneck; use the joint pass");
  FusionOutput out;
  std::vector<Tensor> streams;
  run_front(sample, stack, out, streams);

  Tensor b = stack.bottleneck;
  for (size_t l = 0; l < stack.m_fusion; ++l) {
    std::vector<const EncoderLayerParams*> params;
    for (Modality m : stack.modalities) params.push_back(&stack.fusion_layers.at(m)[l]);
    FusionLayerResult layer =
        fusion_layer(streams, b, params, stack.n_pre + l, stack.modalities);
    streams = std::move(layer.streams);
    b = layer.b_next;
    for (AttentionRecord& r : layer.records) out.records.push_back(std::move(r));
  }
  finish_output(stack, out, streams);
  return out;
}

FusionOutput vanilla_fusion_forward(const MultimodalSample& sample, const FusionStack& stack) {
  if (stack.joint_layers.size() != stack.m_fusion)
    throw ConfigError("vanilla fusion: stack holds " +
                      std::to_string(stack.joint_layers.size()) + " joint layers, expected " +
                      std::to_string(stack.m_fusion));
  FusionOutput out;
  std::vector<Tensor> streams;
  run_front(sample, stack, out, streams);

  for (size_t l = 0; l < stack.m_fusion; ++l) {
    Tensor cat = streams[0];
    for (size_t m = 1; m < streams.size(); ++m) cat = concat_rows(cat, streams[m]);
    Mask open = Mask::all_open(cat.rows(), cat.rows());
    auto [joint, rec] = encoder_layer(cat, open, stack.joint_layers[l], stack.n_pre + l, 'j');
    out.records.push_back(std::move(rec));
    size_t offset = 0;
    for (size_t m = 0; m < streams.size(); ++m) {
      size_t l_m = streams[m].rows();
      streams[m] = slice_rows(joint, offset, l_m);
      offset += l_m;
    }
  }
  finish_output(stack, out, streams);
  return out;
}

}  // namespace dbf
