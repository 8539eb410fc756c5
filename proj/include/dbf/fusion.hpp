#pragma once

#include <map>
#include <vector>

#include "dbf/common.hpp"
#include "dbf/data.hpp"
#include "dbf/tensor.hpp"
#include "dbf/transformer.hpp"

namespace dbf {

// Shared bottleneck embeddings at one layer boundary.
struct BottleneckState {
  Tensor b;  // [l_b x d]
  size_t layer = 0;
};

// Draws B^0 entries i.i.d. Gaussian(0, 0.02^2), deterministic under seed.
BottleneckState init_bottleneck(size_t l_b, size_t d, uint64_t seed);

// All parameters of the fusion pipeline: per-modality projections,
// per-modality pre-encoder stacks (depth N, self-attention within the
// modality), then M fusion layers. With the bottleneck enabled each fusion
// layer holds one encoder per modality, run over [X_m || B]; with it
// disabled each layer holds a single joint encoder over the full
// concatenation.
struct FusionStack {
  size_t d = 0;
  size_t heads = 0;
  size_t n_pre = 0;
  size_t m_fusion = 0;
  size_t l_b = 0;
  bool bottleneck_on = true;
  std::vector<Modality> modalities;  // active, in text/visual/audio order
  Modality center = Modality::text;

  std::map<Modality, ModalityProjection> projections;
  std::map<Modality, std::vector<EncoderLayerParams>> pre_layers;     // [N] each
  std::map<Modality, std::vector<EncoderLayerParams>> fusion_layers;  // [M] each
  std::vector<EncoderLayerParams> joint_layers;                       // [M], joint mode
  Tensor bottleneck;  // [l_b x d] trainable B^0
};

struct FusionOutput {
  Tensor z;        // [l_center x d], the center modality's final stream
  Tensor pooled;   // [d], positionwise mean of z
  std::vector<AttentionRecord> records;
  std::map<Modality, Tensor> final_unimodal;  // X_m at the last layer
  std::map<Modality, Tensor> projected;       // X_m right after projection
};

struct FusionLayerResult {
  std::vector<Tensor> streams;  // updated per-modality sequences
  Tensor b_next;                // mean of the per-modality bottleneck outputs
  std::vector<AttentionRecord> records;
};

// One fusion layer: per modality, encode [X_m || B] with fully open
// attention, split back into the updated stream and that modality's
// bottleneck view; the next shared bottleneck is the elementwise mean of
// the per-modality views. Cross-modal information therefore reaches other
// streams only at the NEXT layer.
FusionLayerResult fusion_layer(const std::vector<Tensor>& streams, const Tensor& b,
                               const std::vector<const EncoderLayerParams*>& params,
                               size_t layer_index, const std::vector<Modality>& modalities);

FusionOutput fusion_forward(const MultimodalSample& sample, const FusionStack& stack);

// Ablation baseline: each fusion layer is ONE encoder pass over the
// unrestricted concatenation of all active streams; Z is the center
// modality's segment of the output.
FusionOutput vanilla_fusion_forward(const MultimodalSample& sample, const FusionStack& stack);

}  // namespace dbf
