#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dbf/common.hpp"
#include "dbf/tensor.hpp"

namespace dbf {

// One aligned three-modality sample. Feature tensors are plain values
// (never tracked); label is a continuous score in [-3, 3].
struct MultimodalSample {
  std::string id;
  Tensor x_t;  // [l_t x d_t]
  Tensor x_v;  // [l_v x d_v]
  Tensor x_a;  // [l_a x d_a]
  double label = 0.0;

  const Tensor& features(Modality m) const {
    switch (m) {
      case Modality::text: return x_t;
      case Modality::visual: return x_v;
      default: return x_a;
    }
  }
};

struct DatasetDims {
  size_t l_t = 0, d_t = 0;
  size_t l_v = 0, d_v = 0;
  size_t l_a = 0, d_a = 0;

  size_t length(Modality m) const {
    switch (m) {
      case Modality::text: return l_t;
      case Modality::visual: return l_v;
      default: return l_a;
    }
  }
  size_t feature_dim(Modality m) const {
    switch (m) {
      case Modality::text: return d_t;
      case Modality::visual: return d_v;
      default: return d_a;
    }
  }
  bool operator==(const DatasetDims&) const = default;
};

struct Dataset {
  DatasetDims dims;
  std::vector<MultimodalSample> samples;

  size_t size() const { return samples.size(); }
  std::vector<double> labels() const;
};

// Generator spec: a latent score u ~ Uniform[-3,3] is planted across the
// three modalities with allocation weights (w_t, w_v, w_a); per-modality
// amplitude noise is constructed zero-sum (text balances visual+audio) so
// the full trio determines u exactly while every subset is noisy.
// redundancy_factor: fraction of visual frames overwritten as near-copies of
// their predecessor. frame_noise_dims: trailing feature dimensions of every
// modality filled with loud label-independent noise. misalignment_shift:
// circular rotation of the visual stream.
struct GenSpec {
  size_t n_samples = 0;
  size_t l_t = 20, d_t = 32;
  size_t l_v = 16, d_v = 47;
  size_t l_a = 16, d_a = 74;
  double redundancy_factor = 0.0;   // rho in [0, 1)
  size_t frame_noise_dims = 0;
  size_t misalignment_shift = 0;
  double w_t = 0.4, w_v = 0.4, w_a = 0.2;
  uint64_t seed = 0;

  void validate() const;
};

Dataset generate(const GenSpec& spec);

// JSON-lines interchange: a header record declaring dims, then one record
// per sample. Floats round-trip exactly.
void write_jsonl(const Dataset& dataset, const std::string& path);
Dataset read_jsonl(const std::string& path);

// Deterministic shuffled batching; the final short batch is dropped when it
// has fewer than 2 samples.
std::vector<std::vector<size_t>> batch_indices(size_t n, size_t batch_size,
                                               uint64_t shuffle_seed);

}  // namespace dbf
