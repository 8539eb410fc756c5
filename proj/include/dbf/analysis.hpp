#pragma once

#include <string>
#include <vector>

#include "dbf/data.hpp"
#include "dbf/fusion.hpp"
#include "dbf/model.hpp"

namespace dbf {

struct Sharpness {
  double std_dev = 0.0;
  double norm_entropy = 0.0;  // in [0, 1]
};

// Population standard deviation and normalized entropy (-sum p ln p / ln L)
// of a saliency distribution (weights summing to 1, L >= 2). The extremes
// are exact: uniform -> (0, 1), one-hot -> entropy 0.
Sharpness sharpness_stats(const std::vector<double>& saliency);

// Per-visual-frame saliency from one forward pass, summing to 1.
// Bottleneck runs read the visual pass's bottleneck-query rows against
// frame keys at the chosen fusion layer; joint (vanilla) runs fall back to
// text-query rows against visual-key columns of the joint map. Layer index
// counts fusion layers (0-based); pass the default to use the final one.
std::vector<double> frame_saliency(const FusionOutput& output, const FusionStack& stack,
                                   size_t fusion_layer_index);
std::vector<double> frame_saliency(const FusionOutput& output, const FusionStack& stack);

struct SharpnessReport {
  std::string label;
  size_t n_samples = 0;
  size_t layer = 0;                 // fusion layer the headline stats use
  Sharpness mean_stats;             // per-sample stats averaged over samples
  std::vector<Sharpness> per_layer; // same aggregation per fusion layer
  std::vector<double> mean_saliency;  // across-sample mean, renormalized
};

// Evaluates the model over a dataset and aggregates per-sample saliency
// statistics. `layer` selects the fusion layer (defaults to the last).
SharpnessReport analyze_attention(const DbfModel& model, const Dataset& dataset,
                                  const std::string& label, long layer = -1);

std::string format_sharpness(const SharpnessReport& report);

}  // namespace dbf
