#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dbf/common.hpp"

namespace dbf {

struct AblationConfig {
  bool mimax_on = true;
  bool bottleneck_on = true;
  std::vector<Modality> use_modalities = {Modality::text, Modality::visual, Modality::audio};
  Modality center_modality = Modality::text;

  bool uses(Modality m) const;
};

// All training knobs. Defaults follow the reference sentiment configuration:
// batch 32, bottleneck length 2, 4 fusion layers, alpha 0.05, dual learning
// rates 2e-5 / 1e-4, fusion dim 128, patience 10.
struct TrainConfig {
  size_t batch_size = 32;
  size_t bottleneck_length = 2;
  size_t fusion_layers = 4;
  size_t pre_layers = 1;
  double alpha = 0.05;
  double lr_new = 2e-5;       // fusion stack, bottleneck, predictors
  double lr_backbone = 1e-4;  // input projections and head
  size_t warmup_steps = 0;    // 0 = auto: 10% of first-epoch steps
  size_t max_epochs = 50;
  size_t patience = 10;
  uint64_t seed = 0;
  size_t fusion_dim = 128;
  double temperature = 1.0;
  AblationConfig ablation;

  void validate() const;
};

// Strict JSON loader: exactly the TrainConfig field names; unknown keys are
// errors. Missing keys keep their defaults.
TrainConfig load_train_config(const std::string& path);
TrainConfig parse_train_config(const std::string& json_text, const std::string& origin);

// CLI-style override "key=value"; nested ablation fields use dotted keys
// such as "ablation.mimax_on=false". use_modalities takes a compact string,
// e.g. "ablation.use_modalities=tv".
void apply_override(TrainConfig& config, const std::string& assignment);

// Canonical JSON rendering (stable key order) for manifests and logs.
std::string train_config_to_json(const TrainConfig& config);

}  // namespace dbf
