#pragma once

#include <string>
#include <vector>

#include "dbf/checkpoint.hpp"
#include "dbf/metrics.hpp"
#include "dbf/model.hpp"

namespace dbf {

// Linear ramp 0 -> peak over warmup_steps, constant afterwards. Step counts
// are 1-based at update time (step 0 sits at the ramp's origin).
double lr_schedule(size_t step, double peak_lr, size_t warmup_steps);

// Adam with bias correction; moment buffers aligned with a model's
// parameter registry, one shared step counter.
struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  size_t step = 0;

  static AdamState init(const std::vector<std::pair<std::string, Tensor>>& params);
};

// One update over every registered parameter, reading Tensor::grad. The two
// learning rates cover the new-module and backbone-equivalent groups. Throws
// on non-finite gradients, naming the parameter.
void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               double lr_new, double lr_backbone);

// Lowest-level single-group variant used by optimizer tests.
void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               double lr);

struct TrainResult {
  MetricsReport train_metrics;
  MetricsReport val_metrics;
  MetricsReport test_metrics;
  std::vector<std::string> log_lines;  // one per epoch
  size_t best_epoch = 0;
  double best_val_mae = 0.0;
  size_t epochs_run = 0;
};

// Full training run: Adam with warmup, dual learning-rate groups,
// per-epoch validation, early stopping on validation MAE, best-checkpoint
// restore. Deterministic under config.seed. Writes the best checkpoint to
// `checkpoint_path` when nonempty; leaves the best parameters in `model`
// when a model pointer is supplied.
TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set,
                  const Dataset& test_set, const std::string& checkpoint_path = "",
                  DbfModel* model_out = nullptr);

struct AblationCell {
  std::string label;
  TrainConfig config;
  bool failed = false;
  std::string error;
  MetricsReport median_test;           // per-field medians across seeds
  std::vector<MetricsReport> per_seed; // successful runs only
};

// The eight-row ablation matrix: full model, regularizer off, bottleneck
// off, each single-modality removal, and the two alternative center
// modalities. Per-cell failures are recorded, not fatal. When out_dir is
// nonempty, each run's checkpoint lands at <out_dir>/<label>_seed<k>.ckpt.
std::vector<AblationCell> run_ablation_matrix(const TrainConfig& base,
                                              const Dataset& train_set,
                                              const Dataset& val_set,
                                              const Dataset& test_set,
                                              const std::vector<uint64_t>& seeds,
                                              const std::string& out_dir = "");

// Per-field median across reports (average of the two middle values for
// even counts).
MetricsReport median_report(std::vector<MetricsReport> reports);

}  // namespace dbf
