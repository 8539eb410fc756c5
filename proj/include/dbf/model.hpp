#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dbf/config.hpp"
#include "dbf/data.hpp"
#include "dbf/fusion.hpp"
#include "dbf/gradcheck.hpp"
#include "dbf/heads.hpp"
#include "dbf/mimax.hpp"

namespace dbf {

// Full assembled model. `params` is the ordered name -> tensor registry
// (order fixed by construction, names stable across runs and checkpoints);
// the two learning-rate groups are disjoint name sets: projections and head
// form the backbone-equivalent group, everything else is new-module.
struct DbfModel {
  TrainConfig config;
  DatasetDims dims;
  FusionStack stack;
  RegressionHead head;
  std::map<Modality, PredictorParams> predictors;
  std::vector<std::pair<std::string, Tensor>> params;

  static DbfModel build(const TrainConfig& config, const DatasetDims& dims);

  FusionOutput fuse(const MultimodalSample& sample) const;
  const Tensor* find_param(const std::string& name) const;
  void zero_grads();
};

// True for parameters updated with lr_backbone (projections and head).
bool is_backbone_param(const std::string& name);

// Data-dependent bottleneck size guard, applied where a config meets a
// dataset (training entry points): 2 * bottleneck_length must not exceed
// any active modality's sequence length.
void check_bottleneck_guard(const TrainConfig& config, const DatasetDims& dims);

struct BatchOutput {
  Tensor preds;       // [B x 1]
  Tensor task_term;   // scalar: batch MAE
  Tensor mimax_term;  // scalar: alpha-weighted contrastive term
  Tensor total;       // task_term + mimax_term
  double nce_mean = 0.0;  // unweighted mean per-modality contrastive loss
  std::vector<FusionOutput> fusion;
};

// Forward over a batch under the caller's graph. `dropout_rng` is consumed
// only in training mode with a nonzero head dropout rate.
BatchOutput model_forward_batch(const DbfModel& model,
                                const std::vector<const MultimodalSample*>& batch,
                                const Tensor& labels, bool training, Rng& dropout_rng);

// Evaluation-mode predictions for a whole dataset (no graph, no dropout).
std::vector<double> model_predict(const DbfModel& model, const Dataset& dataset);

// Full-model gradient check: batch loss (training objective, dropout off)
// against central finite differences for every registered parameter.
GradCheckReport check_gradients(DbfModel& model,
                                const std::vector<const MultimodalSample*>& batch, double h);

}  // namespace dbf
