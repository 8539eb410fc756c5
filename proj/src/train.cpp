#include "dbf/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

namespace dbf {

namespace {
constexpr uint64_t kShuffleStream = 0x5348554646ull;  // + epoch
constexpr uint64_t kDropoutStream = 0x44524F50ull;
}

double lr_schedule(size_t step, double peak_lr, size_t warmup_steps) {
  if (warmup_steps == 0 || step >= warmup_steps) return peak_lr;
  return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

AdamState AdamState::init(const std::vector<std::pair<std::string, Tensor>>& params) {
  AdamState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& [name, t] : params) {
    state.m.emplace_back(t.size(), 0.0);
    state.v.emplace_back(t.size(), 0.0);
  }
  return state;
}

void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               double lr_new, double lr_backbone) {
  if (state.m.size() != params.size())
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " parameters, model has " + std::to_string(params.size()));
  ++state.step;
  double t = static_cast<double>(state.step);
  double bc1 = 1.0 - std::pow(AdamState::beta1, t);
  double bc2 = 1.0 - std::pow(AdamState::beta2, t);
  for (size_t p = 0; p < params.size(); ++p) {
    auto& [name, tensor] = params[p];
    if (!tensor.grad)
      throw NumericError("adam_step: parameter '" + name + "' has no gradient buffer");
    double lr = is_backbone_param(name) ? lr_backbone : lr_new;
    std::vector<double>& g = *tensor.grad;
    std::vector<double>& m = state.m[p];
    std::vector<double>& v = state.v[p];
    for (size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw NumericError("adam_step: non-finite gradient in parameter '" + name + "'");
      m[i] = AdamState::beta1 * m[i] + (1.0 - AdamState::beta1) * g[i];
      v[i] = AdamState::beta2 * v[i] + (1.0 - AdamState::beta2) * g[i] * g[i];
      double m_hat = m[i] / bc1;
      double v_hat = v[i] / bc2;
      (*tensor.data)[i] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::eps);
    }
  }
}

void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               double lr) {
  adam_step(params, state, lr, lr);
}

namespace {

MetricsReport eval_split(const DbfModel& model, const Dataset& ds) {
  return compute_metrics(model_predict(model, ds), ds.labels());
}

std::vector<std::vector<double>> snapshot_params(const DbfModel& model) {
  std::vector<std::vector<double>> snap;
  snap.reserve(model.params.size());
  for (const auto& [name, t] : model.params) snap.push_back(*t.data);
  return snap;
}

void restore_params(DbfModel& model, const std::vector<std::vector<double>>& snap) {
  for (size_t i = 0; i < model.params.size(); ++i) *model.params[i].second.data = snap[i];
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set,
                  const Dataset& test_set, const std::string& checkpoint_path,
                  DbfModel* model_out) {
  config.validate();
  if (train_set.samples.empty() || val_set.samples.empty() || test_set.samples.empty())
    throw ConfigError("train: all three splits must be nonempty");
  if (!(val_set.dims == train_set.dims) || !(test_set.dims == train_set.dims))
    throw ConfigError("train: splits disagree on sequence dims");
  check_bottleneck_guard(config, train_set.dims);

  DbfModel model = DbfModel::build(config, train_set.dims);
  AdamState adam = AdamState::init(model.params);
  Rng dropout_rng(derive_seed(config.seed, kDropoutStream));

  size_t n = train_set.samples.size();
  size_t steps_per_epoch = batch_indices(n, config.batch_size, 0).size();
  if (steps_per_epoch == 0)
    throw ConfigError("train: training split too small for batch_size " +
                      std::to_string(config.batch_size));
  size_t warmup = config.warmup_steps > 0 ? config.warmup_steps : steps_per_epoch / 10;

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_snapshot;
  size_t epochs_since_best = 0;

  for (size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    auto batches =
        batch_indices(n, config.batch_size, derive_seed(config.seed, kShuffleStream + epoch));
    double loss_sum = 0.0, task_sum = 0.0, mimax_sum = 0.0, nce_sum = 0.0;
    size_t sample_count = 0;
    double lr_now = 0.0;
    for (size_t bi = 0; bi < batches.size(); ++bi) {
      const std::vector<size_t>& idx = batches[bi];
      std::vector<const MultimodalSample*> batch;
      std::vector<double> label_vals;
      for (size_t i : idx) {
        batch.push_back(&train_set.samples[i]);
        label_vals.push_back(train_set.samples[i].label);
      }
      Tensor labels = Tensor::from_data({label_vals.size(), 1}, label_vals);
      try {
        Tape tape;
        BatchOutput out = model_forward_batch(model, batch, labels, true, dropout_rng);
        model.zero_grads();
        backward(out.total);
        double scale_lr = lr_schedule(adam.step + 1, 1.0, warmup);
        adam_step(model.params, adam, config.lr_new * scale_lr,
                  config.lr_backbone * scale_lr);
        lr_now = config.lr_new * scale_lr;
        double b = static_cast<double>(idx.size());
        loss_sum += out.total.scalar_value() * b;
        task_sum += out.task_term.scalar_value() * b;
        mimax_sum += out.mimax_term.scalar_value() * b;
        nce_sum += out.nce_mean * b;
        sample_count += idx.size();
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " step " +
                           std::to_string(bi + 1) + ": " + e.what());
      }
    }

    MetricsReport val = eval_split(model, val_set);
    double denom = static_cast<double>(sample_count);
    std::ostringstream line;
    line << "epoch " << epoch << " train_loss " << format_double(loss_sum / denom)
         << " task " << format_double(task_sum / denom) << " mimax "
         << format_double(mimax_sum / denom) << " lr " << format_double(lr_now)
         << " val_mae " << format_double(val.mae) << " val_corr " << format_double(val.corr);
    if (model.config.ablation.mimax_on && model.config.alpha > 0.0) {
      double bound = std::log(static_cast<double>(config.batch_size)) - nce_sum / denom;
      line << " mi_bound " << format_double(bound);
    }
    result.log_lines.push_back(line.str());
    result.epochs_run = epoch;

    if (val.mae < best_val) {
      best_val = val.mae;
      best_snapshot = snapshot_params(model);
      result.best_epoch = epoch;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= config.patience) break;
    }
  }

  if (!best_snapshot.empty()) restore_params(model, best_snapshot);
  result.best_val_mae = best_val;
  result.train_metrics = eval_split(model, train_set);
  result.val_metrics = eval_split(model, val_set);
  result.test_metrics = eval_split(model, test_set);

  if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, model);
  if (model_out != nullptr) *model_out = std::move(model);
  return result;
}

MetricsReport median_report(std::vector<MetricsReport> reports) {
  if (reports.empty()) throw ConfigError("median_report: no reports");
  auto median_of = [&](auto field) {
    std::vector<double> vals;
    for (const MetricsReport& r : reports) vals.push_back(field(r));
    std::sort(vals.begin(), vals.end());
    size_t k = vals.size();
    return k % 2 == 1 ? vals[k / 2] : 0.5 * (vals[k / 2 - 1] + vals[k / 2]);
  };
  MetricsReport out;
  out.mae = median_of([](const MetricsReport& r) { return r.mae; });
  out.corr = median_of([](const MetricsReport& r) { return r.corr; });
  out.acc7 = median_of([](const MetricsReport& r) { return r.acc7; });
  out.acc2_neg_nonneg = median_of([](const MetricsReport& r) { return r.acc2_neg_nonneg; });
  out.acc2_neg_pos = median_of([](const MetricsReport& r) { return r.acc2_neg_pos; });
  out.f1_neg_nonneg = median_of([](const MetricsReport& r) { return r.f1_neg_nonneg; });
  out.f1_neg_pos = median_of([](const MetricsReport& r) { return r.f1_neg_pos; });
  out.n = reports.front().n;
  return out;
}

std::vector<AblationCell> run_ablation_matrix(const TrainConfig& base,
                                              const Dataset& train_set,
                                              const Dataset& val_set,
                                              const Dataset& test_set,
                                              const std::vector<uint64_t>& seeds,
                                              const std::string& out_dir) {
  if (seeds.size() < 3)
    throw ConfigError("run_ablation_matrix: need at least 3 seeds for medians, got " +
                      std::to_string(seeds.size()));

  using M = Modality;
  auto with = [&](auto mutate, const char* label) {
    TrainConfig cfg = base;
    mutate(cfg);
    AblationCell cell;
    cell.label = label;
    cell.config = cfg;
    return cell;
  };
  std::vector<AblationCell> cells;
  cells.push_back(with([](TrainConfig&) {}, "full"));
  cells.push_back(with([](TrainConfig& c) { c.ablation.mimax_on = false; }, "-mimax"));
  cells.push_back(with([](TrainConfig& c) { c.ablation.bottleneck_on = false; }, "-bottleneck"));
  cells.push_back(with(
      [](TrainConfig& c) {
        c.ablation.use_modalities = {M::visual, M::audio};
        c.ablation.center_modality = M::visual;
      },
      "-language"));
  cells.push_back(with(
      [](TrainConfig& c) { c.ablation.use_modalities = {M::text, M::audio}; }, "-visual"));
  cells.push_back(with(
      [](TrainConfig& c) { c.ablation.use_modalities = {M::text, M::visual}; }, "-audio"));
  cells.push_back(with(
      [](TrainConfig& c) { c.ablation.center_modality = M::visual; }, "visual-based"));
  cells.push_back(with(
      [](TrainConfig& c) { c.ablation.center_modality = M::audio; }, "audio-based"));

  for (AblationCell& cell : cells) {
    for (uint64_t seed : seeds) {
      TrainConfig cfg = cell.config;
      cfg.seed = seed;
      std::string ckpt;
      if (!out_dir.empty())
        ckpt = (std::filesystem::path(out_dir) /
                (cell.label + "_seed" + std::to_string(seed) + ".ckpt"))
                   .string();
      try {
        TrainResult run = train(cfg, train_set, val_set, test_set, ckpt);
        cell.per_seed.push_back(run.test_metrics);
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error += (cell.error.empty() ? "" : "; ");
        cell.error += "seed " + std::to_string(seed) + ": " + e.what();
      }
    }
    if (!cell.per_seed.empty()) cell.median_test = median_report(cell.per_seed);
  }
  return cells;
}

}  // namespace dbf
