#include "dbf/model.hpp"

#include <cmath>

namespace dbf {

namespace {

// Fixed per-component seed streams: every component draws its parameters
// from its own derived stream, so adding or removing one component never
// shifts another's initialization.
constexpr uint64_t kProjStream = 1000;     // + modality
constexpr uint64_t kPreStream = 2000;      // + 4*layer + modality
constexpr uint64_t kFusionStream = 3000;   // + 4*layer + modality (3 = joint)
constexpr uint64_t kBottleneckStream = 4000;
constexpr uint64_t kHeadStream = 5000;
constexpr uint64_t kMimaxStream = 6000;    // + modality

void register_layer(std::vector<std::pair<std::string, Tensor>>& params,
                    const std::string& prefix, const EncoderLayerParams& layer) {
  params.emplace_back(prefix + ".attn.wq", layer.wq);
  params.emplace_back(prefix + ".attn.wk", layer.wk);
  params.emplace_back(prefix + ".attn.wv", layer.wv);
  params.emplace_back(prefix + ".attn.wo", layer.wo);
  params.emplace_back(prefix + ".ln1.gain", layer.ln1_gain);
  params.emplace_back(prefix + ".ln1.bias", layer.ln1_bias);
  params.emplace_back(prefix + ".ln2.gain", layer.ln2_gain);
  params.emplace_back(prefix + ".ln2.bias", layer.ln2_bias);
  params.emplace_back(prefix + ".ffn.w1", layer.w1);
  params.emplace_back(prefix + ".ffn.w2", layer.w2);
}

}  // namespace

bool is_backbone_param(const std::string& name) {
  return name.rfind("proj.", 0) == 0 || name.rfind("head.", 0) == 0;
}

DbfModel DbfModel::build(const TrainConfig& config, const DatasetDims& dims) {
  config.validate();
  DbfModel model;
  model.config = config;
  model.dims = dims;

  size_t d = config.fusion_dim;
  FusionStack& stack = model.stack;
  stack.d = d;
  stack.heads = kDefaultHeads;
  stack.n_pre = config.pre_layers;
  stack.m_fusion = config.fusion_layers;
  stack.l_b = config.bottleneck_length;
  stack.bottleneck_on = config.ablation.bottleneck_on;
  stack.modalities = config.ablation.use_modalities;
  stack.center = config.ablation.center_modality;

  auto mindex = [](Modality m) { return static_cast<uint64_t>(m); };

  for (Modality m : stack.modalities) {
    Rng rng(derive_seed(config.seed, kProjStream + mindex(m)));
    stack.projections[m] =
        ModalityProjection::init(dims.feature_dim(m), d, dims.length(m), rng);
  }
  for (Modality m : stack.modalities) {
    auto& layers = stack.pre_layers[m];
    for (size_t l = 0; l < stack.n_pre; ++l) {
      Rng rng(derive_seed(config.seed, kPreStream + 4 * l + mindex(m)));
      layers.push_back(EncoderLayerParams::init(d, stack.heads, rng));
    }
  }
  if (stack.bottleneck_on) {
    for (Modality m : stack.modalities) {
      auto& layers = stack.fusion_layers[m];
      for (size_t l = 0; l < stack.m_fusion; ++l) {
        Rng rng(derive_seed(config.seed, kFusionStream + 4 * l + mindex(m)));
        layers.push_back(EncoderLayerParams::init(d, stack.heads, rng));
      }
    }
    stack.bottleneck =
        init_bottleneck(stack.l_b, d, derive_seed(config.seed, kBottleneckStream)).b;
  } else {
    for (size_t l = 0; l < stack.m_fusion; ++l) {
      Rng rng(derive_seed(config.seed, kFusionStream + 4 * l + 3));
      stack.joint_layers.push_back(EncoderLayerParams::init(d, stack.heads, rng));
    }
  }
  {
    Rng rng(derive_seed(config.seed, kHeadStream));
    model.head = RegressionHead::init(d, 0.0, rng);
  }
  if (config.ablation.mimax_on) {
    for (Modality m : stack.modalities) {
      Rng rng(derive_seed(config.seed, kMimaxStream + mindex(m)));
      model.predictors[m] = PredictorParams::init(d, d, rng);
    }
  }

  // Registry order is fixed by construction and independent of seed.
  for (Modality m : stack.modalities) {
    std::string tag(1, modality_tag(m));
    model.params.emplace_back("proj." + tag + ".weight", stack.projections[m].weight);
    model.params.emplace_back("proj." + tag + ".bias", stack.projections[m].bias);
    model.params.emplace_back("proj." + tag + ".pos", stack.projections[m].pos);
  }
  for (Modality m : stack.modalities) {
    std::string tag(1, modality_tag(m));
    for (size_t l = 0; l < stack.n_pre; ++l)
      register_layer(model.params, "pre." + std::to_string(l) + "." + tag,
                     stack.pre_layers[m][l]);
  }
  if (stack.bottleneck_on) {
    for (size_t l = 0; l < stack.m_fusion; ++l)
      for (Modality m : stack.modalities)
        register_layer(model.params,
                       "fusion." + std::to_string(l) + "." + std::string(1, modality_tag(m)),
                       stack.fusion_layers[m][l]);
    model.params.emplace_back("bottleneck", stack.bottleneck);
  } else {
    for (size_t l = 0; l < stack.m_fusion; ++l)
      register_layer(model.params, "fusion." + std::to_string(l) + ".joint",
                     stack.joint_layers[l]);
  }
  model.params.emplace_back("head.w1", model.head.w1);
  model.params.emplace_back("head.w2", model.head.w2);
  for (auto& [m, pred] : model.predictors) {
    std::string tag(1, modality_tag(m));
    model.params.emplace_back("mimax." + tag + ".w1", pred.w1);
    model.params.emplace_back("mimax." + tag + ".w2", pred.w2);
  }
  return model;
}

FusionOutput DbfModel::fuse(const MultimodalSample& sample) const {
  return stack.bottleneck_on ? fusion_forward(sample, stack)
                             : vanilla_fusion_forward(sample, stack);
}

const Tensor* DbfModel::find_param(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return &t;
  return nullptr;
}

void DbfModel::zero_grads() {
  for (auto& [name, t] : params) t.zero_grad();
}

void check_bottleneck_guard(const TrainConfig& config, const DatasetDims& dims) {
  if (!config.ablation.bottleneck_on) return;
  for (Modality m : config.ablation.use_modalities) {
    size_t l_m = dims.length(m);
    if (2 * config.bottleneck_length > l_m)
      throw ConfigError("bottleneck_length " + std::to_string(config.bottleneck_length) +
                        " too large for " + modality_name(m) + " sequences of length " +
                        std::to_string(l_m) + " (need bottleneck_length <= length/2)");
  }
}

BatchOutput model_forward_batch(const DbfModel& model,
                                const std::vector<const MultimodalSample*>& batch,
                                const Tensor& labels, bool training, Rng& dropout_rng) {
  if (batch.empty()) throw ShapeError("model_forward_batch: empty batch");
  if (labels.size() != batch.size())
    throw ShapeError("model_forward_batch: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(batch.size()) + " samples");

  BatchOutput out;
  std::vector<Tensor> pooled_z;
  std::map<Modality, std::vector<Tensor>> pooled_x;
  bool want_mimax = model.config.ablation.mimax_on && model.config.alpha > 0.0;
  for (const MultimodalSample* s : batch) {
    FusionOutput fo = model.fuse(*s);
    pooled_z.push_back(fo.pooled);
    if (want_mimax)
      for (Modality m : model.stack.modalities)
        pooled_x[m].push_back(pool(fo.projected.at(m)));
    out.fusion.push_back(std::move(fo));
  }

  Tensor z_rows = stack_rows(pooled_z);
  out.preds = head_forward(z_rows, model.head, training, dropout_rng);
  out.task_term = mean_all(abs_val(sub(out.preds, labels)));

  if (want_mimax) {
    NceBatch nce;
    nce.z = z_rows;
    for (auto& [m, rows] : pooled_x) nce.x[m] = stack_rows(rows);
    out.mimax_term =
        mimax_total(nce, model.predictors, model.config.alpha, model.config.temperature);
    out.nce_mean = out.mimax_term.scalar_value() /
                   (model.config.alpha * static_cast<double>(model.predictors.size()));
  } else {
    out.mimax_term = Tensor::scalar(0.0);
  }
  out.total = add(out.task_term, out.mimax_term);
  return out;
}

std::vector<double> model_predict(const DbfModel& model, const Dataset& dataset) {
  std::vector<double> preds;
  preds.reserve(dataset.samples.size());
  for (const MultimodalSample& s : dataset.samples) {
    FusionOutput fo = model.fuse(s);
    preds.push_back(predict(fo, model.head));
  }
  return preds;
}

GradCheckReport check_gradients(DbfModel& model,
                                const std::vector<const MultimodalSample*>& batch, double h) {
  std::vector<double> label_vals;
  for (const MultimodalSample* s : batch) label_vals.push_back(s->label);
  Tensor labels = Tensor::from_data({label_vals.size(), 1}, label_vals);
  auto forward = [&]() {
    Rng unused(0);
    return model_forward_batch(model, batch, labels, false, unused).total;
  };
  return check_gradients(forward, model.params, h);
}

}  // namespace dbf
