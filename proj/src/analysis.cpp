#include "dbf/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dbf/metrics.hpp"

namespace dbf {

Sharpness sharpness_stats(const std::vector<double>& saliency) {
  size_t l = saliency.size();
  if (l < 2)
    throw NumericError("sharpness_stats: undefined for fewer than 2 weights, got " +
                       std::to_string(l));
  double sum = 0.0;
  for (double p : saliency) {
    if (!(p >= 0.0)) throw NumericError("sharpness_stats: negative weight");
    sum += p;
  }
  if (std::fabs(sum - 1.0) > 1e-9)
    throw NumericError("sharpness_stats: weights sum to " + std::to_string(sum) +
                       ", expected 1");

  bool all_equal = true;
  for (double p : saliency) all_equal = all_equal && p == saliency[0];
  if (all_equal) return {0.0, 1.0};  // uniform: exact extremes

  double mean = sum / static_cast<double>(l);
  double var = 0.0, entropy = 0.0;
  for (double p : saliency) {
    var += (p - mean) * (p - mean);
    if (p > 0.0) entropy -= p * std::log(p);
  }
  var /= static_cast<double>(l);
  return {std::sqrt(var), entropy / std::log(static_cast<double>(l))};
}

namespace {

const AttentionRecord* find_record(const FusionOutput& out, size_t layer, char modality) {
  for (const AttentionRecord& r : out.records)
    if (r.layer == layer && r.modality == modality) return &r;
  return nullptr;
}

std::vector<double> renormalized(std::vector<double> w) {
  double s = 0.0;
  for (double v : w) s += v;
  if (s <= 0.0)
    throw NumericError("frame_saliency: attention mass over frames is zero");
  for (double& v : w) v /= s;
  return w;
}

}  // namespace

std::vector<double> frame_saliency(const FusionOutput& output, const FusionStack& stack,
                                   size_t fusion_layer_index) {
  bool has_visual = std::find(stack.modalities.begin(), stack.modalities.end(),
                              Modality::visual) != stack.modalities.end();
  if (!has_visual) throw ConfigError("frame_saliency: no visual modality in this run");
  if (fusion_layer_index >= stack.m_fusion)
    throw ConfigError("frame_saliency: fusion layer " + std::to_string(fusion_layer_index) +
                      " out of range (model has " + std::to_string(stack.m_fusion) + ")");
  size_t record_layer = stack.n_pre + fusion_layer_index;

  if (stack.bottleneck_on) {
    const AttentionRecord* rec = find_record(output, record_layer, 'v');
    if (rec == nullptr)
      throw NumericError("frame_saliency: no visual attention record at layer " +
                         std::to_string(record_layer));
    size_t l_v = rec->l_q - stack.l_b;  // queries cover [frames || bottleneck]
    std::vector<double> weights(l_v, 0.0);
    for (size_t h = 0; h < rec->heads; ++h)
      for (size_t q = l_v; q < rec->l_q; ++q)
        for (size_t k = 0; k < l_v; ++k) weights[k] += rec->at(h, q, k);
    return renormalized(std::move(weights));
  }

  const AttentionRecord* rec = find_record(output, record_layer, 'j');
  if (rec == nullptr)
    throw NumericError("frame_saliency: no joint attention record at layer " +
                       std::to_string(record_layer));
  bool has_text = std::find(stack.modalities.begin(), stack.modalities.end(),
                            Modality::text) != stack.modalities.end();
  if (!has_text)
    throw ConfigError("frame_saliency: joint fallback needs the text modality for queries");
  // Segment offsets follow modality order within the concatenation.
  size_t text_begin = 0, text_len = 0, vis_begin = 0, vis_len = 0, offset = 0;
  for (Modality m : stack.modalities) {
    size_t seg = output.final_unimodal.at(m).rows();
    if (m == Modality::text) {
      text_begin = offset;
      text_len = seg;
    }
    if (m == Modality::visual) {
      vis_begin = offset;
      vis_len = seg;
    }
    offset += seg;
  }
  std::vector<double> weights(vis_len, 0.0);
  for (size_t h = 0; h < rec->heads; ++h)
    for (size_t q = text_begin; q < text_begin + text_len; ++q)
      for (size_t k = 0; k < vis_len; ++k) weights[k] += rec->at(h, q, vis_begin + k);
  return renormalized(std::move(weights));
}

std::vector<double> frame_saliency(const FusionOutput& output, const FusionStack& stack) {
  return frame_saliency(output, stack, stack.m_fusion - 1);
}

SharpnessReport analyze_attention(const DbfModel& model, const Dataset& dataset,
                                  const std::string& label, long layer) {
  if (dataset.samples.empty())
    throw ConfigError("analyze_attention: empty dataset");
  size_t m_fusion = model.stack.m_fusion;
  size_t chosen = layer < 0 ? m_fusion - 1 : static_cast<size_t>(layer);
  if (chosen >= m_fusion)
    throw ConfigError("analyze_attention: layer " + std::to_string(layer) +
                      " out of range (model has " + std::to_string(m_fusion) +
                      " fusion layers)");

  SharpnessReport report;
  report.label = label;
  report.layer = chosen;
  report.n_samples = dataset.samples.size();
  report.per_layer.assign(m_fusion, Sharpness{});

  std::vector<double> saliency_sum;
  for (const MultimodalSample& s : dataset.samples) {
    FusionOutput out = model.fuse(s);
    for (size_t l = 0; l < m_fusion; ++l) {
      std::vector<double> sal = frame_saliency(out, model.stack, l);
      Sharpness st = sharpness_stats(sal);
      report.per_layer[l].std_dev += st.std_dev;
      report.per_layer[l].norm_entropy += st.norm_entropy;
      if (l == chosen) {
        if (saliency_sum.empty()) saliency_sum.assign(sal.size(), 0.0);
        for (size_t k = 0; k < sal.size(); ++k) saliency_sum[k] += sal[k];
      }
    }
  }
  double inv_n = 1.0 / static_cast<double>(report.n_samples);
  for (Sharpness& st : report.per_layer) {
    st.std_dev *= inv_n;
    st.norm_entropy *= inv_n;
  }
  report.mean_stats = report.per_layer[chosen];
  for (double& v : saliency_sum) v *= inv_n;
  double s = 0.0;
  for (double v : saliency_sum) s += v;
  for (double& v : saliency_sum) v /= s;
  report.mean_saliency = std::move(saliency_sum);
  return report;
}

std::string format_sharpness(const SharpnessReport& r) {
  std::ostringstream os;
  os << "label " << r.label << "\n";
  os << "n_samples " << r.n_samples << "\n";
  os << "layer " << r.layer << "\n";
  os << "std_dev " << format_double(r.mean_stats.std_dev) << "\n";
  os << "norm_entropy " << format_double(r.mean_stats.norm_entropy) << "\n";
  for (size_t l = 0; l < r.per_layer.size(); ++l) {
    os << "layer" << l << ".std_dev " << format_double(r.per_layer[l].std_dev) << "\n";
    os << "layer" << l << ".norm_entropy " << format_double(r.per_layer[l].norm_entropy)
       << "\n";
  }
  return os.str();
}

}  // namespace dbf
