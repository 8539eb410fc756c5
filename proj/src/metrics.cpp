#include "dbf/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace dbf {

namespace {

double clamp3(double v) { return v < -3.0 ? -3.0 : (v > 3.0 ? 3.0 : v); }

int bucket7(double v) { return static_cast<int>(std::round(clamp3(v))); }

// Support-weighted two-class F1; `is_neg` classifies a value as the
// negative class. 0/0 ratios count as 0.
double weighted_f1(const std::vector<double>& preds, const std::vector<double>& labels,
                   const std::vector<size_t>& idx) {
  double f1_sum = 0.0;
  size_t total = idx.size();
  for (int cls = 0; cls < 2; ++cls) {
    // cls 0: negative class positive; cls 1: the complement.
    size_t tp = 0, fp = 0, fn = 0, support = 0;
    for (size_t i : idx) {
      bool label_in = (labels[i] < 0.0) == (cls == 0);
      bool pred_in = (preds[i] < 0.0) == (cls == 0);
      support += label_in;
      tp += label_in && pred_in;
      fp += !label_in && pred_in;
      fn += label_in && !pred_in;
    }
    double precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    double recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    f1_sum += f1 * static_cast<double>(support);
  }
  return total > 0 ? f1_sum / static_cast<double>(total) : 0.0;
}

}  // namespace

MetricsReport compute_metrics(const std::vector<double>& preds,
                              const std::vector<double>& labels) {
  if (preds.size() != labels.size())
    throw ShapeError("compute_metrics: " + std::to_string(preds.size()) +
                     " predictions vs " + std::to_string(labels.size()) + " labels");
  size_t n = preds.size();
  if (n < 2)
    throw NumericError("compute_metrics: correlation undefined for fewer than 2 samples");
  for (double y : labels)
    if (!(y >= -3.0 && y <= 3.0))
      throw NumericError("compute_metrics: label " + std::to_string(y) +
                         " outside [-3, 3]");

  MetricsReport r;
  r.n = n;

  double mae = 0.0;
  for (size_t i = 0; i < n; ++i) mae += std::fabs(preds[i] - labels[i]);
  r.mae = mae / static_cast<double>(n);

  double mp = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mp += preds[i];
    my += labels[i];
  }
  mp /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double spp = 0.0, syy = 0.0, spy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double dp = preds[i] - mp, dy = labels[i] - my;
    spp += dp * dp;
    syy += dy * dy;
    spy += dp * dy;
  }
  if (spp == 0.0 || syy == 0.0) {
    r.corr = 0.0;
    r.corr_degenerate = true;
  } else {
    r.corr = spy / std::sqrt(spp * syy);
  }

  size_t acc7_hits = 0;
  for (size_t i = 0; i < n; ++i) acc7_hits += bucket7(preds[i]) == bucket7(labels[i]);
  r.acc7 = static_cast<double>(acc7_hits) / static_cast<double>(n);

  std::vector<size_t> all_idx, nonzero_idx;
  for (size_t i = 0; i < n; ++i) {
    all_idx.push_back(i);
    if (labels[i] != 0.0) nonzero_idx.push_back(i);
  }
  size_t hits_a = 0;
  for (size_t i : all_idx) hits_a += (preds[i] < 0.0) == (labels[i] < 0.0);
  r.acc2_neg_nonneg = static_cast<double>(hits_a) / static_cast<double>(n);
  r.f1_neg_nonneg = weighted_f1(preds, labels, all_idx);

  if (nonzero_idx.empty()) {
    r.acc2_neg_pos = 0.0;
    r.f1_neg_pos = 0.0;
  } else {
    size_t hits_b = 0;
    for (size_t i : nonzero_idx) hits_b += (preds[i] < 0.0) == (labels[i] < 0.0);
    r.acc2_neg_pos = static_cast<double>(hits_b) / static_cast<double>(nonzero_idx.size());
    r.f1_neg_pos = weighted_f1(preds, labels, nonzero_idx);
  }
  return r;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_metrics(const MetricsReport& r) {
  std::ostringstream os;
  os << "n " << r.n << "\n";
  os << "mae " << format_double(r.mae) << "\n";
  os << "corr " << format_double(r.corr) << "\n";
  os << "corr_degenerate " << (r.corr_degenerate ? 1 : 0) << "\n";
  os << "acc7 " << format_double(r.acc7) << "\n";
  os << "acc2_neg_nonneg " << format_double(r.acc2_neg_nonneg) << "\n";
  os << "acc2_neg_pos " << format_double(r.acc2_neg_pos) << "\n";
  os << "f1_neg_nonneg " << format_double(r.f1_neg_nonneg) << "\n";
  os << "f1_neg_pos " << format_double(r.f1_neg_pos) << "\n";
  return os.str();
}

}  // namespace dbf
