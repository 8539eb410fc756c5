#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dbf/common.hpp"

namespace dbf {

struct MetricsReport {
  double mae = 0.0;
  double corr = 0.0;
  double acc7 = 0.0;
  double acc2_neg_nonneg = 0.0;  // negative vs non-negative, all samples
  double acc2_neg_pos = 0.0;     // negative vs positive, zero labels excluded
  double f1_neg_nonneg = 0.0;
  double f1_neg_pos = 0.0;
  size_t n = 0;
  bool corr_degenerate = false;  // zero-variance side; corr reported as 0
};

// Full metric suite over continuous predictions and labels in [-3, 3].
// Requires n >= 2 (Pearson undefined below that). Acc-7 clamps both sides
// to [-3, 3] and rounds half-away-from-zero to integer classes. F1 values
// are support-weighted averages over the two classes.
MetricsReport compute_metrics(const std::vector<double>& preds,
                              const std::vector<double>& labels);

// Flat "key value" lines, full float precision, stable ordering.
std::string format_metrics(const MetricsReport& report);

// %.17g rendering used by every report writer (round-trip exact).
std::string format_double(double v);

}  // namespace dbf
