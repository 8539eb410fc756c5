#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dbf/tensor.hpp"

namespace dbf {

struct GradCheckEntry {
  std::string name;
  double max_rel = 0.0;
  double mean_rel = 0.0;
};

struct GradCheckReport {
  double max_rel = 0.0;
  double mean_rel = 0.0;  // mean over every checked scalar entry
  std::string worst_param;
  size_t n_checked = 0;
  std::vector<GradCheckEntry> per_param;
};

// Compares analytic gradients against central finite differences for every
// element of every named parameter. `forward` must be a pure function of the
// parameter values returning a scalar loss; it is called once under a fresh
// graph for the analytic pass and twice per element (no graph) for the
// numeric pass. Relative error per element:
//   |analytic - numeric| / (|analytic| + |numeric| + 1e-12)
// Requires h in (0, 1e-3].
GradCheckReport check_gradients(const std::function<Tensor()>& forward,
                                const std::vector<std::pair<std::string, Tensor>>& params,
                                double h);

}  // namespace dbf
