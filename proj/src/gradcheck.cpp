#include "dbf/gradcheck.hpp"

#include <cmath>

#include "dbf/common.hpp"

namespace dbf {

GradCheckReport check_gradients(const std::function<Tensor()>& forward,
                                const std::vector<std::pair<std::string, Tensor>>& params,
                                double h) {
  if (!(h > 0.0) || h > 1e-3)
    throw ConfigError("check_gradients: step size must be in (0, 1e-3], got " +
                      std::to_string(h));

  for (const auto& [name, p] : params) {
    if (!p.requires_grad)
      throw ConfigError("check_gradients: parameter '" + name + "' does not track gradients");
    const_cast<Tensor&>(p).zero_grad();
  }

  // Analytic pass under its own graph.
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = forward();
    backward(loss);
  }
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) analytic.push_back(*p.grad);

  GradCheckReport report;
  double rel_sum = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& p = params[pi].second;
    GradCheckEntry entry;
    entry.name = params[pi].first;
    double entry_sum = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
      double saved = (*p.data)[i];
      (*p.data)[i] = saved + h;
      double plus = forward().scalar_value();
      (*p.data)[i] = saved - h;
      double minus = forward().scalar_value();
      (*p.data)[i] = saved;
      double numeric = (plus - minus) / (2.0 * h);
      double a = analytic[pi][i];
      double rel = std::fabs(a - numeric) / (std::fabs(a) + std::fabs(numeric) + 1e-12);
      entry_sum += rel;
      entry.max_rel = std::max(entry.max_rel, rel);
      if (rel > report.max_rel) {
        report.max_rel = rel;
        report.worst_param = entry.name;
      }
      rel_sum += rel;
      ++report.n_checked;
    }
    entry.mean_rel = p.size() ? entry_sum / static_cast<double>(p.size()) : 0.0;
    report.per_param.push_back(std::move(entry));
  }
  report.mean_rel = report.n_checked ? rel_sum / static_cast<double>(report.n_checked) : 0.0;
  return report;
}

}  // namespace dbf
