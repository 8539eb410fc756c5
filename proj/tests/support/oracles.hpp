#pragma once

// Independent reference implementations used to cross-check the library.
// Everything here is written as direct, unoptimized summation over raw
// doubles so that agreement with the library is meaningful evidence.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "dbf/tensor.hpp"

namespace oracle {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / (std::abs(a) + std::abs(b) + 1e-12);
}

// Central finite differences of a scalar-valued callable with respect to one
// tensor's elements. The callable must re-run the full forward pass.
inline std::vector<double> fd_gradient(const std::function<double()>& eval, dbf::Tensor& param,
                                       double h) {
  std::vector<double> g(param.data->size());
  for (size_t i = 0; i < param.data->size(); ++i) {
    double keep = (*param.data)[i];
    (*param.data)[i] = keep + h;
    double up = eval();
    (*param.data)[i] = keep - h;
    double down = eval();
    (*param.data)[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Largest relative error between a tensor's accumulated grad and fd.
inline double max_grad_rel_err(const std::function<double()>& eval, dbf::Tensor& param,
                               double h) {
  std::vector<double> numeric = fd_gradient(eval, param, h);
  double worst = 0.0;
  for (size_t i = 0; i < numeric.size(); ++i)
    worst = std::max(worst, rel_err((*param.grad)[i], numeric[i]));
  return worst;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  double hi = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - hi);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

inline double normalized_entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h / std::log(static_cast<double>(p.size()));
}

inline double population_std(const std::vector<double>& p) {
  double mean = 0.0;
  for (double v : p) mean += v;
  mean /= static_cast<double>(p.size());
  double var = 0.0;
  for (double v : p) var += (v - mean) * (v - mean);
  var /= static_cast<double>(p.size());
  return std::sqrt(var);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / (std::sqrt(dot(a, a)) * std::sqrt(dot(b, b)));
}

// Direct InfoNCE over a row-major B x B similarity matrix: row i is scored
// against its diagonal entry.
inline double infonce(const std::vector<double>& s, size_t b, double tau) {
  double total = 0.0;
  for (size_t i = 0; i < b; ++i) {
    std::vector<double> row(b);
    for (size_t j = 0; j < b; ++j) row[j] = s[i * b + j] / tau;
    std::vector<double> p = softmax(row);
    total -= std::log(p[i]);
  }
  return total / static_cast<double>(b);
}

inline double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

struct MetricsOracle {
  double mae = 0, corr = 0, acc7 = 0, acc2_neg_nonneg = 0, acc2_neg_pos = 0;
  double f1_neg_nonneg = 0, f1_neg_pos = 0;
};

// F1 for a binary labeling over (pred_class, true_class) pairs, weighted by
// class support; empty classes contribute zero weight, 0/0 ratios read as 0.
inline double weighted_f1(const std::vector<int>& pred, const std::vector<int>& truth) {
  double f1_sum = 0.0;
  size_t n = truth.size();
  for (int cls : {0, 1}) {
    size_t tp = 0, fp = 0, fn = 0, support = 0;
    for (size_t i = 0; i < n; ++i) {
      if (truth[i] == cls) ++support;
      if (pred[i] == cls && truth[i] == cls) ++tp;
      if (pred[i] == cls && truth[i] != cls) ++fp;
      if (pred[i] != cls && truth[i] == cls) ++fn;
    }
    double precision = (tp + fp) == 0 ? 0.0 : double(tp) / double(tp + fp);
    double recall = (tp + fn) == 0 ? 0.0 : double(tp) / double(tp + fn);
    double f1 = (precision + recall) == 0.0 ? 0.0 : 2 * precision * recall / (precision + recall);
    f1_sum += f1 * (double(support) / double(n));
  }
  return f1_sum;
}

inline MetricsOracle metrics(const std::vector<double>& preds, const std::vector<double>& labels) {
  MetricsOracle r;
  size_t n = preds.size();
  for (size_t i = 0; i < n; ++i) r.mae += std::abs(preds[i] - labels[i]);
  r.mae /= double(n);

  double mp = 0, ml = 0;
  for (size_t i = 0; i < n; ++i) {
    mp += preds[i];
    ml += labels[i];
  }
  mp /= double(n);
  ml /= double(n);
  double cov = 0, vp = 0, vl = 0;
  for (size_t i = 0; i < n; ++i) {
    cov += (preds[i] - mp) * (labels[i] - ml);
    vp += (preds[i] - mp) * (preds[i] - mp);
    vl += (labels[i] - ml) * (labels[i] - ml);
  }
  r.corr = (vp == 0.0 || vl == 0.0) ? 0.0 : cov / (std::sqrt(vp) * std::sqrt(vl));

  auto bucket = [](double v) {
    return static_cast<int>(std::round(std::clamp(v, -3.0, 3.0)));
  };
  size_t hits = 0;
  for (size_t i = 0; i < n; ++i)
    if (bucket(preds[i]) == bucket(labels[i])) ++hits;
  r.acc7 = double(hits) / double(n);

  std::vector<int> p_nn(n), t_nn(n);
  for (size_t i = 0; i < n; ++i) {
    p_nn[i] = preds[i] < 0 ? 0 : 1;
    t_nn[i] = labels[i] < 0 ? 0 : 1;
  }
  size_t ok = 0;
  for (size_t i = 0; i < n; ++i)
    if (p_nn[i] == t_nn[i]) ++ok;
  r.acc2_neg_nonneg = double(ok) / double(n);
  r.f1_neg_nonneg = weighted_f1(p_nn, t_nn);

  std::vector<int> p_np, t_np;
  for (size_t i = 0; i < n; ++i) {
    if (labels[i] == 0.0) continue;
    p_np.push_back(preds[i] < 0 ? 0 : 1);
    t_np.push_back(labels[i] < 0 ? 0 : 1);
  }
  if (p_np.empty()) {
    r.acc2_neg_pos = 0.0;
    r.f1_neg_pos = 0.0;
  } else {
    size_t ok2 = 0;
    for (size_t i = 0; i < p_np.size(); ++i)
      if (p_np[i] == t_np[i]) ++ok2;
    r.acc2_neg_pos = double(ok2) / double(p_np.size());
    r.f1_neg_pos = weighted_f1(p_np, t_np);
  }
  return r;
}

// Ridge regression by normal equations with Gaussian elimination; rows are
// feature vectors (a constant 1 is appended internally for the intercept).
inline std::vector<double> ridge_fit(const std::vector<std::vector<double>>& rows,
                                     const std::vector<double>& y, double lambda) {
  size_t n = rows.size();
  size_t d = rows[0].size() + 1;
  std::vector<std::vector<double>> a(d, std::vector<double>(d + 1, 0.0));
  auto feature = [&](size_t i, size_t j) { return j < rows[i].size() ? rows[i][j] : 1.0; };
  for (size_t j = 0; j < d; ++j) {
    for (size_t k = 0; k < d; ++k) {
      double s = 0.0;
      for (size_t i = 0; i < n; ++i) s += feature(i, j) * feature(i, k);
      a[j][k] = s + (j == k ? lambda : 0.0);
    }
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += feature(i, j) * y[i];
    a[j][d] = s;
  }
  for (size_t col = 0; col < d; ++col) {
    size_t pivot = col;
    for (size_t r2 = col + 1; r2 < d; ++r2)
      if (std::abs(a[r2][col]) > std::abs(a[pivot][col])) pivot = r2;
    std::swap(a[col], a[pivot]);
    if (std::abs(a[col][col]) < 1e-12) throw std::runtime_error("singular normal equations");
    for (size_t r2 = 0; r2 < d; ++r2) {
      if (r2 == col) continue;
      double f = a[r2][col] / a[col][col];
      for (size_t k = col; k <= d; ++k) a[r2][k] -= f * a[col][k];
    }
  }
  std::vector<double> w(d);
  for (size_t j = 0; j < d; ++j) w[j] = a[j][d] / a[j][j];
  return w;
}

inline double ridge_mae(const std::vector<std::vector<double>>& rows,
                        const std::vector<double>& y, double lambda) {
  std::vector<double> w = ridge_fit(rows, y, lambda);
  double mae = 0.0;
  for (size_t i = 0; i < rows.size(); ++i) {
    double pred = w.back();
    for (size_t j = 0; j < rows[i].size(); ++j) pred += w[j] * rows[i][j];
    mae += std::abs(pred - y[i]);
  }
  return mae / static_cast<double>(rows.size());
}

// Unbatched per-head attention computed with plain loops directly from the
// projection matrices; used to cross-check the library's implementation.
struct NaiveAttention {
  std::vector<std::vector<double>> out;      // L_q rows of d
  std::vector<std::vector<double>> weights;  // heads*L_q rows of L_k
};

inline NaiveAttention naive_attention(const dbf::Tensor& q_in, const dbf::Tensor& kv_in,
                                      const dbf::Tensor& wq, const dbf::Tensor& wk,
                                      const dbf::Tensor& wv, const dbf::Tensor& wo,
                                      size_t heads) {
  size_t lq = q_in.rows(), lk = kv_in.rows(), d = q_in.cols();
  size_t dh = d / heads;
  auto matmul = [](const dbf::Tensor& x, const dbf::Tensor& w) {
    std::vector<std::vector<double>> y(x.rows(), std::vector<double>(w.cols(), 0.0));
    for (size_t i = 0; i < x.rows(); ++i)
      for (size_t k = 0; k < x.cols(); ++k)
        for (size_t j = 0; j < w.cols(); ++j) y[i][j] += x.at(i, k) * w.at(k, j);
    return y;
  };
  auto q = matmul(q_in, wq), k = matmul(kv_in, wk), v = matmul(kv_in, wv);
  NaiveAttention result;
  result.weights.assign(heads * lq, std::vector<double>(lk, 0.0));
  std::vector<std::vector<double>> concat(lq, std::vector<double>(d, 0.0));
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (size_t h = 0; h < heads; ++h) {
    for (size_t i = 0; i < lq; ++i) {
      std::vector<double> logits(lk, 0.0);
      for (size_t j = 0; j < lk; ++j)
        for (size_t c = 0; c < dh; ++c) logits[j] += q[i][h * dh + c] * k[j][h * dh + c] * scale;
      std::vector<double> p = softmax(logits);
      result.weights[h * lq + i] = p;
      for (size_t j = 0; j < lk; ++j)
        for (size_t c = 0; c < dh; ++c) concat[i][h * dh + c] += p[j] * v[j][h * dh + c];
    }
  }
  result.out.assign(lq, std::vector<double>(d, 0.0));
  for (size_t i = 0; i < lq; ++i)
    for (size_t k2 = 0; k2 < d; ++k2)
      for (size_t j = 0; j < d; ++j) result.out[i][j] += concat[i][k2] * wo.at(k2, j);
  return result;
}

// Mean over sequence positions of one modality tensor, as raw doubles.
inline std::vector<double> pool_rows(const std::vector<double>& flat, size_t rows, size_t cols) {
  std::vector<double> mean(cols, 0.0);
  for (size_t r = 0; r < rows; ++r)
    for (size_t c = 0; c < cols; ++c) mean[c] += flat[r * cols + c];
  for (double& v : mean) v /= static_cast<double>(rows);
  return mean;
}

}  // namespace oracle
