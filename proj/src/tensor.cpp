#include "dbf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <utility>

namespace dbf {

namespace {

size_t shape_count(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

thread_local Tape* g_current_tape = nullptr;

bool tape_tracking(std::initializer_list<const Tensor*> inputs) {
  if (Tape::current() == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad) return true;
  return false;
}

// Allocates the output gradient buffer before the backward closure captures
// the handle, so the closure always accumulates into live storage.
void mark_tracked(Tensor& out) {
  out.requires_grad = true;
  out.grad = std::make_shared<std::vector<double>>(out.data->size(), 0.0);
}

void record(Tensor& out, const char* tag, std::function<void()> fn) {
  out.node_id = Tape::current()->append(tag, std::move(fn));
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(std::vector<size_t> shape, bool requires_grad) {
  Tensor t;
  size_t n = shape_count(shape);
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<double>>(n, 0.0);
  if (requires_grad) {
    t.requires_grad = true;
    t.grad = std::make_shared<std::vector<double>>(n, 0.0);
  }
  return t;
}

Tensor Tensor::full(std::vector<size_t> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : *t.data) v = value;
  return t;
}

Tensor Tensor::from_data(std::vector<size_t> shape, std::vector<double> values,
                         bool requires_grad) {
  size_t n = shape_count(shape);
  if (values.size() != n)
    throw ShapeError("from_data: " + std::to_string(values.size()) +
                     " values for shape of size " + std::to_string(n));
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  if (requires_grad) {
    t.requires_grad = true;
    t.grad = std::make_shared<std::vector<double>>(n, 0.0);
  }
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<size_t> shape, Rng& rng, double mean, double stddev,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : *t.data) v = rng.normal(mean, stddev);
  return t;
}

double Tensor::scalar_value() const {
  if (size() != 1)
    throw ShapeError("scalar_value: tensor has shape " + shape_str());
  return (*data)[0];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? " x " : "") << shape[i];
  os << "]";
  return os.str();
}

void Tensor::zero_grad() {
  if (grad)
    for (double& g : *grad) g = 0.0;
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(*data);
  return t;
}

// ---- Tape -------------------------------------------------------------------

Tape::Tape() : previous_(g_current_tape) { g_current_tape = this; }

Tape::~Tape() { g_current_tape = previous_; }

Tape* Tape::current() { return g_current_tape; }

size_t Tape::append(const char* tag, std::function<void()> fn) {
  nodes_.push_back(Node{tag, std::move(fn)});
  return nodes_.size() - 1;
}

const char* Tape::tag_of(size_t node_id) const {
  return node_id < nodes_.size() ? nodes_[node_id].tag : "?";
}

void Tape::run_backward() {
  if (used_)
    throw NumericError("backward already run on this graph; rebuild the forward pass first");
  used_ = true;
  for (size_t i = nodes_.size(); i-- > 0;) nodes_[i].fn();
}

void backward(Tensor& loss) {
  if (Tape::current() == nullptr)
    throw NumericError("backward: no active graph");
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be a single value, got " + loss.shape_str());
  if (!loss.requires_grad || loss.node_id == kNoNode)
    throw NumericError("backward: loss is not connected to the active graph");
  (*loss.grad)[0] = 1.0;
  Tape::current()->run_backward();
}

void ensure_finite(const Tensor& t, const char* tag) {
  for (double v : *t.data)
    if (!std::isfinite(v))
      throw NumericError(std::string(tag) + ": non-finite value in result " + t.shape_str());
}

// ---- Mask -------------------------------------------------------------------

Mask Mask::all_open(size_t rows, size_t cols) {
  Mask m;
  m.rows = rows;
  m.cols = cols;
  m.open.assign(rows * cols, 1);
  return m;
}

// ---- elementwise ops ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw ShapeError("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = Tensor::zeros(a.shape);
  for (size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) + b.at(i);
  ensure_finite(out, "add");
  if (tape_tracking({&a, &b})) {
    mark_tracked(out);
    Tensor ca = a, cb = b, co = out;
    record(out, "add", [ca, cb, co]() {
      const std::vector<double>& go = *co.grad;
      if (ca.requires_grad)
        for (size_t i = 0; i < go.size(); ++i) (*ca.grad)[i] += go[i];
      if (cb.requires_grad)
        for (size_t i = 0; i < go.size(); ++i) (*cb.grad)[i] += go[i];
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw ShapeError("sub: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = Tensor::zeros(a.shape);
  for (size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) - b.at(i);
  ensure_finite(out, "sub");
  if (tape_tracking({&a, &b})) {
    mark_tracked(out);
    Tensor ca = a, cb = b, co = out;
    record(out, "sub", [ca, cb, co]() {
      const std::vector<double>& go = *co.grad;
      if (ca.requires_grad)
        for (size_t i = 0; i < go.size(); ++i) (*ca.grad)[i] += go[i];
      if (cb.requires_grad)
        for (size_t i = 0; i < go.size(); ++i) (*cb.grad)[i] -= go[i];
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw ShapeError("mul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = Tensor::zeros(a.shape);
  for (size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) * b.at(i);
  ensure_finite(out, "mul");
  if (tape_tracking({&a, &b})) {
    mark_tracked(out);
    Tensor ca = a, cb = b, co = out;
    record(out, "mul", [ca, cb, co]() {
      const std::vector<double>& go = *co.grad;
      if (ca.requires_grad)
        for (size_t i = 0; i < go.size(); ++i) (*ca.grad)[i] += go[i] * cb.at(i);
      if (cb.requires_grad)
        for (size_t i = 0; i < go.size(); ++i) (*cb.grad)[i] += go[i] * ca.at(i);
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape);
  for (size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) * s;
  ensure_finite(out, "scale");
  if (tape_tracking({&a})) {
    mark_tracked(out);
    Tensor ca = a, co = out;
    record(out, "scale", [ca, co, s]() {
      const std::vector<double>& go = *co.grad;
      for (size_t i = 0; i < go.size(); ++i) (*ca.grad)[i] += go[i] * s;
    });
  }
  return out;
}

// ---- matrix ops ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || a.rank() > 2 || b.rank() != 2)
    throw ShapeError("matmul: ranks " + a.shape_str() + " * " + b.shape_str());
  size_t m = a.rows(), k = a.cols(), n = b.shape[1];
  if (b.shape[0] != k)
    throw ShapeError("matmul: inner dim mismatch " + a.shape_str() + " * " + b.shape_str());
  Tensor out = Tensor::zeros(a.rank() == 1 ? std::vector<size_t>{n}
                                           : std::vector<size_t>{m, n});
  for (size_t i = 0; i < m; ++i)
    for (size_t p = 0; p < k; ++p) {
      double aip = a.at(i * k + p);
      if (aip == 0.0) continue;
      for (size_t j = 0; j < n; ++j) out.at(i * n + j) += aip * b.at(p * n + j);
    }
  ensure_finite(out, "matmul");
  if (tape_tracking({&a, &b})) {
    mark_tracked(out);
    Tensor ca = a, cb = b, co = out;
    record(out, "matmul", [ca, cb, co, m, k, n]() {
      const std::vector<double>& go = *co.grad;
      if (ca.requires_grad)
        for (size_t i = 0; i < m; ++i)
          for (size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (size_t j = 0; j < n; ++j) s += go[i * n + j] * cb.at(p * n + j);
            (*ca.grad)[i * k + p] += s;
          }
      if (cb.requires_grad)
        for (size_t i = 0; i < m; ++i)
          for (size_t p = 0; p < k; ++p) {
            double aip = ca.at(i * k + p);
            if (aip == 0.0) continue;
            for (size_t j = 0; j < n; ++j) (*cb.grad)[p * n + j] += aip * go[i * n + j];
          }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || a.rank() > 2 || b.rank() != 2)
    throw ShapeError("matmul_nt: ranks " + a.shape_str() + " * " + b.shape_str() + "^T");
  size_t m = a.rows(), k = a.cols(), n = b.shape[0];
  if (b.shape[1] != k)
    throw ShapeError("matmul_nt: inner dim mismatch " + a.shape_str() + " * " +
                     b.shape_str() + "^T");
  Tensor out = Tensor::zeros(a.rank() == 1 ? std::vector<size_t>{n}
                                           : std::vector<size_t>{m, n});
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (size_t p = 0; p < k; ++p) s += a.at(i * k + p) * b.at(j * k + p);
      out.at(i * n + j) = s;
    }
  ensure_finite(out, "matmul_nt");
  if (tape_tracking({&a, &b})) {
    mark_tracked(out);
    Tensor ca = a, cb = b, co = out;
    record(out, "matmul_nt", [ca, cb, co, m, k, n]() {
      const std::vector<double>& go = *co.grad;
      if (ca.requires_grad)
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) {
            double g = go[i * n + j];
            if (g == 0.0) continue;
            for (size_t p = 0; p < k; ++p) (*ca.grad)[i * k + p] += g * cb.at(j * k + p);
          }
      if (cb.requires_grad)
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) {
            double g = go[i * n + j];
            if (g == 0.0) continue;
            for (size_t p = 0; p < k; ++p) (*cb.grad)[j * k + p] += g * ca.at(i * k + p);
          }
    });
  }
  return out;
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  if (x.rank() != 2 || row.rank() != 1 || row.cols() != x.cols())
    throw ShapeError("add_row: " + x.shape_str() + " + " + row.shape_str());
  size_t n = x.rows(), d = x.cols();
  Tensor out = Tensor::zeros(x.shape);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) + row.at(j);
  ensure_finite(out, "add_row");
  if (tape_tracking({&x, &row})) {
    mark_tracked(out);
    Tensor cx = x, cr = row, co = out;
    record(out, "add_row", [cx, cr, co, n, d]() {
      const std::vector<double>& go = *co.grad;
      if (cx.requires_grad)
        for (size_t i = 0; i < go.size(); ++i) (*cx.grad)[i] += go[i];
      if (cr.requires_grad)
        for (size_t i = 0; i < n; ++i)
          for (size_t j = 0; j < d; ++j) (*cr.grad)[j] += go[i * d + j];
    });
  }
  return out;
}

// ---- nonlinearities --------------------------------------------------------------

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Tensor out = Tensor::zeros(x.shape);
  for (size_t i = 0; i < out.size(); ++i) {
    double v = x.at(i);
    out.at(i) = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  ensure_finite(out, "gelu");
  if (tape_tracking({&x})) {
    mark_tracked(out);
    Tensor cx = x, co = out;
    record(out, "gelu", [cx, co]() {
      const std::vector<double>& go = *co.grad;
      for (size_t i = 0; i < go.size(); ++i) {
        double v = cx.at(i);
        double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        (*cx.grad)[i] += go[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor abs_val(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape);
  for (size_t i = 0; i < out.size(); ++i) out.at(i) = std::fabs(x.at(i));
  ensure_finite(out, "abs_val");
  if (tape_tracking({&x})) {
    mark_tracked(out);
    Tensor cx = x, co = out;
    record(out, "abs_val", [cx, co]() {
      const std::vector<double>& go = *co.grad;
      for (size_t i = 0; i < go.size(); ++i) {
        double v = cx.at(i);
        double sign = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        (*cx.grad)[i] += go[i] * sign;
      }
    });
  }
  return out;
}

// ---- reductions --------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += x.at(i);
  Tensor out = Tensor::scalar(s);
  ensure_finite(out, "sum_all");
  if (tape_tracking({&x})) {
    mark_tracked(out);
    Tensor cx = x, co = out;
    record(out, "sum_all", [cx, co]() {
      double g = (*co.grad)[0];
      for (size_t i = 0; i < cx.size(); ++i) (*cx.grad)[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean_all: empty tensor");
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += x.at(i);
  double inv_n = 1.0 / static_cast<double>(x.size());
  Tensor out = Tensor::scalar(s * inv_n);
  ensure_finite(out, "mean_all");
  if (tape_tracking({&x})) {
    mark_tracked(out);
    Tensor cx = x, co = out;
    record(out, "mean_all", [cx, co, inv_n]() {
      double g = (*co.grad)[0] * inv_n;
      for (size_t i = 0; i < cx.size(); ++i) (*cx.grad)[i] += g;
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("mean_rows: need rank 2, got " + x.shape_str());
  size_t n = x.rows(), d = x.cols();
  if (n == 0) throw ShapeError("mean_rows: empty tensor");
  Tensor out = Tensor::zeros({d});
  double inv_n = 1.0 / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) out.at(j) += x.at(i, j) * inv_n;
  ensure_finite(out, "mean_rows");
  if (tape_tracking({&x})) {
    mark_tracked(out);
    Tensor cx = x, co = out;
    record(out, "mean_rows", [cx, co, n, d, inv_n]() {
      const std::vector<double>& go = *co.grad;
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) (*cx.grad)[i * d + j] += go[j] * inv_n;
    });
  }
  return out;
}

// ---- slicing and concatenation ---------------------------------------------------------

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw ShapeError("concat_rows: column mismatch " + a.shape_str() + " vs " + b.shape_str());
  size_t ra = a.rows(), rb = b.rows(), d = a.cols();
  Tensor out = Tensor::zeros({ra + rb, d});
  for (size_t i = 0; i < ra * d; ++i) out.at(i) = a.at(i);
  for (size_t i = 0; i < rb * d; ++i) out.at(ra * d + i) = b.at(i);
  ensure_finite(out, "concat_rows");
  if (tape_tracking({&a, &b})) {
    mark_tracked(out);
    Tensor ca = a, cb = b, co = out;
    record(out, "concat_rows", [ca, cb, co, ra, rb, d]() {
      const std::vector<double>& go = *co.grad;
      if (ca.requires_grad)
        for (size_t i = 0; i < ra * d; ++i) (*ca.grad)[i] += go[i];
      if (cb.requires_grad)
        for (size_t i = 0; i < rb * d; ++i) (*cb.grad)[i] += go[ra * d + i];
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, size_t begin, size_t count) {
  if (x.rank() != 2) throw ShapeError("slice_rows: need rank 2, got " + x.shape_str());
  if (begin + count > x.rows())
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + x.shape_str());
  size_t d = x.cols();
  Tensor out = Tensor::zeros({count, d});
  for (size_t i = 0; i < count * d; ++i) out.at(i) = x.at(begin * d + i);
  ensure_finite(out, "slice_rows");
  if (tape_tracking({&x})) {
    mark_tracked(out);
    Tensor cx = x, co = out;
    record(out, "slice_rows", [cx, co, begin, count, d]() {
      const std::vector<double>& go = *co.grad;
      for (size_t i = 0; i < count * d; ++i) (*cx.grad)[begin * d + i] += go[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, size_t begin, size_t count) {
  if (x.rank() != 2) throw ShapeError("slice_cols: need rank 2, got " + x.shape_str());
  if (begin + count > x.cols())
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + x.shape_str());
  size_t n = x.rows(), d = x.cols();
  Tensor out = Tensor::zeros({n, count});
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < count; ++j) out.at(i, j) = x.at(i, begin + j);
  ensure_finite(out, "slice_cols");
  if (tape_tracking({&x})) {
    mark_tracked(out);
    Tensor cx = x, co = out;
    record(out, "slice_cols", [cx, co, begin, count, n, d]() {
      const std::vector<double>& go = *co.grad;
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < count; ++j)
          (*cx.grad)[i * d + begin + j] += go[i * count + j];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  size_t n = parts[0].rows(), total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.rows() != n)
      throw ShapeError("concat_cols: row mismatch at part with shape " + p.shape_str());
    total += p.cols();
  }
  Tensor out = Tensor::zeros({n, total});
  size_t off = 0;
  for (const Tensor& p : parts) {
    size_t d = p.cols();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < d; ++j) out.at(i, off + j) = p.at(i, j);
    off += d;
  }
  ensure_finite(out, "concat_cols");
  bool tracked = false;
  if (Tape::current() != nullptr)
    for (const Tensor& p : parts)
      if (p.requires_grad) tracked = true;
  if (tracked) {
    mark_tracked(out);
    std::vector<Tensor> cp = parts;
    Tensor co = out;
    record(out, "concat_cols", [cp, co, n, total]() {
      const std::vector<double>& go = *co.grad;
      size_t off = 0;
      for (const Tensor& p : cp) {
        size_t d = p.cols();
        if (p.requires_grad)
          for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < d; ++j)
              (*p.grad)[i * d + j] += go[i * total + off + j];
        off += d;
      }
    });
  }
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  size_t d = rows[0].size();
  for (const Tensor& r : rows)
    if (r.rank() != 1 || r.size() != d)
      throw ShapeError("stack_rows: row with shape " + r.shape_str() + ", expected [" +
                       std::to_string(d) + "]");
  size_t k = rows.size();
  Tensor out = Tensor::zeros({k, d});
  for (size_t i = 0; i < k; ++i)
    for (size_t j = 0; j < d; ++j) out.at(i, j) = rows[i].at(j);
  ensure_finite(out, "stack_rows");
  bool tracked = false;
  if (Tape::current() != nullptr)
    for (const Tensor& r : rows)
      if (r.requires_grad) tracked = true;
  if (tracked) {
    mark_tracked(out);
    std::vector<Tensor> cr = rows;
    Tensor co = out;
    record(out, "stack_rows", [cr, co, d]() {
      const std::vector<double>& go = *co.grad;
      for (size_t i = 0; i < cr.size(); ++i)
        if (cr[i].requires_grad)
          for (size_t j = 0; j < d; ++j) (*cr[i].grad)[j] += go[i * d + j];
    });
  }
  return out;
}

// ---- normalization ---------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() != 2 && x.rank() != 1)
    throw ShapeError("layer_norm: need rank 1 or 2, got " + x.shape_str());
  size_t n = x.rows(), d = x.cols();
  if (gain.rank() != 1 || gain.size() != d || bias.rank() != 1 || bias.size() != d)
    throw ShapeError("layer_norm: affine params " + gain.shape_str() + ", " +
                     bias.shape_str() + " for feature dim " + std::to_string(d));
  if (!(eps > 0.0)) throw NumericError("layer_norm: eps must be positive");
  Tensor out = Tensor::zeros(x.shape);
  std::vector<double> xhat(n * d), inv_std(n);
  for (size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (size_t j = 0; j < d; ++j) mu += x.at(i * d + j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (size_t j = 0; j < d; ++j) {
      double c = x.at(i * d + j) - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (size_t j = 0; j < d; ++j) {
      double h = (x.at(i * d + j) - mu) * is;
      xhat[i * d + j] = h;
      out.at(i * d + j) = gain.at(j) * h + bias.at(j);
    }
  }
  ensure_finite(out, "layer_norm");
  if (tape_tracking({&x, &gain, &bias})) {
    mark_tracked(out);
    Tensor cx = x, cg = gain, cb = bias, co = out;
    record(out, "layer_norm",
           [cx, cg, cb, co, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)]() {
             const std::vector<double>& go = *co.grad;
             for (size_t i = 0; i < n; ++i) {
               double sum_dh = 0.0, sum_dh_h = 0.0;
               for (size_t j = 0; j < d; ++j) {
                 double dh = go[i * d + j] * cg.at(j);
                 sum_dh += dh;
                 sum_dh_h += dh * xhat[i * d + j];
               }
               double inv_d = 1.0 / static_cast<double>(d);
               if (cx.requires_grad)
                 for (size_t j = 0; j < d; ++j) {
                   double dh = go[i * d + j] * cg.at(j);
                   (*cx.grad)[i * d + j] +=
                       inv_std[i] *
                       (dh - sum_dh * inv_d - xhat[i * d + j] * sum_dh_h * inv_d);
                 }
               if (cg.requires_grad)
                 for (size_t j = 0; j < d; ++j)
                   (*cg.grad)[j] += go[i * d + j] * xhat[i * d + j];
               if (cb.requires_grad)
                 for (size_t j = 0; j < d; ++j) (*cb.grad)[j] += go[i * d + j];
             }
           });
  }
  return out;
}

namespace {

// Shared softmax core; `mask` may be null for fully open attention.
Tensor softmax_impl(const Tensor& logits, const Mask* mask, const char* tag) {
  if (logits.rank() != 2 && logits.rank() != 1)
    throw ShapeError(std::string(tag) + ": need rank 1 or 2, got " + logits.shape_str());
  size_t n = logits.rows(), m = logits.cols();
  if (mask != nullptr) {
    if (mask->cols != m || (mask->rows != n && mask->rows != 1))
      throw ShapeError(std::string(tag) + ": mask " + std::to_string(mask->rows) + "x" +
                       std::to_string(mask->cols) + " for logits " + logits.shape_str());
  }
  Tensor out = Tensor::zeros(logits.shape);
  for (size_t i = 0; i < n; ++i) {
    size_t mi = (mask != nullptr && mask->rows != 1) ? i : 0;
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < m; ++j) {
      if (mask != nullptr && mask->open[mi * m + j] == 0) continue;
      mx = std::max(mx, logits.at(i * m + j));
    }
    if (mx == -std::numeric_limits<double>::infinity())
      throw NumericError(std::string(tag) + ": fully masked row " + std::to_string(i));
    double z = 0.0;
    for (size_t j = 0; j < m; ++j) {
      if (mask != nullptr && mask->open[mi * m + j] == 0) continue;
      double e = std::exp(logits.at(i * m + j) - mx);
      out.at(i * m + j) = e;
      z += e;
    }
    for (size_t j = 0; j < m; ++j) out.at(i * m + j) /= z;
  }
  ensure_finite(out, tag);
  if (tape_tracking({&logits})) {
    mark_tracked(out);
    Tensor cx = logits, co = out;
    record(out, tag, [cx, co, n, m]() {
      const std::vector<double>& go = *co.grad;
      const std::vector<double>& p = *co.data;
      for (size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (size_t j = 0; j < m; ++j) dot += go[i * m + j] * p[i * m + j];
        for (size_t j = 0; j < m; ++j)
          (*cx.grad)[i * m + j] += p[i * m + j] * (go[i * m + j] - dot);
      }
    });
  }
  return out;
}

}  // namespace

Tensor softmax_masked(const Tensor& logits, const Mask& mask) {
  return softmax_impl(logits, &mask, "softmax_masked");
}

Tensor softmax_rows(const Tensor& logits) { return softmax_impl(logits, nullptr, "softmax"); }

namespace {

Tensor l2_normalize_impl(const Tensor& x, size_t n, size_t d, const char* tag) {
  Tensor out = Tensor::zeros(x.shape);
  std::vector<double> inv_norm(n);
  for (size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (size_t j = 0; j < d; ++j) s += x.at(i * d + j) * x.at(i * d + j);
    double norm = std::sqrt(s);
    if (norm <= 1e-12)
      throw NumericError(std::string(tag) + ": degenerate vector with norm " +
                         std::to_string(norm) + " at row " + std::to_string(i));
    inv_norm[i] = 1.0 / norm;
    for (size_t j = 0; j < d; ++j) out.at(i * d + j) = x.at(i * d + j) * inv_norm[i];
  }
  ensure_finite(out, tag);
  if (tape_tracking({&x})) {
    mark_tracked(out);
    Tensor cx = x, co = out;
    record(out, tag, [cx, co, n, d, inv_norm = std::move(inv_norm)]() {
      const std::vector<double>& go = *co.grad;
      const std::vector<double>& y = *co.data;
      for (size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (size_t j = 0; j < d; ++j) dot += go[i * d + j] * y[i * d + j];
        for (size_t j = 0; j < d; ++j)
          (*cx.grad)[i * d + j] += (go[i * d + j] - y[i * d + j] * dot) * inv_norm[i];
      }
    });
  }
  return out;
}

}  // namespace

Tensor l2_normalize(const Tensor& x) {
  if (x.rank() != 1) throw ShapeError("l2_normalize: need rank 1, got " + x.shape_str());
  return l2_normalize_impl(x, 1, x.size(), "l2_normalize");
}

Tensor l2_normalize_rows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("l2_normalize_rows: need rank 2, got " + x.shape_str());
  return l2_normalize_impl(x, x.rows(), x.cols(), "l2_normalize_rows");
}

// ---- stochastic -------------------------------------------------------------------------

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (rate == 0.0) return x;
  double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mult(x.size());
  for (size_t i = 0; i < x.size(); ++i)
    mult[i] = rng.uniform() >= rate ? keep_scale : 0.0;
  Tensor out = Tensor::zeros(x.shape);
  for (size_t i = 0; i < x.size(); ++i) out.at(i) = x.at(i) * mult[i];
  ensure_finite(out, "dropout");
  if (tape_tracking({&x})) {
    mark_tracked(out);
    Tensor cx = x, co = out;
    record(out, "dropout", [cx, co, mult = std::move(mult)]() {
      const std::vector<double>& go = *co.grad;
      for (size_t i = 0; i < go.size(); ++i) (*cx.grad)[i] += go[i] * mult[i];
    });
  }
  return out;
}

// ---- contrastive loss -------------------------------------------------------------------

Tensor nce_logits_loss(const Tensor& logits, double temperature) {
  if (logits.rank() != 2 || logits.rows() != logits.cols())
    throw ShapeError("nce_logits_loss: need square logits, got " + logits.shape_str());
  size_t b = logits.rows();
  if (b < 2)
    throw ShapeError("nce_logits_loss: need at least 2 rows for contrast, got " +
                     std::to_string(b));
  if (!(temperature > 0.0))
    throw NumericError("nce_logits_loss: temperature must be positive");
  std::vector<double> p(b * b);
  double loss = 0.0;
  for (size_t i = 0; i < b; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < b; ++j) mx = std::max(mx, logits.at(i, j) / temperature);
    double z = 0.0;
    for (size_t j = 0; j < b; ++j) {
      double e = std::exp(logits.at(i, j) / temperature - mx);
      p[i * b + j] = e;
      z += e;
    }
    for (size_t j = 0; j < b; ++j) p[i * b + j] /= z;
    loss -= std::log(p[i * b + i]);
  }
  loss /= static_cast<double>(b);
  Tensor out = Tensor::scalar(loss);
  ensure_finite(out, "nce_logits_loss");
  if (tape_tracking({&logits})) {
    mark_tracked(out);
    Tensor cx = logits, co = out;
    record(out, "nce_logits_loss", [cx, co, b, temperature, p = std::move(p)]() {
      double g = (*co.grad)[0] / (static_cast<double>(b) * temperature);
      for (size_t i = 0; i < b; ++i)
        for (size_t j = 0; j < b; ++j) {
          double delta = i == j ? 1.0 : 0.0;
          (*cx.grad)[i * b + j] += g * (p[i * b + j] - delta);
        }
    });
  }
  return out;
}

}  // namespace dbf
