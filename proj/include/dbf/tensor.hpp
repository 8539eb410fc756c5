#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dbf/common.hpp"
#include "dbf/rng.hpp"

namespace dbf {

inline constexpr size_t kNoNode = static_cast<size_t>(-1);

// Dense row-major float64 tensor. Copies are shallow handles sharing the
// same storage; detached() produces an untracked value copy. Rank is 1 or 2
// everywhere in this codebase (sequences x features, plus flat vectors and
// size-1 scalars).
struct Tensor {
  std::vector<size_t> shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  size_t node_id = kNoNode;  // tape node that produced this value

  Tensor() = default;

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<size_t> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<size_t> shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Entries i.i.d. normal(mean, stddev), row-major draw order.
  static Tensor randn(std::vector<size_t> shape, Rng& rng, double mean, double stddev,
                      bool requires_grad = false);

  bool defined() const { return static_cast<bool>(data); }
  size_t size() const { return data ? data->size() : 0; }
  size_t rank() const { return shape.size(); }
  // rows()/cols() view rank-1 tensors as a single row.
  size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  size_t cols() const { return shape.empty() ? 0 : shape.back(); }

  double& at(size_t i) { return (*data)[i]; }
  double at(size_t i) const { return (*data)[i]; }
  double& at(size_t r, size_t c) { return (*data)[r * cols() + c]; }
  double at(size_t r, size_t c) const { return (*data)[r * cols() + c]; }

  double scalar_value() const;
  std::string shape_str() const;

  void zero_grad();
  // Value-only copy: fresh storage, no grad, no tape link.
  Tensor detached() const;
};

// Append-only computation graph for one forward pass. Constructing a Tape
// makes it the active graph for the current thread (nesting allowed);
// destruction restores the previous one. Operations record a backward
// closure per node; backward() replays them in exact reverse append order,
// which also makes gradient accumulation order deterministic.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  size_t append(const char* tag, std::function<void()> fn);
  void run_backward();
  size_t size() const { return nodes_.size(); }
  const char* tag_of(size_t node_id) const;

 private:
  struct Node {
    const char* tag;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  Tape* previous_ = nullptr;
  bool used_ = false;
};

// Seeds d(loss)/d(loss) = 1 and replays the active tape backwards. The loss
// must be a size-1 tensor recorded on the active tape.
void backward(Tensor& loss);

// Throws NumericError naming `tag` if any element is NaN/Inf.
void ensure_finite(const Tensor& t, const char* tag);

// Boolean attention mask, row-major [rows x cols]; 1 = may attend.
// rows may be 1 to broadcast a single row pattern.
struct Mask {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<uint8_t> open;

  static Mask all_open(size_t rows, size_t cols);
  uint8_t at(size_t r, size_t c) const { return open[r * cols + c]; }
  uint8_t& at(size_t r, size_t c) { return open[r * cols + c]; }
};

// ---- differentiable operations ------------------------------------------
// Every op validates shapes, checks its output for finiteness, and (when a
// tape is active and an input is tracked) registers a backward closure.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// [m x k] * [k x n] -> [m x n]; a rank-1 [k] lhs is treated as [1 x k] and
// yields a rank-1 [n] result.
Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T for [m x k] and [n x k] -> [m x n].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// Broadcast-add `row` [d] to every row of x [n x d].
Tensor add_row(const Tensor& x, const Tensor& row);

Tensor gelu(const Tensor& x);  // exact erf form
Tensor abs_val(const Tensor& x);
Tensor sum_all(const Tensor& x);   // -> scalar
Tensor mean_all(const Tensor& x);  // -> scalar
Tensor mean_rows(const Tensor& x); // [n x d] -> [d]

Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, size_t begin, size_t count);
Tensor slice_cols(const Tensor& x, size_t begin, size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor stack_rows(const std::vector<Tensor>& rows);  // k vectors [d] -> [k x d]

// Per-row normalization over the last dimension followed by the affine map.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Row-wise softmax with hard exclusion of masked entries: masked positions
// get exactly 0 probability and contribute nothing to the denominator.
// A fully masked row is an error. Computed with max subtraction.
Tensor softmax_masked(const Tensor& logits, const Mask& mask);
Tensor softmax_rows(const Tensor& logits);

// Unit-norm scaling; throws on near-zero inputs (norm <= 1e-12).
Tensor l2_normalize(const Tensor& x);        // rank-1
Tensor l2_normalize_rows(const Tensor& x);   // rank-2, each row

// Inverted dropout with the keep mask drawn from `rng` at call time.
// rate == 0 returns the input unchanged.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// Softmax cross-entropy with diagonal targets over square logits [B x B],
// mean over rows: L = -(1/B) sum_i log softmax(S_i/tau)_i. Nonnegative by
// construction since the diagonal term is part of the denominator.
Tensor nce_logits_loss(const Tensor& logits, double temperature);

}  // namespace dbf
