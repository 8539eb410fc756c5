#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "dbf/tensor.hpp"
#include "support/oracles.hpp"

using dbf::Mask;
using dbf::Tensor;

namespace {

Tensor rand_tensor(std::vector<size_t> shape, dbf::Rng& rng, bool requires_grad = true) {
  size_t n = 1;
  for (size_t e : shape) n *= e;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// Runs forward() under a fresh tape, backpropagates, then compares every
// listed parameter's gradient against central finite differences.
double fd_check(const std::function<Tensor()>& forward, std::vector<Tensor> params,
                double h = 1e-5) {
  for (Tensor& p : params) p.zero_grad();
  {
    dbf::Tape tape;
    Tensor loss = forward();
    dbf::backward(loss);
  }
  auto eval = [&]() { return forward().scalar_value(); };
  double worst = 0.0;
  for (Tensor& p : params)
    worst = std::max(worst, oracle::max_grad_rel_err(eval, p, h));
  return worst;
}

}  // namespace

TEST_CASE("matmul identity") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor out = dbf::matmul(eye, m);
  for (size_t i = 0; i < 4; ++i) CHECK(out.at(i) == m.at(i));
}

TEST_CASE("matmul projector") {
  Tensor p = Tensor::from_data({2, 2}, {1, 0, 0, 0});
  Tensor v = Tensor::from_data({2, 1}, {5, 7});
  Tensor out = dbf::matmul(p, v);
  CHECK(out.at(0) == 5.0);
  CHECK(out.at(1) == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(dbf::matmul(a, b), dbf::ShapeError);
  try {
    dbf::matmul(a, b);
  } catch (const dbf::ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2 x 3]") != std::string::npos);
    CHECK(msg.find("[2 x 2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradients vs finite differences") {
  dbf::Rng rng(42);
  Tensor a = rand_tensor({3, 4}, rng);
  Tensor b = rand_tensor({4, 2}, rng);
  double worst = fd_check([&]() { return dbf::sum_all(dbf::matmul(a, b)); }, {a, b});
  CHECK(worst < 1e-4);
}

TEST_CASE("softmax symmetric two logits") {
  Tensor logits = Tensor::from_data({1, 2}, {0, 0});
  Tensor p = dbf::softmax_rows(logits);
  CHECK(p.at(0) == 0.5);
  CHECK(p.at(1) == 0.5);
}

TEST_CASE("softmax masked exclusion") {
  Tensor logits = Tensor::from_data({1, 3}, {5, 5, 5});
  Mask mask = Mask::all_open(1, 3);
  mask.at(0, 2) = 0;
  Tensor p = dbf::softmax_masked(logits, mask);
  CHECK(p.at(0) == 0.5);
  CHECK(p.at(1) == 0.5);
  CHECK(p.at(2) == 0.0);
}

TEST_CASE("softmax matches direct summation") {
  Tensor logits = Tensor::from_data({1, 3}, {1, 2, 3});
  Tensor p = dbf::softmax_rows(logits);
  std::vector<double> want = oracle::softmax({1, 2, 3});
  for (size_t i = 0; i < 3; ++i) CHECK(std::abs(p.at(i) - want[i]) < 1e-12);
}

TEST_CASE("softmax fully masked row is an error") {
  Tensor logits = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Mask mask = Mask::all_open(2, 2);
  mask.at(1, 0) = 0;
  mask.at(1, 1) = 0;
  CHECK_THROWS_AS(dbf::softmax_masked(logits, mask), dbf::NumericError);
}

TEST_CASE("softmax masked rows sum to one with zeros at masked slots") {
  dbf::Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor logits = rand_tensor({3, 5}, rng, false);
    Mask mask = Mask::all_open(3, 5);
    for (size_t r = 0; r < 3; ++r) {
      size_t keep = rng.below(5);
      for (size_t c = 0; c < 5; ++c)
        if (c != keep && rng.uniform() < 0.5) mask.at(r, c) = 0;
    }
    Tensor p = dbf::softmax_masked(logits, mask);
    for (size_t r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (size_t c = 0; c < 5; ++c) {
        if (!mask.at(r, c)) CHECK(p.at(r, c) == 0.0);
        CHECK(p.at(r, c) >= 0.0);
        sum += p.at(r, c);
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("layer norm constant row maps to zero") {
  Tensor x = Tensor::from_data({1, 3}, {4.2, 4.2, 4.2});
  Tensor gain = Tensor::full({3}, 1.0);
  Tensor bias = Tensor::zeros({3});
  Tensor y = dbf::layer_norm(x, gain, bias, 1e-5);
  for (size_t i = 0; i < 3; ++i) CHECK(y.at(i) == 0.0);
}

TEST_CASE("layer norm leaves a normalized row in place") {
  Tensor x = Tensor::from_data({1, 2}, {1, -1});
  Tensor gain = Tensor::full({2}, 1.0);
  Tensor bias = Tensor::zeros({2});
  Tensor y = dbf::layer_norm(x, gain, bias, 1e-12);
  CHECK(std::abs(y.at(0) - 1.0) < 1e-9);
  CHECK(std::abs(y.at(1) + 1.0) < 1e-9);
}

TEST_CASE("layer norm output statistics") {
  dbf::Rng rng(3);
  Tensor x = rand_tensor({1, 16}, rng, false);
  Tensor gain = Tensor::full({16}, 1.0);
  Tensor bias = Tensor::zeros({16});
  Tensor y = dbf::layer_norm(x, gain, bias, 1e-12);
  double mean = 0.0;
  for (size_t i = 0; i < 16; ++i) mean += y.at(i);
  mean /= 16.0;
  double var = 0.0;
  for (size_t i = 0; i < 16; ++i) var += (y.at(i) - mean) * (y.at(i) - mean);
  var /= 16.0;
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::abs(var - 1.0) < 1e-9);
}

TEST_CASE("l2 normalize three-four-five") {
  Tensor x = Tensor::from_data({2}, {3, 4});
  Tensor y = dbf::l2_normalize(x);
  CHECK(y.at(0) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(y.at(1) == doctest::Approx(0.8).epsilon(1e-14));
}

TEST_CASE("l2 normalize keeps unit vectors and unit norm") {
  Tensor e = Tensor::from_data({3}, {0, 1, 0});
  Tensor y = dbf::l2_normalize(e);
  CHECK(y.at(0) == 0.0);
  CHECK(y.at(1) == 1.0);
  CHECK(y.at(2) == 0.0);

  dbf::Rng rng(11);
  Tensor x = rand_tensor({16}, rng, false);
  Tensor n = dbf::l2_normalize(x);
  double norm = 0.0;
  for (size_t i = 0; i < 16; ++i) norm += n.at(i) * n.at(i);
  CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-12);
}

TEST_CASE("l2 normalize rejects near-zero vectors") {
  Tensor x = Tensor::from_data({2}, {0, 0});
  CHECK_THROWS_AS(dbf::l2_normalize(x), dbf::NumericError);
}

TEST_CASE("backward on a linear sum gives unit gradients") {
  Tensor w = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  {
    dbf::Tape tape;
    Tensor loss = dbf::sum_all(w);
    dbf::backward(loss);
  }
  for (size_t i = 0; i < 4; ++i) CHECK((*w.grad)[i] == 1.0);
}

TEST_CASE("backward on half the squared norm returns the weights") {
  Tensor w = Tensor::from_data({3}, {0.5, -1.25, 2.0}, true);
  {
    dbf::Tape tape;
    Tensor loss = dbf::scale(dbf::sum_all(dbf::mul(w, w)), 0.5);
    dbf::backward(loss);
  }
  for (size_t i = 0; i < 3; ++i) CHECK((*w.grad)[i] == w.at(i));
}

TEST_CASE("backward rejects non-scalar losses") {
  Tensor w = Tensor::from_data({2}, {1, 2}, true);
  dbf::Tape tape;
  Tensor y = dbf::mul(w, w);
  CHECK_THROWS_AS(dbf::backward(y), dbf::ShapeError);
}

TEST_CASE("backward is deterministic across identical graphs") {
  auto run = [](std::vector<double>& grads) {
    dbf::Rng rng(99);
    Tensor a = rand_tensor({4, 4}, rng);
    Tensor b = rand_tensor({4, 4}, rng);
    {
      dbf::Tape tape;
      Tensor y = dbf::gelu(dbf::matmul(a, b));
      Tensor loss = dbf::mean_all(dbf::mul(y, y));
      dbf::backward(loss);
    }
    grads.insert(grads.end(), a.grad->begin(), a.grad->end());
    grads.insert(grads.end(), b.grad->begin(), b.grad->end());
  };
  std::vector<double> first, second;
  run(first);
  run(second);
  REQUIRE(first.size() == second.size());
  CHECK(std::memcmp(first.data(), second.data(), first.size() * sizeof(double)) == 0);
}

TEST_CASE("gelu matches the exact erf form") {
  Tensor x = Tensor::from_data({4}, {-2.0, -0.5, 0.0, 1.5});
  Tensor y = dbf::gelu(x);
  for (size_t i = 0; i < 4; ++i)
    CHECK(std::abs(y.at(i) - oracle::gelu_exact(x.at(i))) < 1e-15);
}

TEST_CASE("non-finite op outputs abort with the op name") {
  Tensor huge = Tensor::full({2}, 1e200);
  try {
    dbf::mul(huge, huge);
    FAIL("expected NumericError");
  } catch (const dbf::NumericError& e) {
    CHECK(std::string(e.what()).find("mul") != std::string::npos);
  }
}

TEST_CASE("dropout zero rate is the identity and bad rates are rejected") {
  dbf::Rng rng(5);
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor same = dbf::dropout(x, 0.0, rng);
  for (size_t i = 0; i < 4; ++i) CHECK(same.at(i) == x.at(i));
  CHECK_THROWS_AS(dbf::dropout(x, 1.0, rng), dbf::ConfigError);
  CHECK_THROWS_AS(dbf::dropout(x, -0.1, rng), dbf::ConfigError);
}

TEST_CASE("dropout rescales kept entries") {
  dbf::Rng rng(17);
  Tensor x = Tensor::full({64}, 2.0);
  Tensor y = dbf::dropout(x, 0.25, rng);
  size_t kept = 0;
  for (size_t i = 0; i < 64; ++i) {
    if (y.at(i) != 0.0) {
      CHECK(y.at(i) == doctest::Approx(2.0 / 0.75).epsilon(1e-12));
      ++kept;
    }
  }
  CHECK(kept > 32);  // keep probability 0.75
  CHECK(kept < 64);
}

TEST_CASE("every differentiable op matches finite differences across seeds") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    dbf::Rng rng(seed * 7919 + 1);
    {
      Tensor a = rand_tensor({3, 4}, rng), b = rand_tensor({3, 4}, rng);
      CHECK(fd_check([&]() { return dbf::sum_all(dbf::add(a, b)); }, {a, b}) < 1e-4);
      CHECK(fd_check([&]() { return dbf::mean_all(dbf::sub(a, b)); }, {a, b}) < 1e-4);
      CHECK(fd_check([&]() { return dbf::sum_all(dbf::mul(a, b)); }, {a, b}) < 1e-4);
      CHECK(fd_check([&]() { return dbf::sum_all(dbf::scale(a, -1.7)); }, {a}) < 1e-4);
      CHECK(fd_check([&]() { return dbf::sum_all(dbf::abs_val(a)); }, {a}) < 1e-4);
      CHECK(fd_check([&]() { return dbf::sum_all(dbf::gelu(a)); }, {a}) < 1e-4);
      CHECK(fd_check([&]() { return dbf::sum_all(dbf::mean_rows(a)); }, {a}) < 1e-4);
    }
    {
      Tensor a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 2}, rng);
      Tensor c = rand_tensor({2, 4}, rng), row = rand_tensor({4}, rng);
      CHECK(fd_check([&]() { return dbf::sum_all(dbf::matmul(a, b)); }, {a, b}) < 1e-4);
      CHECK(fd_check([&]() { return dbf::sum_all(dbf::matmul_nt(a, c)); }, {a, c}) < 1e-4);
      CHECK(fd_check([&]() { return dbf::sum_all(dbf::add_row(a, row)); }, {a, row}) < 1e-4);
    }
    {
      Tensor a = rand_tensor({2, 3}, rng), b = rand_tensor({2, 3}, rng);
      CHECK(fd_check([&]() {
              return dbf::sum_all(dbf::slice_rows(dbf::concat_rows(a, b), 1, 2));
            },
                     {a, b}) < 1e-4);
      CHECK(fd_check([&]() {
              return dbf::sum_all(dbf::slice_cols(dbf::concat_cols({a, b}), 2, 3));
            },
                     {a, b}) < 1e-4);
    }
    {
      Tensor v1 = rand_tensor({3}, rng), v2 = rand_tensor({3}, rng);
      CHECK(fd_check([&]() {
              return dbf::mean_all(dbf::stack_rows({v1, v2}));
            },
                     {v1, v2}) < 1e-4);
      CHECK(fd_check([&]() { return dbf::sum_all(dbf::l2_normalize(v1)); }, {v1}) < 1e-4);
    }
    {
      Tensor x = rand_tensor({2, 6}, rng);
      Tensor gain = rand_tensor({6}, rng), bias = rand_tensor({6}, rng);
      Tensor weights = rand_tensor({2, 6}, rng, false);
      CHECK(fd_check([&]() {
              Tensor y = dbf::layer_norm(x, gain, bias, 1e-5);
              return dbf::sum_all(dbf::mul(y, weights));
            },
                     {x, gain, bias}) < 1e-4);
      CHECK(fd_check([&]() {
              return dbf::sum_all(dbf::mul(dbf::l2_normalize_rows(x), weights));
            },
                     {x}) < 1e-4);
      CHECK(fd_check([&]() {
              return dbf::sum_all(dbf::mul(dbf::softmax_rows(x), weights));
            },
                     {x}) < 1e-4);
      Mask mask = Mask::all_open(2, 6);
      mask.at(0, 1) = 0;
      mask.at(1, 4) = 0;
      CHECK(fd_check([&]() {
              return dbf::sum_all(dbf::mul(dbf::softmax_masked(x, mask), weights));
            },
                     {x}) < 1e-4);
    }
    {
      Tensor s = rand_tensor({4, 4}, rng);
      CHECK(fd_check([&]() { return dbf::nce_logits_loss(s, 0.8); }, {s}) < 1e-4);
    }
  }
}

TEST_CASE("slice and concat round trips preserve values") {
  dbf::Rng rng(21);
  Tensor x = rand_tensor({4, 5}, rng, false);
  Tensor top = dbf::slice_rows(x, 0, 2);
  Tensor bottom = dbf::slice_rows(x, 2, 2);
  Tensor back = dbf::concat_rows(top, bottom);
  for (size_t i = 0; i < x.size(); ++i) CHECK(back.at(i) == x.at(i));

  Tensor left = dbf::slice_cols(x, 0, 2);
  Tensor right = dbf::slice_cols(x, 2, 3);
  Tensor back2 = dbf::concat_cols({left, right});
  for (size_t i = 0; i < x.size(); ++i) CHECK(back2.at(i) == x.at(i));
}

TEST_CASE("mean and sum reductions agree with direct summation") {
  dbf::Rng rng(31);
  Tensor x = rand_tensor({3, 7}, rng, false);
  double total = 0.0;
  for (size_t i = 0; i < x.size(); ++i) total += x.at(i);
  CHECK(std::abs(dbf::sum_all(x).scalar_value() - total) < 1e-12);
  CHECK(std::abs(dbf::mean_all(x).scalar_value() - total / 21.0) < 1e-12);
  Tensor m = dbf::mean_rows(x);
  for (size_t c = 0; c < 7; ++c) {
    double col = (x.at(0, c) + x.at(1, c) + x.at(2, c)) / 3.0;
    CHECK(std::abs(m.at(c) - col) < 1e-12);
  }
}
