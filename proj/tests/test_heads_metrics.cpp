#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include "dbf/gradcheck.hpp"
#include "dbf/heads.hpp"
#include "dbf/metrics.hpp"
#include "dbf/tensor.hpp"
#include "support/oracles.hpp"

using dbf::MetricsReport;
using dbf::RegressionHead;
using dbf::Tensor;

TEST_CASE("a zero-weight head predicts zero everywhere") {
  dbf::Rng rng(1);
  RegressionHead head = RegressionHead::init(8, 0.0, rng);
  for (double& v : *head.w1.data) v = 0.0;
  for (double& v : *head.w2.data) v = 0.0;
  Tensor pooled = Tensor::randn({5, 8}, rng, 0.0, 1.0);
  Tensor preds = head_forward(pooled, head, false, rng);
  CHECK(preds.rows() == 5);
  CHECK(preds.cols() == 1);
  for (size_t i = 0; i < 5; ++i) CHECK(preds.at(i) == 0.0);
}

TEST_CASE("evaluation mode ignores the random stream") {
  dbf::Rng init_rng(2);
  RegressionHead head = RegressionHead::init(6, 0.5, init_rng);
  Tensor pooled = Tensor::randn({4, 6}, init_rng, 0.0, 1.0);
  dbf::Rng a(10), b(999);
  Tensor pa = head_forward(pooled, head, false, a);
  Tensor pb = head_forward(pooled, head, false, b);
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa.at(i) == pb.at(i));
  // In training mode with dropout on, different streams disagree somewhere.
  dbf::Rng c(10), d(999);
  Tensor pc = head_forward(pooled, head, true, c);
  Tensor pd = head_forward(pooled, head, true, d);
  bool any_diff = false;
  for (size_t i = 0; i < pc.size(); ++i) any_diff = any_diff || pc.at(i) != pd.at(i);
  CHECK(any_diff);
}

TEST_CASE("single-sample prediction matches the batched pass") {
  dbf::Rng rng(3);
  RegressionHead head = RegressionHead::init(8, 0.0, rng);
  dbf::FusionOutput fusion;
  fusion.pooled = Tensor::randn({8}, rng, 0.0, 1.0);
  double single = dbf::predict(fusion, head);
  Tensor row = dbf::stack_rows({fusion.pooled});
  dbf::Rng unused(0);
  double batched = head_forward(row, head, false, unused).scalar_value();
  CHECK(single == batched);

  dbf::FusionOutput empty;
  CHECK_THROWS_AS(dbf::predict(empty, head), dbf::ShapeError);
}

TEST_CASE("the task loss is the mean absolute error plus the regularizer") {
  Tensor zero = Tensor::scalar(0.0);
  Tensor exact = dbf::task_loss(Tensor::from_data({2, 1}, {1.0, 2.0}),
                                Tensor::from_data({2, 1}, {1.0, 2.0}), zero);
  CHECK(exact.scalar_value() == 0.0);

  Tensor one = dbf::task_loss(Tensor::from_data({2, 1}, {2.0, 0.0}),
                              Tensor::from_data({2, 1}, {1.0, 1.0}), zero);
  CHECK(one.scalar_value() == 1.0);

  Tensor shifted = dbf::task_loss(Tensor::from_data({2, 1}, {2.0, 0.0}),
                                  Tensor::from_data({2, 1}, {1.0, 1.0}),
                                  Tensor::scalar(0.25));
  CHECK(shifted.scalar_value() == 1.25);
}

TEST_CASE("the total decomposes into its two terms") {
  dbf::Rng rng(4);
  Tensor preds = Tensor::randn({6, 1}, rng, 0.0, 1.0);
  Tensor labels = Tensor::randn({6, 1}, rng, 0.0, 1.0);
  Tensor reg = Tensor::scalar(0.3721);
  double total = dbf::task_loss(preds, labels, reg).scalar_value();
  double mae_only = dbf::task_loss(preds, labels, Tensor::scalar(0.0)).scalar_value();
  CHECK(total == mae_only + 0.3721);
}

TEST_CASE("the task loss guards its shapes") {
  Tensor zero = Tensor::scalar(0.0);
  CHECK_THROWS_AS(dbf::task_loss(Tensor::from_data({2, 1}, {1, 2}),
                                 Tensor::from_data({3, 1}, {1, 2, 3}), zero),
                  dbf::ShapeError);
  CHECK_THROWS_AS(dbf::task_loss(Tensor::from_data({2, 1}, {1, 2}),
                                 Tensor::from_data({2, 1}, {1, 2}),
                                 Tensor::from_data({2}, {0, 0})),
                  dbf::ShapeError);
}

TEST_CASE("head parameters pass a gradient check through the loss") {
  dbf::Rng rng(5);
  RegressionHead head = RegressionHead::init(8, 0.0, rng);
  for (double& v : *head.w1.data) v = rng.uniform(-0.5, 0.5);
  for (double& v : *head.w2.data) v = rng.uniform(-0.5, 0.5);
  Tensor pooled = Tensor::randn({4, 8}, rng, 0.0, 1.0, true);
  // Labels far from any attainable prediction keep |pred - label| away from
  // its kink at zero, where central differences would mislead.
  Tensor labels = Tensor::from_data({4, 1}, {2.5, -2.5, 2.5, -2.5});
  auto forward = [&]() {
    dbf::Rng unused(0);
    Tensor preds = head_forward(pooled, head, false, unused);
    return dbf::task_loss(preds, labels, Tensor::scalar(0.0));
  };
  dbf::GradCheckReport report = dbf::check_gradients(
      forward, {{"w1", head.w1}, {"w2", head.w2}, {"pooled", pooled}}, 1e-5);
  CHECK(report.max_rel < 1e-4);
}

TEST_CASE("head construction rejects bad settings") {
  dbf::Rng rng(6);
  CHECK_THROWS_AS(RegressionHead::init(1, 0.0, rng), dbf::ConfigError);
  CHECK_THROWS_AS(RegressionHead::init(8, -0.1, rng), dbf::ConfigError);
  CHECK_THROWS_AS(RegressionHead::init(8, 1.0, rng), dbf::ConfigError);
}

TEST_CASE("perfect predictions score perfectly") {
  std::vector<double> labels = {-2.5, -1.0, 0.0, 0.5, 1.5, 3.0};
  MetricsReport r = dbf::compute_metrics(labels, labels);
  CHECK(r.mae == 0.0);
  CHECK(std::abs(r.corr - 1.0) < 1e-12);
  CHECK(r.acc7 == 1.0);
  CHECK(r.acc2_neg_nonneg == 1.0);
  CHECK(r.acc2_neg_pos == 1.0);
  CHECK(r.f1_neg_nonneg == 1.0);
  CHECK(r.f1_neg_pos == 1.0);
  CHECK(r.n == 6);
  CHECK(!r.corr_degenerate);
}

TEST_CASE("correlation is invariant to positive affine maps of predictions") {
  dbf::Rng rng(7);
  std::vector<double> preds(40), labels(40);
  for (double& v : preds) v = rng.uniform(-3.0, 3.0);
  for (double& v : labels) v = rng.uniform(-3.0, 3.0);
  MetricsReport base = dbf::compute_metrics(preds, labels);
  std::vector<double> mapped(40);
  for (size_t i = 0; i < 40; ++i) mapped[i] = 1.7 * preds[i] + 0.4;
  MetricsReport shifted = dbf::compute_metrics(mapped, labels);
  CHECK(std::abs(base.corr - shifted.corr) < 1e-12);
}

TEST_CASE("the full suite matches an independent implementation") {
  dbf::Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> preds(50), labels(50);
    for (double& v : preds) v = rng.uniform(-4.0, 4.0);  // may exceed the label range
    for (double& v : labels) v = rng.uniform(-3.0, 3.0);
    MetricsReport r = dbf::compute_metrics(preds, labels);
    oracle::MetricsOracle o = oracle::metrics(preds, labels);
    CHECK(std::abs(r.mae - o.mae) < 1e-9);
    CHECK(std::abs(r.corr - o.corr) < 1e-9);
    CHECK(std::abs(r.acc7 - o.acc7) < 1e-9);
    CHECK(std::abs(r.acc2_neg_nonneg - o.acc2_neg_nonneg) < 1e-9);
    CHECK(std::abs(r.acc2_neg_pos - o.acc2_neg_pos) < 1e-9);
    CHECK(std::abs(r.f1_neg_nonneg - o.f1_neg_nonneg) < 1e-9);
    CHECK(std::abs(r.f1_neg_pos - o.f1_neg_pos) < 1e-9);
  }
}

TEST_CASE("seven-class bucketing clamps and rounds half away from zero") {
  // Pairs chosen to pin the boundary behaviour.
  std::vector<double> preds = {2.4, 3.7, 2.5, -2.5, 2.49, -0.5, 0.49};
  std::vector<double> labels = {2.0, 3.0, 3.0, -3.0, 3.0, -1.0, 0.0};
  // Buckets: 2==2, 3==3, 3==3, -3==-3, 2!=3, -1 vs... round(-0.5) = -1 == -1,
  // round(0.49) = 0 == 0. Hits: 6 of 7.
  MetricsReport r = dbf::compute_metrics(preds, labels);
  CHECK(r.acc7 == doctest::Approx(6.0 / 7.0).epsilon(1e-15));
}

TEST_CASE("the two binary views differ only in how zero labels are treated") {
  std::vector<double> preds = {-0.5, 0.5, -1.0, 1.0};
  std::vector<double> labels = {0.0, 0.0, -1.0, 1.0};
  MetricsReport r = dbf::compute_metrics(preds, labels);
  // All samples: prediction signs (neg, nonneg, neg, nonneg) vs labels
  // (nonneg, nonneg, neg, nonneg) -> 3 of 4 agree.
  CHECK(r.acc2_neg_nonneg == 0.75);
  // Zero labels excluded: both remaining samples agree.
  CHECK(r.acc2_neg_pos == 1.0);
  CHECK(r.f1_neg_pos == 1.0);

  std::vector<double> no_zeros = {-0.5, 0.5, -1.0, 1.0};
  std::vector<double> signed_labels = {-1.0, 2.0, -2.0, 1.0};
  MetricsReport s = dbf::compute_metrics(no_zeros, signed_labels);
  CHECK(s.acc2_neg_nonneg == s.acc2_neg_pos);
  CHECK(s.f1_neg_nonneg == s.f1_neg_pos);
}

TEST_CASE("zero-variance inputs flag the correlation instead of failing") {
  std::vector<double> flat = {1.0, 1.0, 1.0, 1.0};
  std::vector<double> labels = {-1.0, 0.0, 1.0, 2.0};
  MetricsReport r = dbf::compute_metrics(flat, labels);
  CHECK(r.corr == 0.0);
  CHECK(r.corr_degenerate);
  CHECK(r.mae == 1.0);  // (2 + 1 + 0 + 1) / 4

  MetricsReport s = dbf::compute_metrics(labels, {2.0, 2.0, 2.0, 2.0});
  CHECK(s.corr == 0.0);
  CHECK(s.corr_degenerate);
}

TEST_CASE("degenerate metric inputs raise typed errors") {
  CHECK_THROWS_AS(dbf::compute_metrics({1.0}, {1.0}), dbf::NumericError);
  CHECK_THROWS_AS(dbf::compute_metrics({1.0, 2.0}, {1.0, 3.5}), dbf::NumericError);
  CHECK_THROWS_AS(dbf::compute_metrics({1.0, 2.0}, {1.0, -3.5}), dbf::NumericError);
  CHECK_THROWS_AS(dbf::compute_metrics({1.0, 2.0}, {1.0}), dbf::ShapeError);
}

TEST_CASE("formatted numbers round-trip exactly") {
  std::vector<double> values = {0.0,       1.0 / 3.0,      0.1,  -2.5e-17,
                                1e300,     -0.4159265358979, 2.0 / 7.0, 123456.789};
  for (double v : values) {
    std::string text = dbf::format_double(v);
    double back = std::strtod(text.c_str(), nullptr);
    CHECK(back == v);
  }
}

TEST_CASE("the metric report renders one stable line per key") {
  std::vector<double> preds = {-1.0, 0.5, 2.0};
  std::vector<double> labels = {-1.5, 0.0, 2.5};
  MetricsReport r = dbf::compute_metrics(preds, labels);
  std::string text = dbf::format_metrics(r);
  CHECK(text.find("n 3\n") != std::string::npos);
  CHECK(text.find("mae " + dbf::format_double(r.mae) + "\n") != std::string::npos);
  CHECK(text.find("corr " + dbf::format_double(r.corr) + "\n") != std::string::npos);
  CHECK(text.find("corr_degenerate 0\n") != std::string::npos);
  CHECK(text.find("acc7 ") != std::string::npos);
  CHECK(text.find("acc2_neg_nonneg ") != std::string::npos);
  CHECK(text.find("acc2_neg_pos ") != std::string::npos);
  CHECK(text.find("f1_neg_nonneg ") != std::string::npos);
  CHECK(text.find("f1_neg_pos ") != std::string::npos);
  // Rendering the same report twice is byte-identical.
  CHECK(text == dbf::format_metrics(r));
}
