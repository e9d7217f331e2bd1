#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "modalfuse/error.hpp"
#include "modalfuse/metrics.hpp"
#include "test_support.hpp"

namespace ad = modalfuse::ad;
using modalfuse::Rng;
using modalfuse::Tensor;

namespace {

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> random_values(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * (2.0 * modalfuse::uniform01(rng) - 1.0);
  return v;
}

Tensor two_columns(const std::vector<double>& a, const std::vector<double>& b) {
  Tensor t({a.size(), 2}, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    t(i, 0) = a[i];
    t(i, 1) = b[i];
  }
  return t;
}

}  // namespace

TEST(Ccc, SelfConcordanceIsOne) {
  const std::vector<double> x = {0.1, -0.4, 0.9, 0.3};
  EXPECT_DOUBLE_EQ(modalfuse::ccc(x, x), 1.0);
}

TEST(Ccc, ConstantAgainstVaryingWithEqualMeansIsZero) {
  const std::vector<double> x = {2.0, 2.0, 2.0};
  const std::vector<double> y = {1.0, 2.0, 3.0};
  EXPECT_EQ(modalfuse::ccc(x, y), 0.0);
}

TEST(Ccc, ShiftedSequenceGivesFourSevenths) {
  const std::vector<double> x = {1, 2, 3}, y = {2, 3, 4};
  EXPECT_NEAR(modalfuse::ccc(x, y), 4.0 / 7.0, 1e-12);
}

TEST(Ccc, ZeroDenominatorIsZero) {
  const std::vector<double> x = {0.5, 0.5}, y = {0.5, 0.5};
  EXPECT_EQ(modalfuse::ccc(x, y), 0.0);
}

TEST(Ccc, Errors) {
  const std::vector<double> a = {1.0, 2.0}, b = {1.0, 2.0, 3.0}, one = {1.0};
  EXPECT_THROW(modalfuse::ccc(a, b), modalfuse::Error);
  EXPECT_THROW(modalfuse::ccc(one, one), modalfuse::Error);
}

TEST(Ccc, SymmetricBoundedByPearsonAndPermutationInvariant) {
  Rng rng = modalfuse::make_rng(1, 0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + trial % 40;
    const std::vector<double> x = random_values(n, rng);
    std::vector<double> y = random_values(n, rng);
    for (std::size_t i = 0; i < n; ++i) y[i] += 0.5 * x[i] + 0.3;
    const double c = modalfuse::ccc(x, y);
    const double r = pearson(x, y);
    EXPECT_NEAR(c, modalfuse::ccc(y, x), 1e-12);
    EXPECT_LE(std::abs(c), std::abs(r) + 1e-12);
    EXPECT_LE(std::abs(r), 1.0 + 1e-12);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> px(n), py(n);
    for (std::size_t i = 0; i < n; ++i) {
      px[i] = x[perm[i]];
      py[i] = y[perm[i]];
    }
    EXPECT_NEAR(modalfuse::ccc(px, py), c, 1e-12);
  }
}

TEST(Ccc, PenalisesScaleAndLocationShifts) {
  Rng rng = modalfuse::make_rng(2, 0);
  const std::vector<double> x = random_values(50, rng);
  for (auto [a, b] : std::vector<std::pair<double, double>>{{2.0, 0.0}, {1.0, 0.1}, {0.5, -0.2}}) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = a * x[i] + b;
    EXPECT_LT(modalfuse::ccc(x, y), 1.0);
    EXPECT_NEAR(pearson(x, y), 1.0, 1e-12);
  }
}

TEST(CccLoss, PerfectPredictionGivesZero) {
  Rng rng = modalfuse::make_rng(3, 0);
  const Tensor gold = mf_test::random_tensor({20, 2}, rng);
  ad::Tape tape;
  EXPECT_NEAR(modalfuse::ccc_loss(tape.constant(gold), tape.constant(gold)).value()[0], 0.0,
              1e-15);
}

TEST(CccLoss, HandPairGivesThreeSevenths) {
  ad::Tape tape;
  const Tensor pred = Tensor::matrix(3, 2, {1, 1, 2, 2, 3, 3});
  const Tensor gold = Tensor::matrix(3, 2, {2, 2, 3, 3, 4, 4});
  const double loss = modalfuse::ccc_loss(tape.constant(pred), tape.constant(gold)).value()[0];
  EXPECT_NEAR(loss, 3.0 / 7.0, 1e-12);
}

TEST(CccLoss, MatchesScalarCcc) {
  Rng rng = modalfuse::make_rng(4, 0);
  const std::vector<double> pv = random_values(30, rng), pa = random_values(30, rng);
  const std::vector<double> gv = random_values(30, rng), ga = random_values(30, rng);
  ad::Tape tape;
  const double loss =
      modalfuse::ccc_loss(tape.constant(two_columns(pv, pa)), tape.constant(two_columns(gv, ga)))
          .value()[0];
  EXPECT_NEAR(loss, 1.0 - 0.5 * (modalfuse::ccc(pv, gv) + modalfuse::ccc(pa, ga)), 1e-14);
}

TEST(CccLoss, GradientMatchesFiniteDifferences) {
  Rng rng = modalfuse::make_rng(5, 0);
  const Tensor gold = mf_test::random_tensor({50, 2}, rng);
  const auto r = mf_test::finite_difference_check(
      [&gold](ad::Tape& t, const std::vector<ad::Var>& v) {
        return modalfuse::ccc_loss(v[0], t.constant(gold));
      },
      {mf_test::random_tensor({50, 2}, rng)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(CccLoss, ShapeErrors) {
  ad::Tape tape;
  EXPECT_THROW(modalfuse::ccc_loss(tape.constant(Tensor({4, 2}, 0.0)),
                                   tape.constant(Tensor({5, 2}, 0.0))),
               modalfuse::Error);
  EXPECT_THROW(modalfuse::ccc_loss(tape.constant(Tensor({4, 3}, 0.0)),
                                   tape.constant(Tensor({4, 3}, 0.0))),
               modalfuse::Error);
}

TEST(EvalSummary, PerfectAndConstantPredictions) {
  Rng rng = modalfuse::make_rng(6, 0);
  const Tensor labels = mf_test::random_tensor({40, 2}, rng);
  const modalfuse::EvalSummary perfect = modalfuse::eval_summary(labels, labels);
  EXPECT_DOUBLE_EQ(perfect.ccc_valence, 1.0);
  EXPECT_DOUBLE_EQ(perfect.ccc_arousal, 1.0);
  EXPECT_EQ(perfect.n_frames, 40u);

  Tensor constant({40, 2}, 0.0);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < 40; ++r) m += labels(r, c);
    for (std::size_t r = 0; r < 40; ++r) constant(r, c) = m / 40.0;
  }
  const modalfuse::EvalSummary flat = modalfuse::eval_summary(constant, labels);
  EXPECT_NEAR(flat.ccc_valence, 0.0, 1e-15);
  EXPECT_NEAR(flat.ccc_arousal, 0.0, 1e-15);
}

TEST(EvalSummary, ConsistentPermutationLeavesSummaryUnchanged) {
  Rng rng = modalfuse::make_rng(7, 0);
  const Tensor pred = mf_test::random_tensor({25, 2}, rng);
  const Tensor gold = mf_test::random_tensor({25, 2}, rng);
  std::vector<std::size_t> perm(25);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor pp({25, 2}, 0.0), pg({25, 2}, 0.0);
  for (std::size_t i = 0; i < 25; ++i) {
    std::ranges::copy(pred.row(perm[i]), pp.row(i).begin());
    std::ranges::copy(gold.row(perm[i]), pg.row(i).begin());
  }
  const auto a = modalfuse::eval_summary(pred, gold), b = modalfuse::eval_summary(pp, pg);
  EXPECT_NEAR(a.ccc_valence, b.ccc_valence, 1e-12);
  EXPECT_NEAR(a.ccc_arousal, b.ccc_arousal, 1e-12);
}

TEST(EvalSummary, FrameCountMismatch) {
  EXPECT_THROW(modalfuse::eval_summary(Tensor({4, 2}, 0.0), Tensor({3, 2}, 0.0)),
               modalfuse::Error);
}
