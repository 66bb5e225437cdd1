#include "fsuie/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace fsuie;

namespace {

Vec random_vec(int n, std::mt19937_64& rng, double sd = 2.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

double naive_bce(const Vec& z, const std::vector<double>& y) {
  double s = 0;
  for (int i = 0; i < z.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z[i]));
    s += -(y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p));
  }
  return s;
}

double naive_kl(const std::vector<double>& q, const Vec& z) {
  double mx = z.maxCoeff(), zs = 0;
  for (int i = 0; i < z.size(); ++i) zs += std::exp(z[i] - mx);
  double kl = 0;
  for (int i = 0; i < z.size(); ++i)
    if (q[i] > 0) kl += q[i] * (std::log(q[i]) - (z[i] - mx - std::log(zs)));
  return kl;
}

BoundaryDistribution dist(std::vector<double> p) {
  BoundaryDistribution d;
  d.probs = std::move(p);
  return d;
}

}  // namespace

TEST(BceLoss, MatchesNaiveFormula) {
  std::mt19937_64 rng(1);
  const int n = 9;
  BoundaryLogits lg{random_vec(n, rng), random_vec(n, rng)};
  std::vector<SpanAnnotation> gold{{1, 3, 0}, {5, 5, 0}};
  std::vector<double> ys(n, 0), ye(n, 0);
  ys[1] = ys[5] = 1;
  ye[3] = ye[5] = 1;
  const double want = (naive_bce(lg.start, ys) + naive_bce(lg.end, ye)) / (2.0 * n);
  EXPECT_NEAR(bce_boundary_loss(lg, gold).value, want, 1e-12);
}

TEST(BceLoss, StableForExtremeLogits) {
  BoundaryLogits lg{Vec::Constant(3, 800.0), Vec::Constant(3, -800.0)};
  std::vector<SpanAnnotation> gold{{0, 0, 0}};
  auto l = bce_boundary_loss(lg, gold);
  EXPECT_TRUE(std::isfinite(l.value));
  EXPECT_TRUE(lg.start.allFinite());
}

TEST(BceLoss, RejectsOutOfRangeGold) {
  auto lg = BoundaryLogits::zeros(4);
  std::vector<SpanAnnotation> gold{{2, 4, 0}};
  EXPECT_THROW(bce_boundary_loss(lg, gold), std::out_of_range);
}

TEST(KlLoss, OneHotAgainstUniformIsLogN) {
  auto lg = BoundaryLogits::zeros(4);
  std::vector<TargetPair> t{{one_hot_distribution(2, 4), one_hot_distribution(1, 4)}};
  // start and end each contribute ln 4
  EXPECT_NEAR(kl_fuzzy_loss(lg, t).value, 2.0 * std::log(4.0), 1e-9);
}

TEST(KlLoss, FuzzyTargetAgainstUniform) {
  const FuzzyConfig cfg;
  auto q = generate_boundary_distribution(10, 40, cfg);
  const double want = 2.092680076014707;  // sum q ln q + ln 40
  EXPECT_NEAR(naive_kl(q.probs, Vec::Zero(40)), want, 1e-12);
  auto lg = BoundaryLogits::zeros(40);
  std::vector<TargetPair> t{{q, q}};
  EXPECT_NEAR(kl_fuzzy_loss(lg, t).value, 2 * want, 1e-12);
}

TEST(KlLoss, NonNegativeAndZeroOnlyAtTarget) {
  std::mt19937_64 rng(3);
  for (int it = 0; it < 200; ++it) {
    const int n = 2 + it % 10;
    Vec zs = random_vec(n, rng), ze = random_vec(n, rng);
    Vec ps = softmax(zs), pe = softmax(ze);
    std::vector<double> qs(ps.data(), ps.data() + n), qe(pe.data(), pe.data() + n);
    BoundaryLogits lg{zs, ze};
    std::vector<TargetPair> same{{dist(qs), dist(qe)}};
    ASSERT_NEAR(kl_fuzzy_loss(lg, same).value, 0.0, 1e-9);
    Vec other = random_vec(n, rng);
    BoundaryLogits lg2{other, ze};
    const double v = kl_fuzzy_loss(lg2, same).value;
    ASSERT_GE(v, -1e-12);
    ASSERT_NEAR(v, naive_kl(qs, other), 1e-9);
  }
}

TEST(KlLoss, AveragesOverSpansAndEmptyIsZero) {
  std::mt19937_64 rng(4);
  BoundaryLogits lg{random_vec(6, rng), random_vec(6, rng)};
  std::vector<TargetPair> a{{one_hot_distribution(1, 6), one_hot_distribution(2, 6)}};
  std::vector<TargetPair> b{{one_hot_distribution(3, 6), one_hot_distribution(4, 6)}};
  std::vector<TargetPair> ab{a[0], b[0]};
  EXPECT_NEAR(kl_fuzzy_loss(lg, ab).value, 0.5 * (kl_fuzzy_loss(lg, a).value + kl_fuzzy_loss(lg, b).value), 1e-12);
  auto none = kl_fuzzy_loss(lg, std::vector<TargetPair>{});
  EXPECT_EQ(none.value, 0.0);
  EXPECT_EQ(none.grad.start.norm(), 0.0);
}

TEST(KlLoss, RejectsLengthMismatch) {
  auto lg = BoundaryLogits::zeros(5);
  std::vector<TargetPair> t{{one_hot_distribution(0, 4), one_hot_distribution(0, 4)}};
  EXPECT_THROW(kl_fuzzy_loss(lg, t), std::invalid_argument);
}

TEST(TotalLoss, LambdaZeroIsExactlyBce) {
  std::mt19937_64 rng(5);
  BoundaryLogits lg{random_vec(12, rng), random_vec(12, rng)};
  std::vector<SpanAnnotation> gold{{2, 4, 0}};
  auto targets = std::vector<TargetPair>{span_targets(gold[0], 12, FuzzyConfig{})};
  auto t = total_loss(lg, gold, targets, {0.0, 1e-12});
  auto b = bce_boundary_loss(lg, gold);
  EXPECT_EQ(t.value, b.value);
  EXPECT_EQ(t.kl, 0.0);
  EXPECT_EQ(t.grad.start, b.grad.start);
  EXPECT_EQ(t.grad.end, b.grad.end);
}

TEST(TotalLoss, LinearInLambda) {
  std::mt19937_64 rng(6);
  BoundaryLogits lg{random_vec(12, rng), random_vec(12, rng)};
  std::vector<SpanAnnotation> gold{{2, 4, 0}, {7, 10, 0}};
  std::vector<TargetPair> targets;
  for (const auto& g : gold) targets.push_back(span_targets(g, 12, FuzzyConfig{}));
  const double bce = bce_boundary_loss(lg, gold).value;
  const double kl = kl_fuzzy_loss(lg, targets).value;
  for (double lam : {0.01, 0.1, 1.0, 3.5})
    EXPECT_NEAR(total_loss(lg, gold, targets, {lam, 1e-12}).value, bce + lam * kl, 1e-12);
  EXPECT_THROW(total_loss(lg, gold, targets, {-1.0, 1e-12}), std::invalid_argument);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const double h = 1e-6;
  for (int it = 0; it < 100; ++it) {
    const int n = std::uniform_int_distribution<int>(3, 20)(rng);
    BoundaryLogits lg{random_vec(n, rng), random_vec(n, rng)};
    const int s = std::uniform_int_distribution<int>(0, n - 1)(rng);
    const int e = std::uniform_int_distribution<int>(s, n - 1)(rng);
    std::vector<SpanAnnotation> gold{{s, e, 0}};
    std::vector<TargetPair> targets{span_targets(gold[0], n, FuzzyConfig{})};
    const LossConfig cfg{0.5, 1e-12};
    auto base = total_loss(lg, gold, targets, cfg);
    for (Vec* v : {&lg.start, &lg.end}) {
      const Vec& g = (v == &lg.start) ? base.grad.start : base.grad.end;
      for (int i = 0; i < n; ++i) {
        const double keep = (*v)[i];
        (*v)[i] = keep + h;
        const double up = total_loss(lg, gold, targets, cfg).value;
        (*v)[i] = keep - h;
        const double dn = total_loss(lg, gold, targets, cfg).value;
        (*v)[i] = keep;
        const double num = (up - dn) / (2 * h);
        ASSERT_NEAR(g[i], num, 1e-7 + 1e-5 * std::abs(num)) << "iteration " << it << " index " << i;
      }
    }
  }
}

TEST(KlLoss, FlooredPositionsCarryNoGradient) {
  // The target puts mass on a position whose predicted probability underflows
  // the floor: its gradient entry must be p_j * live_mass only.
  Vec z = Vec::Zero(3);
  z[0] = -60.0;
  std::vector<double> q{0.5, 0.5, 0.0};
  Vec grad = Vec::Zero(3);
  const double floor = 1e-12;
  const double kl = detail::kl_one(z, q, floor, 1.0, grad);
  const Vec p = softmax(z);
  ASSERT_LT(p[0], floor);
  EXPECT_NEAR(kl, 0.5 * (std::log(0.5) - std::log(floor)) + 0.5 * (std::log(0.5) - std::log(p[1])), 1e-12);
  EXPECT_NEAR(grad[0], p[0] * 0.5, 1e-20);
  EXPECT_NEAR(grad[1], p[1] * 0.5 - 0.5, 1e-12);
  EXPECT_NEAR(grad[2], p[2] * 0.5, 1e-12);
  EXPECT_TRUE(std::isfinite(kl));
}

TEST(LossConfig, Validation) {
  EXPECT_THROW((LossConfig{0.01, 0.0}.validate()), std::invalid_argument);
  EXPECT_THROW((LossConfig{0.01, 1e-3}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((LossConfig{0.0, 1e-12}.validate()));
}
