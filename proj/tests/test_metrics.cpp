#include <doctest.h>

#include <cmath>

#include "oracle/oracle.hpp"
#include "segdefer/error.hpp"
#include "segdefer/metrics.hpp"
#include "segdefer/stats.hpp"
#include "support/fixtures.hpp"

using namespace segdefer;

namespace {

std::vector<double> random_scores(SplitMix64& rng, std::size_t n, int levels = 0) {
  std::vector<double> s(n);
  for (auto& x : s) x = levels > 0 ? static_cast<double>(rng.below(static_cast<std::uint64_t>(levels))) : rng.uniform();
  return s;
}

std::vector<std::uint8_t> random_labels(SplitMix64& rng, std::size_t n, double pos = 0.3) {
  std::vector<std::uint8_t> y(n);
  for (auto& v : y) v = rng.uniform() < pos;
  y[0] = 1;
  y[1] = 0;
  return y;
}

}  // namespace

TEST_CASE("dice and iou") {
  const Confusion c{2, 1, 1, 0};
  CHECK(dice(c) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(iou(c) == 0.5);
  const Confusion empty{0, 0, 0, 9};
  CHECK(dice(empty) == 1.0);
  CHECK(iou(empty) == 1.0);
  CHECK(is_empty_convention(empty));
  CHECK(dice(Confusion{0, 3, 0, 1}) == 0.0);
  CHECK(dice(Confusion{0, 0, 3, 1}) == 0.0);
  CHECK(iou(Confusion{0, 2, 2, 1}) == 0.0);
  CHECK(dice(Confusion{5, 0, 0, 1}) == 1.0);

  SUBCASE("Dice = 2 IoU / (1 + IoU) and oracle agreement") {
    SplitMix64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
      const ProbMap p = fixtures::random_prob(rng, 20, 20);
      const GroundTruthMask y = fixtures::random_mask(rng, 20, 20);
      const DecisionMap roi(fixtures::random_mask(rng, 20, 20, 0.7).values());
      const PlaneXu8 h = hard_prediction(p);
      const double d = dice(h, y);
      const double j = iou(h, y);
      CHECK(std::fabs(d - 2 * j / (1 + j)) <= 1e-15);
      CHECK(j <= d);
      const auto o = oracle::oracle_dice(p, y);
      CHECK(d == o.dice);
      CHECK(j == o.iou);
      const auto orr = oracle::oracle_dice(p, y, &roi);
      CHECK(dice(h, y, &roi) == orr.dice);
      CHECK(iou(h, y, &roi) == orr.iou);
    }
  }
}

TEST_CASE("roc auc") {
  CHECK(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<std::uint8_t>{1, 1, 0, 0}) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<std::uint8_t>{1, 0, 1}) == 0.5);
  const std::vector<double> s{0.5, 0.9, 0.5, 0.1};
  const std::vector<std::uint8_t> y{1, 1, 0, 0};
  CHECK(roc_auc(s, y) == 0.875);
  CHECK(oracle::oracle_auc_paircount(fixtures::to_vec(std::span<const double>(s)), y) == 0.875);
  CHECK_THROWS_AS(roc_auc(s, std::vector<std::uint8_t>{1, 1, 1, 1}), UndefinedMetricError);

  SplitMix64 rng(17);
  SUBCASE("exactly equal to pair counting, with and without ties") {
    for (int trial = 0; trial < 40; ++trial) {
      const std::size_t n = 2 + rng.below(1999);
      const auto sc = random_scores(rng, n, trial % 2 ? 7 : 0);
      const auto lb = random_labels(rng, n);
      CHECK(roc_auc(sc, lb) == oracle::oracle_auc_paircount(sc, lb));
    }
  }
  SUBCASE("antisymmetry and rank invariance") {
    for (int trial = 0; trial < 20; ++trial) {
      const auto sc = random_scores(rng, 500);
      const auto lb = random_labels(rng, 500);
      std::vector<double> neg(sc.size());
      std::vector<double> warped(sc.size());
      for (std::size_t i = 0; i < sc.size(); ++i) {
        neg[i] = -sc[i];
        warped[i] = std::exp(3 * sc[i]) - 7;
      }
      CHECK(std::fabs(roc_auc(sc, lb) + roc_auc(neg, lb) - 1.0) <= 1e-12);
      CHECK(roc_auc(sc, lb) == roc_auc(warped, lb));
    }
  }
  SUBCASE("binned auc stays within its bound") {
    for (int trial = 0; trial < 10; ++trial) {
      const auto sc = random_scores(rng, 20000);
      const auto lb = random_labels(rng, 20000);
      const auto b = roc_auc_binned(sc, lb, 0.0, 1.0);
      CHECK(std::fabs(b.auc - roc_auc(sc, lb)) <= b.error_bound + 1e-15);
      CHECK(b.error_bound <= 1.0 / 32768);
    }
  }
}

TEST_CASE("unc auroc, error rate and err") {
  SplitMix64 rng(23);
  const ProbMap p = fixtures::random_prob(rng, 40, 40);
  const GroundTruthMask y = fixtures::random_mask(rng, 40, 40);
  const PlaneXu8 e = error_indicator(p, y);
  CHECK(unc_auroc(UncertaintyMap(e.cast<double>(), UncertaintyKind::confidence_aware_score), p, y) == 1.0);
  const ProbMap perfect(y.values().cast<double>());
  CHECK_THROWS_AS(unc_auroc(UncertaintyMap(PlaneXd::Zero(40, 40), UncertaintyKind::entropy), perfect, y),
                  UndefinedMetricError);

  CHECK(err(0.0640, 0.0131) == doctest::Approx(0.7953125).epsilon(1e-12));
  CHECK(std::fabs(err(0.0658, 0.0337) - 0.4878) <= 1e-4);
  CHECK(err(0.05, 0.05) == 0.0);
  CHECK_THROWS_AS(err(0.0, 0.0), UndefinedMetricError);
  CHECK(err(0.3, 0.1) == doctest::Approx(oracle::oracle_err(0.3, 0.1)).epsilon(1e-15));

  const DecisionMap none(PlaneXu8::Zero(40, 40));
  CHECK_THROWS_AS(error_rate(p, y, &none), UndefinedMetricError);

  SUBCASE("uninformative uncertainty sits near 0.5") {
    const std::size_t n = 200000;
    const auto sc = random_scores(rng, n);
    const auto lb = random_labels(rng, n, 0.1);
    CHECK(std::fabs(roc_auc(sc, lb) - 0.5) <= 3.0 / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("risk-coverage curves") {
  SplitMix64 rng(41);
  const std::vector<double> grid = coverage_grid();
  CHECK(grid.size() == 101);
  CHECK(grid.front() == 0.0);
  CHECK(grid.back() == 1.0);

  SUBCASE("error-indicator score") {
    const ProbMap p = fixtures::random_prob(rng, 50, 50);
    const GroundTruthMask y = fixtures::random_mask(rng, 50, 50);
    const PlaneXu8 e = error_indicator(p, y);
    const UncertaintyMap s(e.cast<double>(), UncertaintyKind::confidence_aware_score);
    const auto c = risk_coverage_curve(s, p, y, CurveMetric::error_rate, grid);
    const double base = error_rate(p, y);
    for (const auto& pt : c.points) {
      if (pt.coverage > 0 && pt.coverage <= 1.0 - base) CHECK(pt.value == 0.0);
    }
    CHECK(c.points.back().value == base);
    CHECK_FALSE(c.points.front().defined);
    CHECK_FALSE(c.notes.empty());
  }
  SUBCASE("constant score gives the full-coverage metric") {
    const ProbMap p = fixtures::random_prob(rng, 200, 200);
    const GroundTruthMask y = fixtures::random_mask(rng, 200, 200);
    const UncertaintyMap s(PlaneXd::Constant(200, 200, 0.1), UncertaintyKind::entropy);
    const auto c = risk_coverage_curve(s, p, y, CurveMetric::error_rate, grid);
    const double full = c.points.back().value;
    for (const auto& pt : c.points) {
      if (pt.coverage >= 0.1) CHECK(std::fabs(pt.value - full) <= 0.02);
    }
  }
  SUBCASE("q = 1 equals the pooled metric; AUCC in [0,1]; oracle agreement") {
    for (int trial = 0; trial < 10; ++trial) {
      const ProbMap p = fixtures::random_prob(rng, 32, 32);
      const GroundTruthMask y = fixtures::random_mask(rng, 32, 32);
      PlaneXd u(32, 32);
      for (Index i = 0; i < u.size(); ++i) u.data()[i] = static_cast<double>(rng.below(50)) / 100.0;
      const UncertaintyMap s(u, UncertaintyKind::entropy);
      const CurveMetric all[] = {CurveMetric::dice, CurveMetric::auc, CurveMetric::error_rate};
      const auto curves = risk_coverage_curves(s.flat(), p.flat(), y.flat(), all, grid);
      CHECK(curves[0].points.back().value == dice(hard_prediction(p), y));
      CHECK(curves[1].points.back().value == roc_auc(p.flat(), y.flat()));
      CHECK(curves[2].points.back().value == error_rate(p, y));
      const auto sv = fixtures::to_vec(s.flat());
      const auto pv = fixtures::to_vec(p.flat());
      const auto yv = fixtures::to_vec(y.flat());
      for (std::size_t m = 0; m < 3; ++m) {
        CHECK(curves[m].aucc >= 0.0);
        CHECK(curves[m].aucc <= 1.0);
        for (std::size_t g = 0; g < grid.size(); g += 7) {
          const auto k = static_cast<std::size_t>(std::llround(grid[g] * 1024.0));
          const auto o = oracle::oracle_curve_value(sv, pv, yv, k, static_cast<int>(m));
          REQUIRE(curves[m].points[g].defined == o.has_value());
          if (o) CHECK(std::fabs(curves[m].points[g].value - *o) <= 1e-12);
        }
      }
    }
  }
  SUBCASE("hand aucc") {
    const std::vector<CurvePoint> pts{{0.0, 0.0, false}, {0.5, 0.9, true}, {1.0, 0.8, true}};
    CHECK(aucc(pts, 1.0) == 0.9);
    CHECK(aucc(pts) == doctest::Approx(0.875).epsilon(1e-15));
  }
  SUBCASE("grid validation") {
    const ProbMap p = fixtures::random_prob(rng, 4, 4);
    const GroundTruthMask y = fixtures::random_mask(rng, 4, 4);
    const UncertaintyMap s(PlaneXd::Zero(4, 4), UncertaintyKind::entropy);
    CHECK_THROWS_AS(risk_coverage_curve(s, p, y, CurveMetric::dice, std::vector<double>{0.5, 0.2}), std::domain_error);
    CHECK_THROWS_AS(risk_coverage_curve(s, p, y, CurveMetric::dice, std::vector<double>{0.5, 1.2}), std::domain_error);
  }
}

TEST_CASE("operating points") {
  RiskCoverageCurve c;
  c.metric = CurveMetric::dice;
  c.points = {{0.9, 0.85, true}, {0.92, 0.827, true}, {0.93, 0.817, true}, {1.0, 0.78, true}};
  const OperatingTarget targets[] = {OperatingTarget::parse("dice>=0.82"), OperatingTarget::parse("metric>=0.7"),
                                     OperatingTarget::parse("dice>=0.9"), OperatingTarget::parse("coverage=0.925")};
  const auto ops = operating_points(c, targets);
  CHECK(ops[0].reachable);
  CHECK(ops[0].coverage == doctest::Approx(0.927).epsilon(1e-12));
  CHECK(ops[0].value == 0.82);
  CHECK(ops[1].coverage == 1.0);
  CHECK_FALSE(ops[2].reachable);
  CHECK(ops[3].value == doctest::Approx(0.822).epsilon(1e-12));
  CHECK(targets[0].label() == "dice>=0.82");
  CHECK(targets[3].label() == "coverage=0.925");
  CHECK_THROWS_AS(OperatingTarget::parse("dice<0.5"), std::domain_error);
  CHECK_THROWS_AS(OperatingTarget::parse("coverage=1.5"), std::domain_error);
}

TEST_CASE("paired t-test") {
  const std::vector<double> d{1, 1, 1, -1};
  const std::vector<double> zero(4, 0.0);
  const auto r = paired_ttest(d, zero);
  // mean 0.5, sample sd 1, n 4: t = 0.5 / (1 / 2)
  CHECK(r.t == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(r.dof == 3);
  CHECK(r.p == doctest::Approx(0.39100221895577053).epsilon(1e-9));
  CHECK(student_t_two_sided_p(2.0, 3) == doctest::Approx(0.1393259685588431).epsilon(1e-9));
  CHECK_THROWS_AS(paired_ttest(d, d), std::domain_error);
  CHECK_THROWS_AS(paired_ttest(std::vector<double>{1}, std::vector<double>{2}), std::domain_error);

  SplitMix64 rng(8);
  std::vector<double> a(200);
  std::vector<double> b(200);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.normal();
    b[i] = a[i] + 3.0 + rng.normal() * 0.5;
  }
  CHECK(paired_ttest(b, a).p < 0.001);
}

TEST_CASE("bootstrap ci") {
  const std::vector<double> c(10, 0.7);
  const auto k = bootstrap_ci(c, 500, 0.95, 1);
  CHECK(k.lo == 0.7);
  CHECK(k.hi == 0.7);

  SplitMix64 rng(12);
  std::vector<double> v(20);
  for (auto& x : v) x = 2.0 + rng.normal();
  const auto a = bootstrap_ci(v, 10000, 0.95, 42);
  const auto b = bootstrap_ci(v, 10000, 0.95, 42);
  CHECK(std::memcmp(&a, &b, sizeof a) == 0);
  CHECK(a.lo <= a.estimate);
  CHECK(a.estimate <= a.hi);

  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= 20.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double se = std::sqrt(ss / 20.0) / std::sqrt(20.0);
  const double analytic = 2 * 1.959963984540054 * se;
  CHECK(std::fabs((a.hi - a.lo) - analytic) <= 0.15 * analytic);
  CHECK_THROWS(bootstrap_ci(v, 50, 0.95, 1));
}
