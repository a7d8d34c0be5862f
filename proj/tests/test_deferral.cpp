#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracle/oracle.hpp"
#include "segdefer/deferral.hpp"
#include "segdefer/metrics.hpp"
#include "segdefer/numeric.hpp"
#include "support/fixtures.hpp"

using namespace segdefer;

namespace {

UncertaintyMap row(std::initializer_list<double> v, UncertaintyKind kind = UncertaintyKind::entropy) {
  PlaneXd p(1, static_cast<Index>(v.size()));
  std::copy(v.begin(), v.end(), p.data());
  return UncertaintyMap(p, kind);
}

std::vector<std::uint8_t> decisions(const DecisionMap& d) { return fixtures::to_vec(d.flat()); }

UncertaintyMap random_unc(SplitMix64& rng, Index rows, Index cols) {
  PlaneXd u(rows, cols);
  for (Index i = 0; i < u.size(); ++i) u.data()[i] = 0.69 * rng.uniform();
  return UncertaintyMap(u, UncertaintyKind::entropy);
}

// Pixels whose prediction is wrong carry the largest uncertainties.
ValidationItem planted_item(SplitMix64& rng, Index rows, Index cols, double error_fraction) {
  const Index n = rows * cols;
  const auto n_err = static_cast<Index>(std::llround(error_fraction * static_cast<double>(n)));
  PlaneXd u(rows, cols);
  PlaneXd p(rows, cols);
  PlaneXu8 y(rows, cols);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (Index i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  for (Index k = 0; k < n; ++k) {
    const Index i = order[static_cast<std::size_t>(k)];
    u.data()[i] = 0.5 * (static_cast<double>(k) + 0.5) / static_cast<double>(n);
    const bool label = rng.uniform() < 0.4;
    y.data()[i] = label;
    const bool wrong = k >= n - n_err;
    const bool pred = wrong ? !label : label;
    p.data()[i] = pred ? 0.6 + 0.4 * rng.uniform() : 0.4 * rng.uniform();
  }
  return {ProbMap(p), UncertaintyMap(u, UncertaintyKind::entropy), GroundTruthMask(y)};
}

}  // namespace

TEST_CASE("global threshold") {
  const auto u = row({0.1, 0.5, 0.9}, UncertaintyKind::confidence_aware_score);
  CHECK(decisions(defer_global(u, 0.5)) == std::vector<std::uint8_t>{1, 1, 0});
  CHECK(defer_global(u, 0.9).coverage() == 1.0);
  CHECK(defer_global(u, 0.0).coverage() == 0.0);
  CHECK_THROWS_AS(defer_global(u, -1.0), std::domain_error);
}

TEST_CASE("adaptive threshold") {
  SplitMix64 rng(2);
  const UncertaintyMap u = random_unc(rng, 10, 10);
  CHECK(defer_adaptive(u, 100).coverage() == 1.0);
  const DecisionMap d = defer_adaptive(u, 75);
  CHECK(u.size() - d.accepted() == 25);
  PlaneXd c = PlaneXd::Constant(4, 4, 0.2);
  CHECK(defer_adaptive(UncertaintyMap(c, UncertaintyKind::entropy), 60).coverage() == 1.0);

  SUBCASE("distinct values defer (100 - alpha)% within one pixel") {
    const UncertaintyMap big = random_unc(rng, 37, 29);
    const double n = static_cast<double>(big.size());
    for (int alpha = 50; alpha <= 100; ++alpha) {
      const double deferred = 1.0 - defer_adaptive(big, alpha).coverage();
      CHECK(std::fabs(deferred - (100.0 - alpha) / 100.0) <= 1.0 / n);
    }
  }
}

TEST_CASE("confidence-aware score and threshold") {
  PlaneXd p(1, 2);
  p << 0.52, 0.92;
  const auto u = row({0.05, 0.05});
  const UncertaintyMap s = confidence_aware_score(u, ProbMap(p));
  CHECK(s.kind() == UncertaintyKind::confidence_aware_score);
  CHECK(std::fabs(s(0, 0) - 0.048) <= 1e-15);
  CHECK(std::fabs(s(0, 1) - 0.008) <= 1e-15);
  CHECK(decisions(defer_confidence_aware(s, 0.01)) == std::vector<std::uint8_t>{0, 1});
  CHECK(defer_confidence_aware(s, 0.048).coverage() == 1.0);
  CHECK(defer_confidence_aware(s, 0.0).coverage() == 0.0);
  CHECK_THROWS_AS(defer_confidence_aware(u, 0.01), std::invalid_argument);

  PlaneXd sure(1, 2);
  sure << 0.0, 1.0;
  const UncertaintyMap z = confidence_aware_score(row({0.6, 0.3}), ProbMap(sure));
  CHECK(z(0, 0) == 0.0);
  CHECK(z(0, 1) == 0.0);
}

TEST_CASE("deferral f1") {
  const auto a = deferral_f1(4, 3, 6);
  CHECK(a.precision == 0.75);
  CHECK(a.recall == 0.5);
  CHECK(a.f1 == doctest::Approx(0.6).epsilon(1e-15));
  const auto perfect = deferral_f1(5, 5, 5);
  CHECK(perfect.f1 == 1.0);
  const auto none = deferral_f1(0, 0, 6);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);
}

TEST_CASE("policy invariants against oracles") {
  SplitMix64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const UncertaintyMap u = random_unc(rng, 32, 32);
    const ProbMap p = fixtures::random_prob(rng, 32, 32);
    const auto uv = fixtures::to_vec(u.flat());
    const double tau = 0.69 * rng.uniform();
    const double alpha = 50 + 50 * rng.uniform();
    CHECK(decisions(defer_global(u, tau)) == oracle::oracle_defer_threshold(uv, tau));
    CHECK(decisions(defer_adaptive(u, alpha)) == oracle::oracle_defer_adaptive(uv, alpha));
    const UncertaintyMap s = confidence_aware_score(u, p);
    const auto so = oracle::oracle_conf_score(u, p);
    for (std::size_t i = 0; i < so.size(); ++i) CHECK(s.flat()[i] == doctest::Approx(so[i]).epsilon(1e-15));
    CHECK(decisions(defer_confidence_aware(s, tau / 2)) == oracle::oracle_defer_threshold(fixtures::to_vec(s.flat()), tau / 2));

    // rank semantics: a strictly increasing rescaling with tau rescaled alike
    PlaneXd scaled = u.values().sqrt() * 0.5;
    CHECK(decisions(defer_global(UncertaintyMap(scaled, UncertaintyKind::confidence_aware_score), std::sqrt(tau) * 0.5)) ==
          decisions(defer_global(u, tau)));
  }
  SUBCASE("coverage is monotone in tau and alpha") {
    const UncertaintyMap u = random_unc(rng, 20, 20);
    double prev = 0.0;
    for (int k = 0; k <= 70; ++k) {
      const double c = defer_global(u, k / 100.0).coverage();
      CHECK(c >= prev);
      prev = c;
    }
    prev = 0.0;
    for (int a = 0; a <= 100; ++a) {
      const double c = defer_adaptive(u, a).coverage();
      CHECK(c >= prev);
      prev = c;
    }
  }
}

TEST_CASE("deferral model json") {
  DeferralModel m;
  m.policy = Policy::adaptive;
  m.alpha = 75;
  m.criterion = Criterion::coverage_dice;
  m.dice_floor = 0.82;
  m.fitted_on = "abc";
  const auto j = m.to_json();
  CHECK_FALSE(j.contains("tau"));
  const DeferralModel back = DeferralModel::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(*back.alpha == 75);

  auto extra = j;
  extra["beta"] = 1;
  CHECK_THROWS_AS(DeferralModel::from_json(extra), std::invalid_argument);
  auto both = j;
  both["tau"] = 0.1;
  CHECK_THROWS_AS(DeferralModel::from_json(both), std::invalid_argument);
  DeferralModel g;
  g.tau = -0.5;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  CHECK_THROWS_AS(parse_policy("random"), std::domain_error);
}

TEST_CASE("fit threshold") {
  SplitMix64 rng(5);
  SUBCASE("errors are the top 10% of uncertainty: max_f1 picks the 90th percentile") {
    const ValidationItem it = planted_item(rng, 20, 20, 0.10);
    const ValidationSet val({it});
    const FitResult r = fit_threshold(val, Policy::global, Criterion::max_f1);
    REQUIRE(r.feasible);
    CHECK(r.f1 == 1.0);
    CHECK(*r.model->tau == percentile(it.unc.flat(), 90.0));
    CHECK(r.coverage == 0.9);
    CHECK(r.model->fitted_on == val.fingerprint());
    const auto o = oracle::oracle_fit({it}, Policy::global, Criterion::max_f1, 0.0);
    CHECK(o.param == *r.model->tau);
  }
  SUBCASE("vacuous floor accepts everything") {
    const ValidationSet val({planted_item(rng, 16, 16, 0.1), planted_item(rng, 16, 16, 0.2)});
    for (auto policy : {Policy::global, Policy::adaptive, Policy::confidence_aware}) {
      const FitResult r = fit_threshold(val, policy, Criterion::coverage_dice, 0.0);
      REQUIRE(r.feasible);
      CHECK(r.coverage == 1.0);
    }
  }
  SUBCASE("constant uncertainty returns the all-accept threshold") {
    ValidationItem it = planted_item(rng, 8, 8, 0.1);
    it.unc = UncertaintyMap(PlaneXd::Constant(8, 8, 0.3), UncertaintyKind::entropy);
    const FitResult r = fit_threshold(ValidationSet({it}), Policy::global, Criterion::max_f1);
    REQUIRE(r.feasible);
    CHECK(r.coverage == 1.0);
    const FitResult a = fit_threshold(ValidationSet({it}), Policy::adaptive, Criterion::max_f1);
    CHECK(a.coverage == 1.0);
  }
  SUBCASE("unreachable floor is reported with the best achievable Dice") {
    ValidationItem it = planted_item(rng, 16, 16, 0.1);
    // flip every prediction: accepted Dice stays 0
    it.pred = ProbMap(1.0 - it.pred.values());
    const FitResult r = fit_threshold(ValidationSet({it}), Policy::global, Criterion::coverage_dice, 0.82);
    CHECK_FALSE(r.feasible);
    CHECK_FALSE(r.model.has_value());
    CHECK(r.best_dice < 0.82);
  }
  SUBCASE("fits agree with the exhaustive oracle") {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<ValidationItem> items;
      for (int i = 0; i < 3; ++i) {
        items.push_back({fixtures::random_prob(rng, 12, 12), random_unc(rng, 12, 12), fixtures::random_mask(rng, 12, 12)});
      }
      const ValidationSet val(items);
      for (auto policy : {Policy::global, Policy::adaptive, Policy::confidence_aware}) {
        for (auto crit : {Criterion::max_f1, Criterion::coverage_dice}) {
          const double floor = 0.45;
          const FitResult r = fit_threshold(val, policy, crit, floor);
          const auto o = oracle::oracle_fit(items, policy, crit, floor);
          REQUIRE(r.feasible == o.feasible);
          if (!o.feasible) continue;
          CHECK(r.coverage == doctest::Approx(o.coverage).epsilon(1e-12));
          CHECK(r.f1 == doctest::Approx(o.f1).epsilon(1e-12));
          CHECK(r.dice == doctest::Approx(o.dice).epsilon(1e-12));
          const double param = policy == Policy::adaptive ? *r.model->alpha : *r.model->tau;
          CHECK(param == doctest::Approx(o.param).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("oracle score defers exactly the errors") {
  SplitMix64 rng(13);
  const ProbMap p = fixtures::random_prob(rng, 30, 30);
  const GroundTruthMask y = fixtures::random_mask(rng, 30, 30);
  const PlaneXu8 e = error_indicator(p, y);
  const UncertaintyMap oracle_score(e.cast<double>(), UncertaintyKind::confidence_aware_score);
  const DecisionMap d = defer_global(oracle_score, 0.5);
  const double rate = error_rate(p, y);
  CHECK(1.0 - d.coverage() == doctest::Approx(rate).epsilon(1e-15));
  CHECK(err(rate, error_rate(p, y, &d)) == 1.0);
  CHECK(deferral_f1(d, p, y).f1 == 1.0);
}
