#include <doctest.h>

#include <cmath>

#include "oracle/oracle.hpp"
#include "segdefer/calibration.hpp"
#include "segdefer/numeric.hpp"
#include "support/fixtures.hpp"

using namespace segdefer;

namespace {

struct Planted {
  LogitMap z;
  GroundTruthMask y;
};

// labels ~ Bernoulli(sigmoid(z / T)).
Planted planted(SplitMix64& rng, Index rows, Index cols, double T) {
  PlaneXd z(rows, cols);
  PlaneXu8 y(rows, cols);
  for (Index i = 0; i < z.size(); ++i) {
    z.data()[i] = 4.0 * rng.normal();
    y.data()[i] = rng.uniform() < sigmoid(z.data()[i] / T) ? 1 : 0;
  }
  return {LogitMap(z), GroundTruthMask(y)};
}

}  // namespace

TEST_CASE("temperature fit") {
  SUBCASE("all-zero logits are flat") {
    const LogitMap z(PlaneXd::Zero(8, 8));
    SplitMix64 rng(1);
    const GroundTruthMask y = fixtures::random_mask(rng, 8, 8);
    const auto m = fit_temperature(std::span(&z, 1), std::span(&y, 1));
    CHECK(m.flat);
    CHECK(m.temperature == 1.0);
    const auto o = oracle::oracle_temperature_grid(fixtures::to_vec(z.flat()), fixtures::to_vec(y.flat()));
    CHECK(o.flat);
  }
  SUBCASE("planted temperature is recovered") {
    SplitMix64 rng(2024);
    const Planted d = planted(rng, 400, 250, 2.0);
    const auto m = fit_temperature(std::span(&d.z, 1), std::span(&d.y, 1));
    CHECK(std::fabs(m.temperature - 2.0) <= 0.04);
    CHECK(m.nll_after <= m.nll_before + 1e-12);
    const auto o = oracle::oracle_temperature_grid(fixtures::to_vec(d.z.flat()), fixtures::to_vec(d.y.flat()));
    CHECK(std::fabs(m.temperature - o.temperature) <= 2e-3);
  }
  SUBCASE("separable data hits the lower bound") {
    PlaneXd z(1, 4);
    z << -3, -1, 2, 5;
    PlaneXu8 y(1, 4);
    y << 0, 0, 1, 1;
    const LogitMap zl(z);
    const GroundTruthMask yl(y);
    const auto m = fit_temperature(std::span(&zl, 1), std::span(&yl, 1));
    CHECK(m.temperature == kMinTemperature);
  }
  SUBCASE("random data agrees with grid search") {
    SplitMix64 rng(99);
    for (int trial = 0; trial < 5; ++trial) {
      const double T = 0.3 + 3.0 * rng.uniform();
      const Planted d = planted(rng, 40, 40, T);
      const auto m = fit_temperature(std::span(&d.z, 1), std::span(&d.y, 1));
      const auto o = oracle::oracle_temperature_grid(fixtures::to_vec(d.z.flat()), fixtures::to_vec(d.y.flat()));
      CHECK(std::fabs(m.temperature - o.temperature) <= 2e-3);
      CHECK(m.nll_after <= m.nll_before + 1e-12);
    }
  }
}

TEST_CASE("temperature model json") {
  TemperatureModel m{1.7, 0.4, 0.3, "00ff", false};
  const auto back = TemperatureModel::from_json(m.to_json());
  CHECK(back.temperature == 1.7);
  CHECK(back.fitted_on == "00ff");
  CHECK(m.to_json().contains("T"));
  CHECK_THROWS_AS(TemperatureModel::from_json({{"T", 0.01}}), std::invalid_argument);
}

TEST_CASE("apply temperature") {
  PlaneXd p(1, 3);
  p << 0.5, 0.9, 0.3;
  const ProbMap q = apply_temperature(ProbMap(p), 2.0);
  CHECK(q(0, 0) == 0.5);
  CHECK(q(0, 1) == doctest::Approx(0.75).epsilon(1e-15));
  const ProbMap same = apply_temperature(ProbMap(p), 1.0);
  CHECK(((same.values() - p).abs() <= 1e-15).all());
  CHECK_THROWS_AS(apply_temperature(ProbMap(p), 0.01), std::domain_error);

  SUBCASE("strictly increasing and fixes 0.5") {
    SplitMix64 rng(3);
    const ProbMap r = fixtures::random_prob(rng, 1, 500);
    for (double T : {0.25, 0.5, 2.0, 4.0}) {
      const ProbMap s = apply_temperature(r, T);
      for (Index i = 0; i < 500; ++i) {
        CHECK((s(0, i) > 0.5) == (r(0, i) > 0.5));
      }
    }
  }
}

TEST_CASE("ece") {
  PlaneXd p(1, 2);
  p << 0.9, 0.9;
  PlaneXu8 y(1, 2);
  y << 1, 0;
  const auto e = ece(ProbMap(p), GroundTruthMask(y));
  CHECK(e.ece == 0.4);
  int nonempty = 0;
  for (const auto& b : e.table.bins) nonempty += b.count > 0;
  CHECK(nonempty == 1);

  const auto zero = ece(ProbMap(PlaneXd::Zero(3, 3)), GroundTruthMask(PlaneXu8::Zero(3, 3)));
  CHECK(zero.ece == 0.0);

  SUBCASE("matches the oracle; fractions sum to one") {
    SplitMix64 rng(31);
    for (int trial = 0; trial < 20; ++trial) {
      const ProbMap pr = fixtures::random_prob(rng, 16, 16);
      const GroundTruthMask gt = fixtures::random_mask(rng, 16, 16, 0.5);
      for (bool correctness : {false, true}) {
        const auto r = ece(pr, gt, 15, correctness ? AccuracyMode::correctness : AccuracyMode::positive_frequency);
        const auto o = oracle::oracle_ece(fixtures::to_vec(pr.flat()), fixtures::to_vec(gt.flat()), 15, correctness);
        CHECK(std::fabs(r.ece - o.ece) <= 1e-9);
        double sum = 0.0;
        for (std::size_t b = 0; b < 15; ++b) {
          sum += r.table.bins[b].fraction;
          CHECK(r.table.bins[b].fraction == doctest::Approx(o.frac[b]).epsilon(1e-12));
          CHECK(std::fabs(r.table.bins[b].confidence - o.conf[b]) <= 1e-12);
          CHECK(std::fabs(r.table.bins[b].accuracy - o.acc[b]) <= 1e-12);
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-9);
        CHECK(r.ece >= 0.0);
        CHECK(r.ece <= 1.0);
      }
    }
  }
  SUBCASE("csv") {
    const std::string csv = e.table.to_csv();
    CHECK(csv.rfind("bin_lo,bin_hi,frac,conf,acc,gap\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 16);
  }
}
