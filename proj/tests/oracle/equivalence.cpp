#include "oracle/equivalence.hpp"

#include <algorithm>
#include <cmath>

#include "oracle/oracle.hpp"
#include "segdefer/calibration.hpp"
#include "segdefer/deferral.hpp"
#include "segdefer/metrics.hpp"
#include "segdefer/numeric.hpp"
#include "segdefer/rng.hpp"
#include "segdefer/uncertainty.hpp"

namespace oracle {

using namespace segdefer;

namespace {

PlaneXd uniform(SplitMix64& rng, Index r, Index c) {
  PlaneXd p(r, c);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform();
  return p;
}

std::vector<PlaneXd> jittered_planes(SplitMix64& rng, Index passes, Index r, Index c) {
  const PlaneXd base = uniform(rng, r, c);
  std::vector<PlaneXd> planes;
  for (Index t = 0; t < passes; ++t) {
    PlaneXd p(r, c);
    for (Index i = 0; i < p.size(); ++i) {
      p.data()[i] = std::clamp(base.data()[i] + 0.4 * (rng.uniform() - 0.5), 0.0, 1.0);
    }
    planes.push_back(std::move(p));
  }
  return planes;
}

double max_abs(std::span<const double> a, const Flat& b) {
  if (a.size() != b.size()) return 1.0;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

double mismatch(std::span<const std::uint8_t> a, const std::vector<std::uint8_t>& b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end()) ? 0.0 : 1.0;
}

}  // namespace

double EquivalenceResult::worst() const {
  double w = 0.0;
  for (const auto& [name, v] : max_deviation) w = std::max(w, v);
  return w;
}

EquivalenceResult run_equivalence(int fixtures, std::uint64_t seed) {
  EquivalenceResult res;
  res.fixtures = fixtures;
  auto& dev = res.max_deviation;
  auto note = [&](const char* name, double v) { dev[name] = std::max(dev[name], v); };
  const SplitMix64 root(seed);

  for (int f = 0; f < fixtures; ++f) {
    SplitMix64 rng(root.derive(static_cast<std::uint64_t>(f)));
    const Index rows = 2 + static_cast<Index>(rng.below(63));
    const Index cols = f % 3 == 0 ? rows : 2 + static_cast<Index>(rng.below(63));
    const Index passes = 2 + static_cast<Index>(rng.below(29));

    // mc
    const PredictionStack mc(jittered_planes(rng, passes, rows, cols), SourceTag::mc_dropout);
    const auto agg = mc_aggregate(mc);
    const auto omc = oracle_mi(mc);
    note("mc_aggregate.mean", max_abs(agg.mean.flat(), omc.mean));
    note("mc_aggregate.mi", max_abs(agg.mutual_information.flat(), omc.mi));

    // tta, in transformed orientation when the map is square
    {
      const Index k = std::min<Index>(passes, 6);
      auto planes = jittered_planes(rng, k, rows, cols);
      std::optional<std::vector<GeomTransform>> ids;
      if (rows == cols) {
        std::vector<GeomTransform> all{GeomTransform::identity, GeomTransform::hflip, GeomTransform::vflip,
                                       GeomTransform::rot90,    GeomTransform::rot180, GeomTransform::rot270};
        for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[rng.below(i)]);
        all.resize(static_cast<std::size_t>(k));
        for (std::size_t t = 0; t < all.size(); ++t) planes[t] = apply_transform(planes[t], all[t]);
        ids = all;
      }
      const PredictionStack tta(std::move(planes), SourceTag::tta, ids);
      const auto ta = tta_aggregate(tta);
      const auto ot = oracle_tta_var(tta);
      note("tta_aggregate.mean", max_abs(ta.mean.flat(), ot.mean));
      note("tta_aggregate.var", max_abs(ta.variance.flat(), ot.var));
      note("tta_aggregate.entropy", max_abs(ta.entropy.flat(), ot.ent));
    }

    const ProbMap& p = agg.mean;
    PlaneXu8 ym(rows, cols);
    for (Index i = 0; i < ym.size(); ++i) ym.data()[i] = rng.uniform() < 0.3 ? 1 : 0;
    const GroundTruthMask y(ym);
    const std::vector<double> pv(p.flat().begin(), p.flat().end());
    const std::vector<std::uint8_t> yv(y.flat().begin(), y.flat().end());

    // ece
    const int bins = 1 + static_cast<int>(rng.below(30));
    for (bool corr : {false, true}) {
      const auto e = ece(p, y, bins, corr ? AccuracyMode::correctness : AccuracyMode::positive_frequency);
      const auto oe = oracle_ece(pv, yv, bins, corr);
      note("ece", std::fabs(e.ece - oe.ece));
      for (int b = 0; b < bins; ++b) {
        const auto& bin = e.table.bins[static_cast<std::size_t>(b)];
        note("ece.table", std::max({std::fabs(bin.fraction - oe.frac[b]), std::fabs(bin.confidence - oe.conf[b]),
                                    std::fabs(bin.accuracy - oe.acc[b])}));
      }
    }

    // dice / iou, whole map and on a random roi
    PlaneXu8 roi_m(rows, cols);
    for (Index i = 0; i < roi_m.size(); ++i) roi_m.data()[i] = rng.uniform() < 0.8 ? 1 : 0;
    const DecisionMap roi(roi_m);
    const PlaneXu8 hard = hard_prediction(p);
    for (const DecisionMap* r : {static_cast<const DecisionMap*>(nullptr), &roi}) {
      const auto od = oracle_dice(p, y, r);
      note("dice", std::fabs(dice(hard, y, r) - od.dice));
      note("iou", std::fabs(iou(hard, y, r) - od.iou));
    }

    // percentile
    const double alpha = 100.0 * rng.uniform();
    const auto& u = agg.mutual_information;
    const std::vector<double> uv(u.flat().begin(), u.flat().end());
    note("percentile", std::fabs(percentile(u.flat(), alpha) - oracle_percentile(uv, alpha)));

    // deferral policies
    const double tau = oracle_percentile(uv, 100.0 * rng.uniform());
    const auto dg = defer_global(u, tau);
    note("defer_global", mismatch(dg.flat(), oracle_defer_threshold(uv, tau)));
    const double a_alpha = 50.0 + 50.0 * rng.uniform();
    note("defer_adaptive", mismatch(defer_adaptive(u, a_alpha).flat(), oracle_defer_adaptive(uv, a_alpha)));
    const auto s = confidence_aware_score(u, p);
    const auto os = oracle_conf_score(u, p);
    note("confidence_aware_score", max_abs(s.flat(), os));
    const double tau_s = oracle_percentile(os, 100.0 * rng.uniform());
    note("defer_confidence_aware", mismatch(defer_confidence_aware(s, tau_s).flat(), oracle_defer_threshold(os, tau_s)));

    // deferral f1
    const auto df = deferral_f1(dg, p, y);
    const auto of = oracle_deferral_f1(dg, p, y);
    note("deferral_f1", std::max({std::fabs(df.precision - of.precision), std::fabs(df.recall - of.recall),
                                  std::fabs(df.f1 - of.f1)}));

    // roc auc on up to 2000 samples, exact
    const std::size_t n = std::min<std::size_t>(pv.size(), kMaxAucSamples);
    std::vector<double> sc(pv.begin(), pv.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<std::uint8_t> lb(yv.begin(), yv.begin() + static_cast<std::ptrdiff_t>(n));
    if (f % 2) {
      for (auto& v : sc) v = std::round(v * 8.0) / 8.0;
    }
    lb[0] = 1;
    if (n > 1) lb[1] = 0;
    if (n > 1) note("roc_auc", roc_auc(sc, lb) == oracle_auc_paircount(sc, lb) ? 0.0 : 1.0);
  }
  return res;
}

}  // namespace oracle
