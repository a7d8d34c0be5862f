#include "segdefer/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "segdefer/numeric.hpp"
#include "segdefer/rng.hpp"

namespace segdefer {

double student_t_two_sided_p(double t, int dof) {
  if (dof < 1) throw std::domain_error("student_t_two_sided_p: dof must be >= 1");
  if (!std::isfinite(t)) return 0.0;
  const boost::math::students_t dist(dof);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::domain_error("paired_ttest: lists differ in length");
  if (a.size() < 2) throw std::domain_error("paired_ttest: need at least 2 pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = ordered_sum(d) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double var = ss / static_cast<double>(n - 1);
  if (!(var > 0.0)) throw std::domain_error("paired_ttest: differences have zero variance");
  const double t = mean / std::sqrt(var / static_cast<double>(n));
  const int dof = static_cast<int>(n - 1);
  return {t, student_t_two_sided_p(t, dof), dof};
}

ConfidenceInterval bootstrap_ci(std::span<const double> values, int resamples, double level,
                                std::uint64_t seed) {
  if (values.empty()) throw std::domain_error("bootstrap_ci: no values");
  if (resamples < 100) throw std::domain_error("bootstrap_ci: need at least 100 resamples");
  if (!(level > 0.0 && level < 1.0)) throw std::domain_error("bootstrap_ci: level must lie in (0,1)");
  const std::size_t n = values.size();
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); })) {
    return {values.front(), values.front(), values.front()};
  }
  const double estimate = ordered_sum(values) / static_cast<double>(n);

  SplitMix64 rng(seed);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += values[rng.below(n)];
    m = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - level) / 2.0 * 100.0;
  return {percentile_sorted(means, tail), percentile_sorted(means, 100.0 - tail), estimate};
}

}  // namespace segdefer
