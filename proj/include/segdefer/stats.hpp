#pragma once

#include <cstdint>
#include <span>

namespace segdefer {

struct TTestResult {
  double t = 0.0;
  double p = 1.0;  ///< two-sided
  int dof = 0;
};

/// Paired t-test on per-image metrics: t = mean(d) / (sd(d) / sqrt(n)) with
/// d = a - b, sample sd, n - 1 degrees of freedom. Throws std::domain_error
/// for n < 2, unequal lengths, or zero-variance differences.
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

/// Two-sided tail probability P(|T| >= |t|) of Student's t with `dof`
/// degrees of freedom.
double student_t_two_sided_p(double t, int dof);

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  double estimate = 0.0;
};

/// Percentile bootstrap of the mean over images, driven by SplitMix64 with
/// `seed`; identical inputs and seed give bitwise-identical intervals.
ConfidenceInterval bootstrap_ci(std::span<const double> values, int resamples, double level,
                                std::uint64_t seed);

}  // namespace segdefer
