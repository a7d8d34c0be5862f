#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace segdefer {

/// Probabilities are clipped to [kLogitClamp, 1 - kLogitClamp] before logit.
inline constexpr double kLogitClamp = 1e-7;

namespace detail {

// Evaluated on q = min(p, 1 - p) so H(p) and H(1 - p) agree bitwise
// whenever 1 - p is exact.
template <typename Scalar>
Scalar entropy_unchecked(Scalar p) {
  const Scalar q = p > Scalar(0.5) ? Scalar(1) - p : p;
  if (q <= Scalar(0)) return Scalar(0);
  return -q * std::log(q) - (Scalar(1) - q) * std::log1p(-q);
}

template <typename Scalar>
struct EntropyOp {
  Scalar operator()(Scalar p) const { return entropy_unchecked(p); }
};

}  // namespace detail

/// Binary entropy in nats, with 0 ln 0 = 0. Throws std::domain_error for p
/// outside [0,1].
template <std::floating_point Scalar>
Scalar binary_entropy(Scalar p) {
  if (!(p >= Scalar(0) && p <= Scalar(1))) {
    throw std::domain_error("binary_entropy: p outside [0,1]");
  }
  return detail::entropy_unchecked(p);
}

/// Elementwise binary entropy expression. Inputs are assumed to be valid
/// probabilities (map types enforce this on construction).
template <typename Derived>
auto binary_entropy(const Eigen::ArrayBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  return p.unaryExpr(detail::EntropyOp<Scalar>{});
}

template <std::floating_point Scalar>
Scalar logit(Scalar p) {
  const Scalar c = std::clamp(p, Scalar(kLogitClamp), Scalar(1) - Scalar(kLogitClamp));
  return std::log(c / (Scalar(1) - c));
}

template <std::floating_point Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

/// log(1 + exp(x)) without overflow.
template <std::floating_point Scalar>
Scalar softplus(Scalar x) {
  return x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Linear-interpolation percentile on an ascending sequence: rank position
/// alpha/100 * (n - 1), interpolated between neighbours.
double percentile_sorted(std::span<const double> sorted, double alpha);

/// percentile_sorted on a sorted copy of `values`.
double percentile(std::span<const double> values, double alpha);

/// Sum in a fixed chunked order (chunks of kSumChunk summed left to right,
/// then chunk totals left to right); bitwise reproducible for a given input.
inline constexpr std::size_t kSumChunk = 4096;
double ordered_sum(std::span<const double> values);

/// FNV-1a 64-bit over a byte stream; used to fingerprint fitting data.
class Fingerprint {
 public:
  void update(const void* data, std::size_t bytes);

  template <typename T>
  void update(std::span<const T> values) {
    update(values.data(), values.size_bytes());
  }

  void update_value(std::int64_t v) { update(&v, sizeof v); }

  std::uint64_t value() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace segdefer
