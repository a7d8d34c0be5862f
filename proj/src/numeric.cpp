#include "segdefer/numeric.hpp"

#include <cstdio>

namespace segdefer {

double percentile_sorted(std::span<const double> sorted, double alpha) {
  if (sorted.empty()) throw std::domain_error("percentile: empty sequence");
  if (!(alpha >= 0.0 && alpha <= 100.0)) throw std::domain_error("percentile: alpha outside [0,100]");
  const std::size_t n = sorted.size();
  if (alpha == 100.0) return sorted[n - 1];
  const double pos = alpha / 100.0 * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= n) return sorted[n - 1];
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double percentile(std::span<const double> values, double alpha) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return percentile_sorted(sorted, alpha);
}

double ordered_sum(std::span<const double> values) {
  double total = 0.0;
  for (std::size_t start = 0; start < values.size(); start += kSumChunk) {
    const std::size_t end = std::min(values.size(), start + kSumChunk);
    double chunk = 0.0;
    for (std::size_t i = start; i < end; ++i) chunk += values[i];
    total += chunk;
  }
  return total;
}

void Fingerprint::update(const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    state_ ^= p[i];
    state_ *= 0x100000001b3ULL;
  }
}

std::string Fingerprint::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

}  // namespace segdefer
