#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "segdefer/maps.hpp"
#include "segdefer/rng.hpp"

namespace fixtures {

using namespace segdefer;

inline PlaneXd uniform_plane(SplitMix64& rng, Index rows, Index cols) {
  PlaneXd p(rows, cols);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform();
  return p;
}

inline ProbMap random_prob(SplitMix64& rng, Index rows, Index cols) { return ProbMap(uniform_plane(rng, rows, cols)); }

inline GroundTruthMask random_mask(SplitMix64& rng, Index rows, Index cols, double positive = 0.3) {
  PlaneXu8 m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < positive ? 1 : 0;
  return GroundTruthMask(m);
}

inline PredictionStack random_stack(SplitMix64& rng, Index passes, Index rows, Index cols,
                                    SourceTag tag = SourceTag::mc_dropout) {
  std::vector<PlaneXd> planes;
  const PlaneXd base = uniform_plane(rng, rows, cols);
  for (Index t = 0; t < passes; ++t) {
    PlaneXd p(rows, cols);
    for (Index i = 0; i < p.size(); ++i) p.data()[i] = std::clamp(base.data()[i] + 0.3 * (rng.uniform() - 0.5), 0.0, 1.0);
    planes.push_back(p);
  }
  return PredictionStack(std::move(planes), tag);
}

inline std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }
inline std::vector<std::uint8_t> to_vec(std::span<const std::uint8_t> s) { return {s.begin(), s.end()}; }

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("segdefer_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
