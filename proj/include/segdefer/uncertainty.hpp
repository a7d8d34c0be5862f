#pragma once

#include "segdefer/maps.hpp"
#include "segdefer/numeric.hpp"

namespace segdefer {

/// The transform undoing `t`: rot90 <-> rot270, every other id is self-inverse.
constexpr GeomTransform inverse(GeomTransform t) {
  switch (t) {
    case GeomTransform::rot90: return GeomTransform::rot270;
    case GeomTransform::rot270: return GeomTransform::rot90;
    default: return t;
  }
}

constexpr bool is_rotation(GeomTransform t) {
  return t == GeomTransform::rot90 || t == GeomTransform::rot180 || t == GeomTransform::rot270;
}

/// Pure index permutation of a plane. Rotations are counter-clockwise
/// (rot90 moves the top-right corner to the top-left) and need a square
/// plane; anything else throws ShapeError.
template <typename Scalar>
Plane<Scalar> apply_transform(const Plane<Scalar>& m, GeomTransform t) {
  if (is_rotation(t) && m.rows() != m.cols()) {
    throw ShapeError("rotation needs a square map, got " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  }
  switch (t) {
    case GeomTransform::identity: return m;
    case GeomTransform::hflip: return m.rowwise().reverse();
    case GeomTransform::vflip: return m.colwise().reverse();
    case GeomTransform::rot90: return m.transpose().colwise().reverse();
    case GeomTransform::rot180: return m.reverse();
    case GeomTransform::rot270: return m.transpose().rowwise().reverse();
  }
  return m;
}

template <typename Scalar>
Plane<Scalar> invert_transform(const Plane<Scalar>& m, GeomTransform t) {
  return apply_transform(m, inverse(t));
}

inline ProbMap apply_transform(const ProbMap& m, GeomTransform t) {
  return ProbMap(apply_transform(m.values(), t));
}

inline ProbMap invert_transform(const ProbMap& m, GeomTransform t) {
  return ProbMap(invert_transform(m.values(), t));
}

struct McAggregate {
  ProbMap mean;
  UncertaintyMap mutual_information;
};

/// Mean over passes and per-pixel mutual information
/// H(mean) - mean_t H(p_t), in nats. Rounding noise below zero is clamped;
/// anything under -kMiNegativeTolerance throws InvariantError.
inline constexpr double kMiNegativeTolerance = 1e-9;
McAggregate mc_aggregate(const PredictionStack& stack);

struct TtaAggregate {
  ProbMap mean;
  UncertaintyMap variance;
  UncertaintyMap entropy;
  /// True when planes were mapped back through their inverse transforms.
  bool inverted = false;
};

/// Aggregates TTA passes: inverse-transforms planes that carry transform
/// ids, then mean, population variance (divisor K) and entropy of the mean.
TtaAggregate tta_aggregate(const PredictionStack& stack);

/// Per-pixel 2|p - 0.5|.
template <typename Derived>
auto confidence(const Eigen::ArrayBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  return Scalar(2) * (p - Scalar(0.5)).abs();
}

inline PlaneXd confidence_map(const ProbMap& mean) { return confidence(mean.values()); }

}  // namespace segdefer
