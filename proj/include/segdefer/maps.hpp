#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "segdefer/error.hpp"

namespace segdefer {

using Index = Eigen::Index;

/// Row-major dense plane; the storage behind every per-pixel map.
template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using PlaneXd = Plane<double>;
using PlaneXu8 = Plane<std::uint8_t>;

enum class SourceTag { mc_dropout, tta, ensemble, other };

enum class UncertaintyKind { mutual_information, variance, entropy, confidence_aware_score };

/// The six exact square-grid transforms used for test-time augmentation.
enum class GeomTransform { identity, hflip, vflip, rot90, rot180, rot270 };

std::string_view to_string(SourceTag tag);
std::string_view to_string(UncertaintyKind kind);
std::string_view to_string(GeomTransform t);
SourceTag parse_source_tag(std::string_view s);
UncertaintyKind parse_uncertainty_kind(std::string_view s);
GeomTransform parse_transform(std::string_view s);

namespace detail {

template <typename Scalar>
class PlaneHolder {
 public:
  using scalar_type = Scalar;

  const Plane<Scalar>& values() const noexcept { return values_; }
  Index rows() const noexcept { return values_.rows(); }
  Index cols() const noexcept { return values_.cols(); }
  Index size() const noexcept { return values_.size(); }
  Scalar operator()(Index r, Index c) const { return values_(r, c); }

  /// Row-major flat view.
  std::span<const Scalar> flat() const noexcept {
    return {values_.data(), static_cast<std::size_t>(values_.size())};
  }

 protected:
  explicit PlaneHolder(Plane<Scalar> values) : values_(std::move(values)) {
    if (values_.rows() < 1 || values_.cols() < 1) {
      throw ShapeError("map must have height >= 1 and width >= 1");
    }
  }

  Plane<Scalar> values_;
};

}  // namespace detail

/// Per-pixel probabilities in [0,1].
class ProbMap : public detail::PlaneHolder<double> {
 public:
  explicit ProbMap(PlaneXd values);
};

/// Per-pixel finite logits.
class LogitMap : public detail::PlaneHolder<double> {
 public:
  explicit LogitMap(PlaneXd values);
};

/// Binary labels, exactly 0 or 1.
class GroundTruthMask : public detail::PlaneHolder<std::uint8_t> {
 public:
  explicit GroundTruthMask(PlaneXu8 values);
};

/// accept = 1, defer = 0.
class DecisionMap : public detail::PlaneHolder<std::uint8_t> {
 public:
  explicit DecisionMap(PlaneXu8 values);

  Index accepted() const noexcept;
  double coverage() const noexcept;
};

/// Nonnegative per-pixel uncertainty with kind-specific upper bounds
/// (variance <= 0.25, entropy and MI <= ln 2).
class UncertaintyMap : public detail::PlaneHolder<double> {
 public:
  UncertaintyMap(PlaneXd values, UncertaintyKind kind);

  UncertaintyKind kind() const noexcept { return kind_; }

 private:
  UncertaintyKind kind_;
};

/// T (or K) per-pass probability planes of one image.
///
/// `transforms` is present only for TTA stacks whose planes are still in
/// transformed orientation; one id per plane, each id at most once.
class PredictionStack {
 public:
  PredictionStack(std::vector<PlaneXd> planes, SourceTag source,
                  std::optional<std::vector<GeomTransform>> transforms = std::nullopt);

  Index passes() const noexcept { return static_cast<Index>(planes_.size()); }
  Index rows() const noexcept { return planes_.front().rows(); }
  Index cols() const noexcept { return planes_.front().cols(); }
  const PlaneXd& plane(Index t) const { return planes_.at(static_cast<std::size_t>(t)); }
  std::span<const PlaneXd> planes() const noexcept { return planes_; }
  SourceTag source() const noexcept { return source_; }
  const std::optional<std::vector<GeomTransform>>& transforms() const noexcept {
    return transforms_;
  }

 private:
  std::vector<PlaneXd> planes_;
  SourceTag source_;
  std::optional<std::vector<GeomTransform>> transforms_;
};

template <typename A, typename B>
bool same_shape(const A& a, const B& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, std::string_view what) {
  if (!same_shape(a, b)) {
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

/// Hard prediction 1[p > 0.5].
PlaneXu8 hard_prediction(const ProbMap& p);

/// Error indicator 1[hard(p) != y].
PlaneXu8 error_indicator(const ProbMap& p, const GroundTruthMask& gt);

}  // namespace segdefer
