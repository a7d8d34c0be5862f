#include "segdefer/maps.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace segdefer {

namespace {

// Rounding slack allowed on the analytic upper bounds of uncertainty kinds.
constexpr double kBoundSlack = 1e-12;

constexpr std::array<std::string_view, 4> kSourceNames = {"mc_dropout", "tta", "ensemble", "other"};
constexpr std::array<std::string_view, 4> kKindNames = {"mutual_information", "variance", "entropy",
                                                        "confidence_aware_score"};
constexpr std::array<std::string_view, 6> kTransformNames = {"identity", "hflip",  "vflip",
                                                             "rot90",    "rot180", "rot270"};

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::string_view, N>& names, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<Enum>(i);
  }
  throw std::domain_error(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

template <typename Scalar>
void require_binary(const Plane<Scalar>& v, const char* what) {
  if (((v != Scalar(0)) && (v != Scalar(1))).any()) {
    throw std::domain_error(std::string(what) + ": values must be exactly 0 or 1");
  }
}

}  // namespace

std::string_view to_string(SourceTag tag) { return kSourceNames.at(static_cast<std::size_t>(tag)); }
std::string_view to_string(UncertaintyKind kind) { return kKindNames.at(static_cast<std::size_t>(kind)); }
std::string_view to_string(GeomTransform t) { return kTransformNames.at(static_cast<std::size_t>(t)); }

SourceTag parse_source_tag(std::string_view s) {
  return parse_enum<SourceTag>(s, kSourceNames, "source tag");
}
UncertaintyKind parse_uncertainty_kind(std::string_view s) {
  return parse_enum<UncertaintyKind>(s, kKindNames, "uncertainty kind");
}
GeomTransform parse_transform(std::string_view s) {
  return parse_enum<GeomTransform>(s, kTransformNames, "transform id");
}

ProbMap::ProbMap(PlaneXd values) : PlaneHolder(std::move(values)) {
  // Negated comparison also rejects NaN.
  if (!((values_ >= 0.0) && (values_ <= 1.0)).all()) {
    throw std::domain_error("ProbMap: values must lie in [0,1]");
  }
}

LogitMap::LogitMap(PlaneXd values) : PlaneHolder(std::move(values)) {
  if (!values_.isFinite().all()) throw std::domain_error("LogitMap: non-finite logit");
}

GroundTruthMask::GroundTruthMask(PlaneXu8 values) : PlaneHolder(std::move(values)) {
  require_binary(values_, "GroundTruthMask");
}

DecisionMap::DecisionMap(PlaneXu8 values) : PlaneHolder(std::move(values)) {
  require_binary(values_, "DecisionMap");
}

Index DecisionMap::accepted() const noexcept { return (values_ != 0).count(); }

double DecisionMap::coverage() const noexcept {
  return static_cast<double>(accepted()) / static_cast<double>(size());
}

UncertaintyMap::UncertaintyMap(PlaneXd values, UncertaintyKind kind)
    : PlaneHolder(std::move(values)), kind_(kind) {
  if (!values_.isFinite().all() || !(values_ >= 0.0).all()) {
    throw std::domain_error("UncertaintyMap: values must be finite and >= 0");
  }
  double bound = std::numeric_limits<double>::infinity();
  if (kind_ == UncertaintyKind::variance) bound = 0.25;
  if (kind_ == UncertaintyKind::mutual_information || kind_ == UncertaintyKind::entropy) {
    bound = std::log(2.0);
  }
  if (!(values_ <= bound + kBoundSlack).all()) {
    throw std::domain_error("UncertaintyMap: value above the bound for kind " +
                            std::string(to_string(kind_)));
  }
}

PredictionStack::PredictionStack(std::vector<PlaneXd> planes, SourceTag source,
                                 std::optional<std::vector<GeomTransform>> transforms)
    : planes_(std::move(planes)), source_(source), transforms_(std::move(transforms)) {
  if (planes_.empty()) throw std::domain_error("PredictionStack: no passes");
  const auto& first = planes_.front();
  if (first.rows() < 1 || first.cols() < 1) throw ShapeError("PredictionStack: empty plane");
  for (const auto& p : planes_) {
    require_same_shape(p, first, "PredictionStack planes");
    if (!((p >= 0.0) && (p <= 1.0)).all()) {
      throw std::domain_error("PredictionStack: values must lie in [0,1]");
    }
  }
  if (transforms_) {
    if (source_ != SourceTag::tta) {
      throw std::invalid_argument("PredictionStack: transform ids are only valid for tta stacks");
    }
    if (transforms_->size() != planes_.size()) {
      throw std::invalid_argument("PredictionStack: one transform id per pass required");
    }
    std::set<GeomTransform> seen(transforms_->begin(), transforms_->end());
    if (seen.size() != transforms_->size()) {
      throw std::domain_error("PredictionStack: duplicate transform id");
    }
  }
}

PlaneXu8 hard_prediction(const ProbMap& p) { return (p.values() > 0.5).cast<std::uint8_t>(); }

PlaneXu8 error_indicator(const ProbMap& p, const GroundTruthMask& gt) {
  require_same_shape(p, gt, "error_indicator");
  return (hard_prediction(p) != gt.values()).cast<std::uint8_t>();
}

}  // namespace segdefer
