#include "segdefer/uncertainty.hpp"

namespace segdefer {

namespace {

PlaneXd mean_of(std::span<const PlaneXd> planes) {
  PlaneXd sum = planes.front();
  for (std::size_t t = 1; t < planes.size(); ++t) sum += planes[t];
  return (sum / static_cast<double>(planes.size())).min(1.0);
}

}  // namespace

McAggregate mc_aggregate(const PredictionStack& stack) {
  const auto planes = stack.planes();
  const double passes = static_cast<double>(planes.size());

  PlaneXd mean = mean_of(planes);
  PlaneXd expected_entropy = binary_entropy(planes.front());
  for (std::size_t t = 1; t < planes.size(); ++t) expected_entropy += binary_entropy(planes[t]);
  expected_entropy /= passes;

  PlaneXd mi = binary_entropy(mean) - expected_entropy;
  const double worst = mi.minCoeff();
  if (worst < -kMiNegativeTolerance) {
    throw InvariantError("mc_aggregate: mutual information " + std::to_string(worst) +
                         " is negative beyond rounding");
  }
  mi = mi.max(0.0);
  return {ProbMap(std::move(mean)),
          UncertaintyMap(std::move(mi), UncertaintyKind::mutual_information)};
}

TtaAggregate tta_aggregate(const PredictionStack& stack) {
  std::vector<PlaneXd> aligned;
  const bool invert = stack.transforms().has_value();
  if (invert) {
    const auto& ids = *stack.transforms();
    aligned.reserve(ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
      aligned.push_back(invert_transform(stack.planes()[k], ids[k]));
    }
  }
  const std::span<const PlaneXd> planes = invert ? std::span<const PlaneXd>(aligned) : stack.planes();

  PlaneXd mean = mean_of(planes);
  // Shifted by the first plane, so identical planes give exactly zero.
  const double inv_k = 1.0 / static_cast<double>(planes.size());
  PlaneXd shift_sum = PlaneXd::Zero(mean.rows(), mean.cols());
  PlaneXd shift_sq = PlaneXd::Zero(mean.rows(), mean.cols());
  for (std::size_t k = 1; k < planes.size(); ++k) {
    shift_sum += planes[k] - planes.front();
    shift_sq += (planes[k] - planes.front()).square();
  }
  PlaneXd var = (shift_sq * inv_k - (shift_sum * inv_k).square()).max(0.0);

  PlaneXd ent = binary_entropy(mean);
  return {ProbMap(std::move(mean)), UncertaintyMap(std::move(var), UncertaintyKind::variance),
          UncertaintyMap(std::move(ent), UncertaintyKind::entropy), invert};
}

}  // namespace segdefer
