#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "segdefer/maps.hpp"

namespace segdefer {

enum class Policy { global, adaptive, confidence_aware };
enum class Criterion { max_f1, coverage_dice };

std::string_view to_string(Policy p);
std::string_view to_string(Criterion c);
Policy parse_policy(std::string_view s);
Criterion parse_criterion(std::string_view s);

inline constexpr double kDefaultDiceFloor = 0.82;

/// A fitted deferral policy. Only the fields of the active policy are set:
/// `tau` for global and confidence-aware, `alpha` for adaptive, `dice_floor`
/// for the coverage-Dice criterion.
struct DeferralModel {
  Policy policy = Policy::global;
  std::optional<double> tau;
  std::optional<double> alpha;
  Criterion criterion = Criterion::max_f1;
  std::optional<double> dice_floor;
  std::string fitted_on;

  /// Throws std::invalid_argument when the populated fields do not match the
  /// policy or a value is out of range.
  void validate() const;

  nlohmann::json to_json() const;
  static DeferralModel from_json(const nlohmann::json& j);
};

/// accept iff u <= tau.
DecisionMap defer_global(const UncertaintyMap& unc, double tau);

/// accept iff u <= the image's own alpha-th percentile of u.
DecisionMap defer_adaptive(const UncertaintyMap& unc, double alpha);

/// s = u * (1 - c), c = 2|p - 0.5|.
UncertaintyMap confidence_aware_score(const UncertaintyMap& unc, const ProbMap& mean);

/// accept iff s <= tau_s; `score` must be a confidence-aware score map.
DecisionMap defer_confidence_aware(const UncertaintyMap& score, double tau_s);

/// Applies a fitted model to one image.
DecisionMap apply_policy(const DeferralModel& model, const UncertaintyMap& unc, const ProbMap& mean);

struct DeferralF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Deferral precision/recall/F1 from counts; empty denominators give 0.
DeferralF1 deferral_f1(Index deferred, Index deferred_errors, Index errors);

/// Deferred pixels treated as detections of hard-prediction errors.
DeferralF1 deferral_f1(const DecisionMap& decision, const ProbMap& pred, const GroundTruthMask& gt);

struct ValidationItem {
  ProbMap pred;
  UncertaintyMap unc;
  GroundTruthMask gt;
};

/// Nonempty list of per-image triples with consistent shapes.
class ValidationSet {
 public:
  explicit ValidationSet(std::vector<ValidationItem> items);

  const std::vector<ValidationItem>& items() const noexcept { return items_; }
  Index pixel_count() const noexcept { return pixels_; }
  /// FNV-1a fingerprint of shapes and values.
  std::string fingerprint() const;

 private:
  std::vector<ValidationItem> items_;
  Index pixels_ = 0;
};

struct FitResult {
  bool feasible = false;
  /// Set when feasible.
  std::optional<DeferralModel> model;
  /// Pooled validation statistics at the chosen threshold, or, when
  /// infeasible, the best achievable Dice on accepted pixels.
  double coverage = 0.0;
  double f1 = 0.0;
  double dice = 0.0;
  double best_dice = 0.0;
};

/// Percentile grid swept for global and confidence-aware thresholds:
/// 0.5, 1.0, ..., 99.5 and finally 100 (the all-accept threshold).
std::vector<double> tau_percentile_grid();
/// Integer alphas 50..100 swept for the adaptive policy.
std::vector<double> alpha_grid();

/// Selects tau (or alpha) on validation data. max_f1 maximises pooled
/// deferral F1; coverage_dice takes the largest coverage whose pooled
/// accepted-pixel Dice is >= dice_floor. Ties prefer higher coverage, then
/// the earlier grid entry.
FitResult fit_threshold(const ValidationSet& val, Policy policy, Criterion criterion,
                        double dice_floor = kDefaultDiceFloor);

}  // namespace segdefer
