#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "segdefer/calibration.hpp"
#include "segdefer/deferral.hpp"
#include "segdefer/maps.hpp"
#include "segdefer/metrics.hpp"

namespace segdefer {

inline constexpr const char* kVersion = "0.3.0";

/// One evaluated image. `unc` is optional; without it the report has no
/// Unc-AUROC, deferral or curve sections.
struct EvalImage {
  std::string id;
  ProbMap pred;
  GroundTruthMask gt;
  std::optional<UncertaintyMap> unc;
};

struct EvaluateOptions {
  AucMode auc_mode = AucMode::exact;
  int ece_bins = kDefaultEceBins;
  AccuracyMode ece_accuracy = AccuracyMode::positive_frequency;
  std::vector<double> grid = coverage_grid();
  /// Metric targets without a curve name refer to the Dice curve.
  std::vector<OperatingTarget> targets = {OperatingTarget::parse("dice>=0.82"),
                                          OperatingTarget::parse("coverage=0.9"),
                                          OperatingTarget::parse("coverage=0.75")};
  /// Applied to every image with `unc`; also decides the curve ranking
  /// score (the confidence-aware score for that policy, else `unc`).
  std::optional<DeferralModel> model;
  std::optional<double> aucc_extension;
  /// Write each image's ranking score into the report.
  bool embed_scores = false;
  int threads = 1;
  /// Free-form metadata merged into the report (method, seed, config echo).
  nlohmann::json metadata = nlohmann::json::object();
};

struct ImageMetrics {
  std::string id;
  Confusion counts;
  double dice = 0.0;
  double iou = 0.0;
  bool empty_convention = false;
  std::optional<double> auc;
  double ece = 0.0;
  double error_before = 0.0;
  std::optional<double> unc_auroc;
  std::optional<double> coverage;
  std::optional<double> error_after;
  std::optional<double> err;
  std::optional<double> dice_accepted;
  std::optional<DeferralF1> deferral;
  std::optional<std::vector<double>> scores;
};

struct PooledMetrics {
  double dice = 0.0;
  double iou = 0.0;
  double dice_image_mean = 0.0;
  double iou_image_mean = 0.0;
  std::optional<double> auc;
  std::optional<double> auc_error_bound;
  double ece = 0.0;
  double error_before = 0.0;
  std::optional<double> unc_auroc;
  std::optional<double> unc_auroc_error_bound;
  std::optional<double> coverage;
  std::optional<double> error_after;
  std::optional<double> err;
  std::optional<double> dice_accepted;
  std::optional<DeferralF1> deferral;
};

struct EvaluationReport {
  std::vector<ImageMetrics> images;
  PooledMetrics pooled;
  ReliabilityTable reliability;
  std::vector<RiskCoverageCurve> curves;
  std::vector<OperatingPoint> operating_points;
  std::vector<std::string> notes;
  nlohmann::json metadata;
  /// Wall-clock seconds per stage; kept out of to_json so reports of
  /// identical runs compare equal byte for byte.
  nlohmann::json timings = nlohmann::json::object();

  nlohmann::json to_json() const;
  /// `coverage,value,defined` rows of one curve.
  static std::string curve_csv(const RiskCoverageCurve& curve);
};

EvaluationReport evaluate(std::span<const EvalImage> images, const EvaluateOptions& options = {});

/// Two-space indented dump; doubles use the shortest text that reads back
/// to the same value.
std::string dump_json(const nlohmann::json& j);

}  // namespace segdefer
