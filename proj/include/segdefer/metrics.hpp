#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segdefer/maps.hpp"

namespace segdefer {

struct Confusion {
  Index tp = 0;
  Index fp = 0;
  Index fn = 0;
  Index tn = 0;

  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

/// Confusion counts of a hard prediction, optionally restricted to the
/// accepted pixels of `roi`.
Confusion confusion(const PlaneXu8& pred_hard, const GroundTruthMask& gt, const DecisionMap* roi = nullptr);

/// 2TP / (2TP + FP + FN). When prediction and ground truth are both empty
/// the result is 1.0 (see is_empty_convention).
double dice(const Confusion& c);
/// TP / (TP + FP + FN), same empty convention as dice.
double iou(const Confusion& c);
/// True when neither prediction nor ground truth has a positive pixel.
inline bool is_empty_convention(const Confusion& c) { return c.tp + c.fp + c.fn == 0; }

double dice(const PlaneXu8& pred_hard, const GroundTruthMask& gt, const DecisionMap* roi = nullptr);
double iou(const PlaneXu8& pred_hard, const GroundTruthMask& gt, const DecisionMap* roi = nullptr);

/// Exact ROC AUC (Mann-Whitney with midrank ties). Throws
/// UndefinedMetricError unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct BinnedAuc {
  double auc = 0.0;
  /// Worst-case |binned - exact|: half the fraction of positive/negative
  /// pairs that share a bin. At most 2^-15 whenever no bin holds more than
  /// 2^-14 of those pairs.
  double error_bound = 0.0;
};

inline constexpr int kDefaultAucBins = 1 << 16;

/// Histogram AUC with equal-width bins over [lo, hi] (scores outside are
/// clamped into the end bins).
BinnedAuc roc_auc_binned(std::span<const double> scores, std::span<const std::uint8_t> labels, double lo,
                         double hi, int bins = kDefaultAucBins);

enum class AucMode { exact, binned };

/// Uncertainty as a detector of hard-prediction errors.
double unc_auroc(const UncertaintyMap& unc, const ProbMap& pred, const GroundTruthMask& gt);

/// Error rate of 1[p > 0.5] against gt, optionally over accepted pixels only.
/// Throws UndefinedMetricError when nothing is accepted.
double error_rate(const ProbMap& pred, const GroundTruthMask& gt, const DecisionMap* roi = nullptr);

/// (e_before - e_after) / e_before.
double err(double e_before, double e_after);

enum class CurveMetric { dice, auc, error_rate };
std::string_view to_string(CurveMetric m);
CurveMetric parse_curve_metric(std::string_view s);

struct CurvePoint {
  double coverage = 0.0;
  double value = 0.0;
  bool defined = false;
};

struct RiskCoverageCurve {
  CurveMetric metric = CurveMetric::dice;
  std::vector<CurvePoint> points;
  double aucc = 0.0;
  std::vector<std::string> notes;
};

/// `n` evenly spaced coverage levels from 0 to 1 inclusive.
std::vector<double> coverage_grid(int n = 101);

/// Trapezoidal area over the defined points. The curve is extended to
/// coverage 0 with `extension`, defaulting to the value at the smallest
/// defined positive coverage.
double aucc(std::span<const CurvePoint> points, std::optional<double> extension = std::nullopt);

/// Metric-vs-coverage curves over pooled pixels. At level q the round(q N)
/// pixels with the lowest score are accepted, ties broken by pixel index.
std::vector<RiskCoverageCurve> risk_coverage_curves(std::span<const double> score,
                                                    std::span<const double> prob,
                                                    std::span<const std::uint8_t> gt,
                                                    std::span<const CurveMetric> metrics,
                                                    std::span<const double> grid);

RiskCoverageCurve risk_coverage_curve(const UncertaintyMap& score, const ProbMap& pred,
                                      const GroundTruthMask& gt, CurveMetric metric,
                                      std::span<const double> grid);

struct OperatingTarget {
  enum class Kind { metric_at_least, coverage };
  Kind kind = Kind::metric_at_least;
  double value = 0.0;
  /// Curve a metric target refers to; unset means the caller's default.
  std::optional<CurveMetric> metric;

  /// "dice>=0.82", "metric>=0.82" or "coverage=0.9".
  static OperatingTarget parse(std::string_view text);
  std::string label() const;
};

struct OperatingPoint {
  OperatingTarget target;
  bool reachable = false;
  double coverage = 0.0;
  double value = 0.0;
};

/// Metric targets give the largest coverage whose value meets the target,
/// interpolating linearly to the crossing between grid points. Coverage
/// targets give the interpolated value at that coverage.
std::vector<OperatingPoint> operating_points(const RiskCoverageCurve& curve,
                                             std::span<const OperatingTarget> targets);

}  // namespace segdefer
