#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "segdefer/maps.hpp"

namespace segdefer {

inline constexpr double kMinTemperature = 0.05;
inline constexpr double kMaxTemperature = 100.0;

struct TemperatureModel {
  double temperature = 1.0;
  double nll_before = 0.0;  ///< mean BCE at T = 1
  double nll_after = 0.0;   ///< mean BCE at the fitted T
  std::string fitted_on;
  /// The objective does not depend on T (e.g. every logit is zero); T = 1.
  bool flat = false;

  nlohmann::json to_json() const;
  static TemperatureModel from_json(const nlohmann::json& j);
};

/// Clamped logit of every pixel (see kLogitClamp).
LogitMap to_logits(const ProbMap& p);

/// Mean binary cross-entropy of sigmoid(z / T) against the labels.
double mean_bce(std::span<const LogitMap> logits, std::span<const GroundTruthMask> gt, double temperature);

/// Minimises mean BCE over T in [kMinTemperature, kMaxTemperature] with
/// Brent's method; the result is within 1e-4 of the minimiser.
TemperatureModel fit_temperature(std::span<const LogitMap> logits, std::span<const GroundTruthMask> gt);

/// sigmoid(logit(p) / T), with p clamped before the logit.
ProbMap apply_temperature(const ProbMap& p, double temperature);
ProbMap apply_temperature(const LogitMap& z, double temperature);

/// What a reliability bin's "accuracy" measures: the frequency of positive
/// labels (default) or the fraction of pixels whose hard prediction is right.
enum class AccuracyMode { positive_frequency, correctness };

struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  Index count = 0;
  double fraction = 0.0;
  /// Empty bins report 0 for confidence, accuracy and gap.
  double confidence = 0.0;
  double accuracy = 0.0;
  double gap = 0.0;
};

struct ReliabilityTable {
  std::vector<ReliabilityBin> bins;

  /// Header `bin_lo,bin_hi,frac,conf,acc,gap`.
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

struct EceResult {
  double ece = 0.0;
  ReliabilityTable table;
};

inline constexpr int kDefaultEceBins = 15;

/// Equal-width bins over [0,1]; ECE = sum_b (n_b / N) |acc(b) - conf(b)|.
EceResult ece(std::span<const ProbMap> pred, std::span<const GroundTruthMask> gt, int bins = kDefaultEceBins,
              AccuracyMode mode = AccuracyMode::positive_frequency);
EceResult ece(const ProbMap& pred, const GroundTruthMask& gt, int bins = kDefaultEceBins,
              AccuracyMode mode = AccuracyMode::positive_frequency);

}  // namespace segdefer
