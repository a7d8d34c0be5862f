#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "segdefer/maps.hpp"

namespace segdefer {

enum class CalibrationMode { calibrated, overconfident, underconfident };

std::string_view to_string(CalibrationMode m);
CalibrationMode parse_calibration_mode(std::string_view s);

/// Parameters of a synthetic fixture with planted structure.
///
/// Ground truth is thresholded smoothed noise with 12.5% positives. The
/// mean prediction errs on exactly round(error_rate * H * W) pixels and is
/// calibrated, except that the model's logits are `temperature` times the
/// calibrated logits, so temperature scaling recovers `temperature`
/// (overconfident: > 1, underconfident: < 1). Per-pixel pass spread is set
/// so that 2 * AUROC(uncertainty, error) - 1 (the rank correlation between
/// uncertainty and the error indicator, normalised to [0,1]) is close to
/// `unc_error_corr`.
struct SynthSpec {
  Index height = 64;
  Index width = 64;
  int n_images = 1;
  double error_rate = 0.05;
  double unc_error_corr = 0.8;
  CalibrationMode calibration = CalibrationMode::calibrated;
  double temperature = 1.0;
  int passes = 30;
  /// mc_dropout: spread targets mutual information; tta: spread targets variance.
  SourceTag source = SourceTag::mc_dropout;
  /// TTA only: store planes in transformed orientation with transform ids
  /// (needs a square map and at most 6 passes).
  bool tta_transformed = false;
  std::uint64_t seed = 0;

  /// Throws std::domain_error naming the infeasible or invalid field.
  void validate() const;

  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

struct SynthImage {
  PredictionStack stack;
  GroundTruthMask gt;
};

/// Image `index` of the fixture; a pure function of (spec, index).
SynthImage generate_image(const SynthSpec& spec, int index);

std::vector<SynthImage> generate(const SynthSpec& spec);

}  // namespace segdefer
