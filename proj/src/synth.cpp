#include "segdefer/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "segdefer/numeric.hpp"
#include "segdefer/rng.hpp"
#include "segdefer/uncertainty.hpp"

namespace segdefer {

using nlohmann::json;

namespace {

// Fraction of positive ground-truth pixels (vessels cover roughly 10-15%).
constexpr double kPositiveFraction = 0.125;
constexpr int kBlurRadius = 2;
constexpr int kBlurPasses = 2;
// Planted pixels draw their spread level from [0, 0.45) (correct) or
// (0.55, 1] (errors); the gap keeps perfect planting strictly separated.
constexpr double kPlantLow = 0.45;
constexpr double kPlantHigh = 0.55;
// Fraction of the largest achievable spread used at spread level 1.
constexpr double kSpreadHeadroom = 0.9;

constexpr GeomTransform kTtaOrder[] = {GeomTransform::identity, GeomTransform::hflip,  GeomTransform::vflip,
                                       GeomTransform::rot90,    GeomTransform::rot180, GeomTransform::rot270};

double effective_temperature(const SynthSpec& s) {
  return s.calibration == CalibrationMode::calibrated ? 1.0 : s.temperature;
}

// Mixing probability of planted spread levels giving 2 AUROC - 1 = corr:
// corr = 1.1 rho - 0.1 rho^2 for the bands above.
double planting_probability(double corr) {
  return (1.1 - std::sqrt(1.21 - 0.4 * corr)) / 0.2;
}

void box_blur(PlaneXd& img) {
  const Index rows = img.rows();
  const Index cols = img.cols();
  PlaneXd tmp(rows, cols);
  const double norm = 1.0 / (2 * kBlurRadius + 1);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      double s = 0.0;
      for (int d = -kBlurRadius; d <= kBlurRadius; ++d) s += img(r, std::clamp<Index>(c + d, 0, cols - 1));
      tmp(r, c) = s * norm;
    }
  }
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      double s = 0.0;
      for (int d = -kBlurRadius; d <= kBlurRadius; ++d) s += tmp(std::clamp<Index>(r + d, 0, rows - 1), c);
      img(r, c) = s * norm;
    }
  }
}

// Mutual information of `passes` predictions split evenly into m + s and
// m - s (one pass at m when the count is odd).
double balanced_mi(double m, double s, int passes) {
  const int half = passes / 2;
  const int mid = passes % 2;
  const double h_mean = detail::entropy_unchecked(m);
  const double expected = (half * (detail::entropy_unchecked(std::min(1.0, m + s)) +
                                   detail::entropy_unchecked(std::max(0.0, m - s))) +
                           mid * h_mean) /
                          passes;
  return h_mean - expected;
}

double solve_mi_spread(double m, double target, int passes) {
  double lo = 0.0;
  double hi = std::min(m, 1.0 - m);
  if (balanced_mi(m, hi, passes) <= target) return hi;
  for (int it = 0; it < 50; ++it) {
    const double mid = 0.5 * (lo + hi);
    (balanced_mi(m, mid, passes) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Picks `k` distinct entries of `pool` (partial Fisher-Yates).
void mark_random_subset(std::vector<Index> pool, std::size_t k, SplitMix64& rng, std::vector<std::uint8_t>& mark) {
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
    mark[static_cast<std::size_t>(pool[i])] = 1;
  }
}

}  // namespace

std::string_view to_string(CalibrationMode m) {
  switch (m) {
    case CalibrationMode::calibrated: return "calibrated";
    case CalibrationMode::overconfident: return "overconfident";
    case CalibrationMode::underconfident: return "underconfident";
  }
  return "?";
}

CalibrationMode parse_calibration_mode(std::string_view s) {
  if (s == "calibrated") return CalibrationMode::calibrated;
  if (s == "overconfident") return CalibrationMode::overconfident;
  if (s == "underconfident") return CalibrationMode::underconfident;
  throw std::domain_error("unknown calibration mode '" + std::string(s) + "'");
}

void SynthSpec::validate() const {
  if (height < 1 || width < 1) throw std::domain_error("synth: height and width must be >= 1");
  if (n_images < 1) throw std::domain_error("synth: n_images must be >= 1");
  if (passes < 2) throw std::domain_error("synth: passes must be >= 2 to plant pass spread");
  if (!(error_rate > 0.0 && error_rate < 1.0)) throw std::domain_error("synth: error_rate must lie in (0,1)");
  if (!(error_rate < kPositiveFraction)) {
    throw std::domain_error("synth: error_rate " + std::to_string(error_rate) +
                            " is infeasible for a calibrated fixture with " +
                            std::to_string(kPositiveFraction) + " positives (must be below it)");
  }
  const auto pixels = static_cast<double>(height * width);
  const double errors = std::round(error_rate * pixels);
  if (errors < 1.0) throw std::domain_error("synth: error_rate * H * W rounds to zero error pixels");
  if (!(unc_error_corr >= 0.0 && unc_error_corr <= 1.0)) {
    throw std::domain_error("synth: infeasible correlation target " + std::to_string(unc_error_corr) +
                            " (achievable range is [0,1])");
  }
  switch (calibration) {
    case CalibrationMode::calibrated: break;
    case CalibrationMode::overconfident:
      if (!(temperature > 1.0) || !std::isfinite(temperature)) {
        throw std::domain_error("synth: overconfident mode needs temperature > 1");
      }
      break;
    case CalibrationMode::underconfident:
      if (!(temperature >= 0.05 && temperature < 1.0)) {
        throw std::domain_error("synth: underconfident mode needs temperature in [0.05, 1)");
      }
      break;
  }
  if (source != SourceTag::mc_dropout && source != SourceTag::tta && source != SourceTag::ensemble) {
    throw std::domain_error("synth: source must be mc_dropout, ensemble or tta");
  }
  if (tta_transformed) {
    if (source != SourceTag::tta) throw std::domain_error("synth: tta_transformed needs source tta");
    if (height != width) throw std::domain_error("synth: tta_transformed needs a square map");
    if (passes > 6) throw std::domain_error("synth: tta_transformed supports at most 6 passes");
  }
}

json SynthSpec::to_json() const {
  return json{{"height", height},
              {"width", width},
              {"n_images", n_images},
              {"error_rate", error_rate},
              {"unc_error_corr", unc_error_corr},
              {"calibration_mode", to_string(calibration)},
              {"temperature", temperature},
              {"passes", passes},
              {"source", to_string(source)},
              {"tta_transformed", tta_transformed},
              {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const json& j) {
  static const char* const kKeys[] = {"height", "width", "n_images", "error_rate", "unc_error_corr",
                                      "calibration_mode", "temperature", "passes", "source",
                                      "tta_transformed", "seed"};
  for (const auto& item : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), item.key()) == std::end(kKeys)) {
      throw std::domain_error("SynthSpec: unknown key '" + item.key() + "'");
    }
  }
  SynthSpec s;
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.n_images = j.value("n_images", s.n_images);
  s.error_rate = j.value("error_rate", s.error_rate);
  s.unc_error_corr = j.value("unc_error_corr", s.unc_error_corr);
  s.calibration = parse_calibration_mode(j.value("calibration_mode", std::string("calibrated")));
  s.temperature = j.value("temperature", s.temperature);
  s.passes = j.value("passes", s.passes);
  s.source = parse_source_tag(j.value("source", std::string("mc_dropout")));
  s.tta_transformed = j.value("tta_transformed", s.tta_transformed);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

SynthImage generate_image(const SynthSpec& spec, int index) {
  spec.validate();
  if (index < 0 || index >= spec.n_images) throw std::out_of_range("generate_image: index out of range");
  SplitMix64 rng(SplitMix64(spec.seed).derive(static_cast<std::uint64_t>(index)));
  const Index rows = spec.height;
  const Index cols = spec.width;
  const auto n = static_cast<std::size_t>(rows * cols);

  // Ground truth: smoothed noise above its 87.5th percentile.
  PlaneXd noise(rows, cols);
  for (Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.uniform();
  for (int p = 0; p < kBlurPasses; ++p) box_blur(noise);
  const double cut = percentile(std::span<const double>(noise.data(), n), 100.0 * (1.0 - kPositiveFraction));
  const PlaneXu8 labels = (noise > cut).cast<std::uint8_t>();
  std::vector<Index> positives;
  std::vector<Index> negatives;
  for (std::size_t i = 0; i < n; ++i) (labels.data()[i] ? positives : negatives).push_back(static_cast<Index>(i));
  if (positives.empty() || negatives.empty()) throw std::domain_error("synth: map too small for a two-class mask");

  // Calibrated model: q = eps or 1 - eps with eps ~ g on [eps_min, 0.5],
  // E[eps] = error_rate; the positive-leaning component has weight w so
  // that E[q] matches the positive fraction.
  const double r = spec.error_rate;
  const double pi = static_cast<double>(positives.size()) / static_cast<double>(n);
  if (!(r < pi)) throw std::domain_error("synth: error_rate must be below the mask's positive fraction");
  const double eps_min = std::min(0.02, r / 2.0);
  const double beta_b = (0.5 - eps_min) / (r - eps_min) - 1.0;
  const double w = (pi - r) / (1.0 - 2.0 * r);

  const auto n_err = static_cast<std::size_t>(std::llround(r * static_cast<double>(n)));
  auto n_err_pos = static_cast<std::size_t>(std::llround(static_cast<double>(n_err) * (1.0 - w)));
  n_err_pos = std::min({n_err_pos, n_err, positives.size()});
  const std::size_t n_err_neg = n_err - n_err_pos;
  if (n_err_neg > negatives.size()) throw std::domain_error("synth: more errors than negative pixels");
  std::vector<std::uint8_t> is_error(n, 0);
  mark_random_subset(positives, n_err_pos, rng, is_error);
  mark_random_subset(negatives, n_err_neg, rng, is_error);

  const double temperature = effective_temperature(spec);
  const double rho = planting_probability(spec.unc_error_corr);
  const int passes = spec.passes;
  const int half = passes / 2;
  const double m_extreme = sigmoid(temperature * logit(1.0 - eps_min));
  const bool tta = spec.source == SourceTag::tta;
  const double spread_scale =
      tta ? kSpreadHeadroom * (1.0 - m_extreme) * (1.0 - m_extreme) * (2.0 * half / passes)
          : kSpreadHeadroom * balanced_mi(m_extreme, 1.0 - m_extreme, passes);

  std::vector<PlaneXd> planes(static_cast<std::size_t>(passes), PlaneXd(rows, cols));
  std::vector<int> signs(static_cast<std::size_t>(passes), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool error = is_error[i] != 0;
    double eps = 0.0;
    for (;;) {
      eps = eps_min + (0.5 - eps_min) * (1.0 - std::pow(rng.uniform_open(), 1.0 / beta_b));
      const double accept = error ? eps / 0.5 : (1.0 - eps) / (1.0 - eps_min);
      if (rng.uniform() < accept) break;
    }
    const bool positive = labels.data()[i] != 0;
    const bool pred = error ? !positive : positive;
    const double mean = sigmoid(temperature * logit(pred ? 1.0 - eps : eps));

    double level = 0.0;
    if (rng.uniform() < rho) {
      level = error ? kPlantHigh + (1.0 - kPlantHigh) * rng.uniform() : kPlantLow * rng.uniform();
    } else {
      level = rng.uniform();
    }
    const double target = spread_scale * level;
    const double spread = tta ? std::sqrt(target * passes / (2.0 * half)) : solve_mi_spread(mean, target, passes);

    for (int t = 0; t < passes; ++t) signs[static_cast<std::size_t>(t)] = t < half ? 1 : (t < 2 * half ? -1 : 0);
    for (int t = passes - 1; t > 0; --t) {
      std::swap(signs[static_cast<std::size_t>(t)], signs[rng.below(static_cast<std::uint64_t>(t) + 1)]);
    }
    for (int t = 0; t < passes; ++t) {
      planes[static_cast<std::size_t>(t)].data()[i] =
          std::clamp(mean + signs[static_cast<std::size_t>(t)] * spread, 0.0, 1.0);
    }
  }

  std::optional<std::vector<GeomTransform>> ids;
  if (spec.tta_transformed) {
    ids.emplace();
    for (int t = 0; t < passes; ++t) {
      const GeomTransform id = kTtaOrder[t];
      ids->push_back(id);
      planes[static_cast<std::size_t>(t)] = apply_transform(planes[static_cast<std::size_t>(t)], id);
    }
  }
  return {PredictionStack(std::move(planes), spec.source, std::move(ids)), GroundTruthMask(labels)};
}

std::vector<SynthImage> generate(const SynthSpec& spec) {
  spec.validate();
  std::vector<SynthImage> out;
  out.reserve(static_cast<std::size_t>(spec.n_images));
  for (int i = 0; i < spec.n_images; ++i) out.push_back(generate_image(spec, i));
  return out;
}

}  // namespace segdefer
