#include "segdefer/calibration.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <boost/math/tools/minima.hpp>

#include "segdefer/numeric.hpp"

namespace segdefer {

using nlohmann::json;

json TemperatureModel::to_json() const {
  return json{{"T", temperature},
              {"nll_before", nll_before},
              {"nll_after", nll_after},
              {"fitted_on", fitted_on},
              {"flat", flat}};
}

TemperatureModel TemperatureModel::from_json(const json& j) {
  TemperatureModel m;
  m.temperature = j.at("T").get<double>();
  m.nll_before = j.value("nll_before", 0.0);
  m.nll_after = j.value("nll_after", 0.0);
  m.fitted_on = j.value("fitted_on", std::string());
  m.flat = j.value("flat", false);
  if (!(m.temperature >= kMinTemperature) || !std::isfinite(m.temperature)) {
    throw std::invalid_argument("TemperatureModel: T must be finite and >= 0.05");
  }
  return m;
}

LogitMap to_logits(const ProbMap& p) {
  return LogitMap(p.values().unaryExpr([](double v) { return logit(v); }));
}

namespace {

struct Flattened {
  std::vector<double> z;
  std::vector<std::uint8_t> y;
};

Flattened flatten(std::span<const LogitMap> logits, std::span<const GroundTruthMask> gt) {
  if (logits.size() != gt.size()) throw std::invalid_argument("temperature: logits and masks differ in count");
  if (logits.empty()) throw std::domain_error("temperature: no validation data");
  Flattened f;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    require_same_shape(logits[i], gt[i], "temperature");
    f.z.insert(f.z.end(), logits[i].flat().begin(), logits[i].flat().end());
    f.y.insert(f.y.end(), gt[i].flat().begin(), gt[i].flat().end());
  }
  return f;
}

// BCE(sigmoid(x), y) = softplus(x) - y x.
double mean_bce_flat(const Flattened& f, double temperature) {
  const double inv = 1.0 / temperature;
  double total = 0.0;
  for (std::size_t start = 0; start < f.z.size(); start += kSumChunk) {
    const std::size_t end = std::min(f.z.size(), start + kSumChunk);
    double chunk = 0.0;
    for (std::size_t i = start; i < end; ++i) {
      const double x = f.z[i] * inv;
      chunk += softplus(x) - (f.y[i] ? x : 0.0);
    }
    total += chunk;
  }
  return total / static_cast<double>(f.z.size());
}

}  // namespace

double mean_bce(std::span<const LogitMap> logits, std::span<const GroundTruthMask> gt, double temperature) {
  if (!(temperature > 0.0)) throw std::domain_error("mean_bce: temperature must be > 0");
  return mean_bce_flat(flatten(logits, gt), temperature);
}

TemperatureModel fit_temperature(std::span<const LogitMap> logits, std::span<const GroundTruthMask> gt) {
  const Flattened f = flatten(logits, gt);
  Fingerprint fp;
  fp.update(std::span<const double>(f.z));
  fp.update(std::span<const std::uint8_t>(f.y));

  TemperatureModel m;
  m.fitted_on = fp.hex();
  m.nll_before = mean_bce_flat(f, 1.0);

  const bool all_zero = std::all_of(f.z.begin(), f.z.end(), [](double z) { return z == 0.0; });
  if (all_zero) {
    m.flat = true;
    m.nll_after = m.nll_before;
    return m;
  }

  auto objective = [&](double t) { return mean_bce_flat(f, t); };
  std::uintmax_t iterations = 200;
  const auto [t_star, nll_star] =
      boost::math::tools::brent_find_minima(objective, kMinTemperature, kMaxTemperature, 30, iterations);

  double best_t = t_star;
  double best_nll = nll_star;
  // Brent stops short of an endpoint minimum; the lower bound is where
  // separable data drives T.
  if (const double at_min = objective(kMinTemperature); at_min <= best_nll) {
    best_t = kMinTemperature;
    best_nll = at_min;
  }
  if (best_nll > m.nll_before) {
    best_t = 1.0;
    best_nll = m.nll_before;
  }
  m.temperature = best_t;
  m.nll_after = best_nll;
  return m;
}

ProbMap apply_temperature(const LogitMap& z, double temperature) {
  if (!(temperature >= kMinTemperature)) throw std::domain_error("apply_temperature: T must be >= 0.05");
  const double inv = 1.0 / temperature;
  return ProbMap(z.values().unaryExpr([inv](double x) { return sigmoid(x * inv); }));
}

ProbMap apply_temperature(const ProbMap& p, double temperature) {
  return apply_temperature(to_logits(p), temperature);
}

std::string ReliabilityTable::to_csv() const {
  std::ostringstream out;
  out << "bin_lo,bin_hi,frac,conf,acc,gap\n";
  char line[256];
  for (const auto& b : bins) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", b.lo, b.hi, b.fraction,
                  b.confidence, b.accuracy, b.gap);
    out << line;
  }
  return out.str();
}

json ReliabilityTable::to_json() const {
  json rows = json::array();
  for (const auto& b : bins) {
    rows.push_back({{"bin_lo", b.lo},
                    {"bin_hi", b.hi},
                    {"count", b.count},
                    {"frac", b.fraction},
                    {"conf", b.confidence},
                    {"acc", b.accuracy},
                    {"gap", b.gap}});
  }
  return rows;
}

EceResult ece(std::span<const ProbMap> pred, std::span<const GroundTruthMask> gt, int bins, AccuracyMode mode) {
  if (bins < 1) throw std::domain_error("ece: bin count must be >= 1");
  if (pred.size() != gt.size()) throw std::invalid_argument("ece: predictions and masks differ in count");
  if (pred.empty()) throw std::domain_error("ece: no data");

  const auto nb = static_cast<std::size_t>(bins);
  std::vector<Index> count(nb, 0);
  std::vector<double> conf_sum(nb, 0.0);
  std::vector<Index> hits(nb, 0);
  Index total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    require_same_shape(pred[i], gt[i], "ece");
    const auto p = pred[i].flat();
    const auto y = gt[i].flat();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const auto b = std::min(nb - 1, static_cast<std::size_t>(p[k] * static_cast<double>(bins)));
      ++count[b];
      conf_sum[b] += p[k];
      const bool positive = y[k] != 0;
      hits[b] += mode == AccuracyMode::positive_frequency ? positive : ((p[k] > 0.5) == positive);
    }
    total += static_cast<Index>(p.size());
  }

  EceResult r;
  for (std::size_t b = 0; b < nb; ++b) {
    ReliabilityBin bin;
    bin.lo = static_cast<double>(b) / bins;
    bin.hi = static_cast<double>(b + 1) / bins;
    bin.count = count[b];
    bin.fraction = static_cast<double>(count[b]) / static_cast<double>(total);
    if (count[b] > 0) {
      bin.confidence = conf_sum[b] / static_cast<double>(count[b]);
      bin.accuracy = static_cast<double>(hits[b]) / static_cast<double>(count[b]);
      bin.gap = std::fabs(bin.accuracy - bin.confidence);
      r.ece += bin.fraction * bin.gap;
    }
    r.table.bins.push_back(bin);
  }
  return r;
}

EceResult ece(const ProbMap& pred, const GroundTruthMask& gt, int bins, AccuracyMode mode) {
  return ece(std::span<const ProbMap>(&pred, 1), std::span<const GroundTruthMask>(&gt, 1), bins, mode);
}

}  // namespace segdefer
