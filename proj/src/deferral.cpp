#include "segdefer/deferral.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "segdefer/metrics.hpp"
#include "segdefer/numeric.hpp"
#include "segdefer/uncertainty.hpp"

namespace segdefer {

using nlohmann::json;

std::string_view to_string(Policy p) {
  switch (p) {
    case Policy::global: return "global";
    case Policy::adaptive: return "adaptive";
    case Policy::confidence_aware: return "confidence_aware";
  }
  return "?";
}

std::string_view to_string(Criterion c) {
  return c == Criterion::max_f1 ? "max_f1" : "coverage_dice";
}

Policy parse_policy(std::string_view s) {
  if (s == "global") return Policy::global;
  if (s == "adaptive") return Policy::adaptive;
  if (s == "confidence_aware") return Policy::confidence_aware;
  throw std::domain_error("unknown policy '" + std::string(s) + "'");
}

Criterion parse_criterion(std::string_view s) {
  if (s == "max_f1") return Criterion::max_f1;
  if (s == "coverage_dice") return Criterion::coverage_dice;
  throw std::domain_error("unknown criterion '" + std::string(s) + "'");
}

void DeferralModel::validate() const {
  const bool wants_tau = policy != Policy::adaptive;
  if (wants_tau != tau.has_value()) throw std::invalid_argument("DeferralModel: tau must be set iff policy uses it");
  if (wants_tau == alpha.has_value()) throw std::invalid_argument("DeferralModel: alpha must be set iff policy is adaptive");
  if (tau && !(*tau >= 0.0)) throw std::invalid_argument("DeferralModel: tau must be >= 0");
  if (alpha && !(*alpha >= 0.0 && *alpha <= 100.0)) throw std::invalid_argument("DeferralModel: alpha outside [0,100]");
  if ((criterion == Criterion::coverage_dice) != dice_floor.has_value()) {
    throw std::invalid_argument("DeferralModel: dice_floor must be set iff criterion is coverage_dice");
  }
  if (dice_floor && !(*dice_floor >= 0.0 && *dice_floor < 1.0)) {
    throw std::invalid_argument("DeferralModel: dice_floor outside [0,1)");
  }
}

json DeferralModel::to_json() const {
  json j{{"policy", to_string(policy)}, {"criterion", to_string(criterion)}};
  if (tau) j["tau"] = *tau;
  if (alpha) j["alpha"] = *alpha;
  if (dice_floor) j["dice_floor"] = *dice_floor;
  j["fitted_on"] = fitted_on;
  return j;
}

DeferralModel DeferralModel::from_json(const json& j) {
  static const char* const kKeys[] = {"policy", "tau", "alpha", "criterion", "dice_floor", "fitted_on"};
  for (const auto& item : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), item.key()) == std::end(kKeys)) {
      throw std::invalid_argument("DeferralModel: unknown key '" + item.key() + "'");
    }
  }
  DeferralModel m;
  m.policy = parse_policy(j.at("policy").get<std::string>());
  m.criterion = parse_criterion(j.at("criterion").get<std::string>());
  if (j.contains("tau")) m.tau = j.at("tau").get<double>();
  if (j.contains("alpha")) m.alpha = j.at("alpha").get<double>();
  if (j.contains("dice_floor")) m.dice_floor = j.at("dice_floor").get<double>();
  if (j.contains("fitted_on")) m.fitted_on = j.at("fitted_on").get<std::string>();
  m.validate();
  return m;
}

namespace {

DecisionMap threshold(const PlaneXd& u, double tau) {
  return DecisionMap((u <= tau).cast<std::uint8_t>());
}

}  // namespace

DecisionMap defer_global(const UncertaintyMap& unc, double tau) {
  if (!(tau >= 0.0)) throw std::domain_error("defer_global: tau must be >= 0");
  return threshold(unc.values(), tau);
}

DecisionMap defer_adaptive(const UncertaintyMap& unc, double alpha) {
  return threshold(unc.values(), percentile(unc.flat(), alpha));
}

UncertaintyMap confidence_aware_score(const UncertaintyMap& unc, const ProbMap& mean) {
  require_same_shape(unc, mean, "confidence_aware_score");
  PlaneXd s = unc.values() * (1.0 - confidence(mean.values()));
  return UncertaintyMap(s.max(0.0), UncertaintyKind::confidence_aware_score);
}

DecisionMap defer_confidence_aware(const UncertaintyMap& score, double tau_s) {
  if (score.kind() != UncertaintyKind::confidence_aware_score) {
    throw std::invalid_argument("defer_confidence_aware: expected a confidence_aware_score map");
  }
  if (!(tau_s >= 0.0)) throw std::domain_error("defer_confidence_aware: tau must be >= 0");
  return threshold(score.values(), tau_s);
}

DecisionMap apply_policy(const DeferralModel& model, const UncertaintyMap& unc, const ProbMap& mean) {
  model.validate();
  switch (model.policy) {
    case Policy::global: return defer_global(unc, *model.tau);
    case Policy::adaptive: return defer_adaptive(unc, *model.alpha);
    case Policy::confidence_aware:
      return defer_confidence_aware(confidence_aware_score(unc, mean), *model.tau);
  }
  throw std::logic_error("apply_policy: unknown policy");
}

DeferralF1 deferral_f1(Index deferred, Index deferred_errors, Index errors) {
  DeferralF1 r;
  r.precision = deferred > 0 ? static_cast<double>(deferred_errors) / static_cast<double>(deferred) : 0.0;
  r.recall = errors > 0 ? static_cast<double>(deferred_errors) / static_cast<double>(errors) : 0.0;
  const double denom = r.precision + r.recall;
  r.f1 = denom > 0.0 ? 2.0 * r.precision * r.recall / denom : 0.0;
  return r;
}

DeferralF1 deferral_f1(const DecisionMap& decision, const ProbMap& pred, const GroundTruthMask& gt) {
  require_same_shape(decision, pred, "deferral_f1");
  const PlaneXu8 errors = error_indicator(pred, gt);
  const auto deferred = (decision.values() == 0);
  return deferral_f1(deferred.count(), (deferred && (errors != 0)).count(), (errors != 0).count());
}

ValidationSet::ValidationSet(std::vector<ValidationItem> items) : items_(std::move(items)) {
  if (items_.empty()) throw std::domain_error("ValidationSet: no images");
  for (const auto& it : items_) {
    require_same_shape(it.pred, it.unc, "ValidationSet item");
    require_same_shape(it.pred, it.gt, "ValidationSet item");
    pixels_ += it.pred.size();
  }
}

std::string ValidationSet::fingerprint() const {
  Fingerprint fp;
  for (const auto& it : items_) {
    fp.update_value(it.pred.rows());
    fp.update_value(it.pred.cols());
    fp.update(it.pred.flat());
    fp.update(it.unc.flat());
    fp.update(it.gt.flat());
  }
  return fp.hex();
}

std::vector<double> tau_percentile_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 199; ++i) grid.push_back(0.5 * i);
  grid.push_back(100.0);
  return grid;
}

std::vector<double> alpha_grid() {
  std::vector<double> grid;
  for (int a = 50; a <= 100; ++a) grid.push_back(a);
  return grid;
}

namespace {

// Scores in ascending order with prefix counts, so the statistics of
// "accept everything <= tau" are O(log n) per threshold.
class RankedPixels {
 public:
  RankedPixels(std::span<const double> score, const PlaneXu8& hard, const GroundTruthMask& gt) {
    const std::size_t n = score.size();
    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return score[a] < score[b]; });
    sorted_.resize(n);
    prefix_.assign(n + 1, Confusion{});
    for (std::size_t k = 0; k < n; ++k) {
      const auto i = order[k];
      sorted_[k] = score[i];
      Confusion c = prefix_[k];
      const bool p = hard.data()[i] != 0;
      const bool t = gt.values().data()[i] != 0;
      if (p && t) ++c.tp;
      else if (p) ++c.fp;
      else if (t) ++c.fn;
      else ++c.tn;
      prefix_[k + 1] = c;
    }
  }

  std::span<const double> sorted() const { return sorted_; }

  /// Confusion counts of the pixels with score <= tau.
  const Confusion& accepted(double tau) const {
    const auto k = std::upper_bound(sorted_.begin(), sorted_.end(), tau) - sorted_.begin();
    return prefix_[static_cast<std::size_t>(k)];
  }

  const Confusion& all() const { return prefix_.back(); }

 private:
  std::vector<double> sorted_;
  std::vector<Confusion> prefix_;
};

struct Candidate {
  double param = 0.0;
  Confusion accepted;
  Confusion total;
};

Index errors_of(const Confusion& c) { return c.fp + c.fn; }
Index count_of(const Confusion& c) { return c.tp + c.fp + c.fn + c.tn; }

}  // namespace

FitResult fit_threshold(const ValidationSet& val, Policy policy, Criterion criterion, double dice_floor) {
  if (criterion == Criterion::coverage_dice && !(dice_floor >= 0.0 && dice_floor < 1.0)) {
    throw std::domain_error("fit_threshold: dice_floor outside [0,1)");
  }

  std::vector<Candidate> candidates;
  if (policy == Policy::adaptive) {
    std::vector<RankedPixels> ranked;
    for (const auto& it : val.items()) ranked.emplace_back(it.unc.flat(), hard_prediction(it.pred), it.gt);
    for (double alpha : alpha_grid()) {
      Candidate c{alpha, {}, {}};
      for (const auto& r : ranked) {
        c.accepted += r.accepted(percentile_sorted(r.sorted(), alpha));
        c.total += r.all();
      }
      candidates.push_back(c);
    }
  } else {
    std::vector<double> score;
    PlaneXu8 hard(1, val.pixel_count());
    PlaneXu8 labels(1, val.pixel_count());
    score.reserve(static_cast<std::size_t>(val.pixel_count()));
    Index offset = 0;
    for (const auto& it : val.items()) {
      if (policy == Policy::confidence_aware) {
        const auto s = confidence_aware_score(it.unc, it.pred);
        score.insert(score.end(), s.flat().begin(), s.flat().end());
      } else {
        score.insert(score.end(), it.unc.flat().begin(), it.unc.flat().end());
      }
      const PlaneXu8 h = hard_prediction(it.pred);
      std::copy_n(h.data(), h.size(), hard.data() + offset);
      std::copy_n(it.gt.values().data(), h.size(), labels.data() + offset);
      offset += h.size();
    }
    const RankedPixels ranked(score, hard, GroundTruthMask(std::move(labels)));
    for (double pct : tau_percentile_grid()) {
      const double tau = percentile_sorted(ranked.sorted(), pct);
      candidates.push_back({tau, ranked.accepted(tau), ranked.all()});
    }
  }

  FitResult best;
  std::optional<std::size_t> chosen;
  double best_key = -1.0;
  Index best_accepted = -1;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const Index accepted = count_of(c.accepted);
    const Index deferred = count_of(c.total) - accepted;
    const Index deferred_errors = errors_of(c.total) - errors_of(c.accepted);
    const double f1 = deferral_f1(deferred, deferred_errors, errors_of(c.total)).f1;
    const double d = dice(c.accepted);
    best.best_dice = std::max(best.best_dice, d);

    double key = 0.0;
    if (criterion == Criterion::max_f1) {
      key = f1;
    } else {
      if (d < dice_floor) continue;
      key = 0.0;  // feasible candidates compete on coverage alone
    }
    if (!chosen || key > best_key || (key == best_key && accepted > best_accepted)) {
      chosen = i;
      best_key = key;
      best_accepted = accepted;
      best.f1 = f1;
      best.dice = d;
      best.coverage = static_cast<double>(accepted) / static_cast<double>(count_of(c.total));
    }
  }

  if (!chosen) return best;
  best.feasible = true;
  DeferralModel model;
  model.policy = policy;
  model.criterion = criterion;
  if (policy == Policy::adaptive) model.alpha = candidates[*chosen].param;
  else model.tau = candidates[*chosen].param;
  if (criterion == Criterion::coverage_dice) model.dice_floor = dice_floor;
  model.fitted_on = val.fingerprint();
  best.model = std::move(model);
  return best;
}

}  // namespace segdefer
