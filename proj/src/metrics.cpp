#include "segdefer/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace segdefer {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": length mismatch");
}

// Fenwick tree over ranks 1..n.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}

  void add(std::size_t rank) {
    for (std::size_t i = rank; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }

  /// Count of inserted ranks <= rank.
  std::int64_t prefix(std::size_t rank) const {
    std::int64_t s = 0;
    for (std::size_t i = rank; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::int64_t> tree_;
};

// Pixel indices in acceptance order: ascending score, ties by index.
std::vector<std::uint32_t> acceptance_order(std::span<const double> score) {
  std::vector<std::uint32_t> order(score.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return score[a] < score[b] || (score[a] == score[b] && a < b);
  });
  return order;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

Confusion confusion(const PlaneXu8& pred_hard, const GroundTruthMask& gt, const DecisionMap* roi) {
  require_same_shape(pred_hard, gt, "confusion");
  if (roi) require_same_shape(*roi, gt, "confusion roi");
  Confusion c;
  const auto& y = gt.values();
  for (Index i = 0; i < y.size(); ++i) {
    if (roi && roi->values().data()[i] == 0) continue;
    const bool p = pred_hard.data()[i] != 0;
    const bool t = y.data()[i] != 0;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double dice(const Confusion& c) {
  if (is_empty_convention(c)) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
}

double iou(const Confusion& c) {
  if (is_empty_convention(c)) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
}

double dice(const PlaneXu8& pred_hard, const GroundTruthMask& gt, const DecisionMap* roi) {
  return dice(confusion(pred_hard, gt, roi));
}

double iou(const PlaneXu8& pred_hard, const GroundTruthMask& gt, const DecisionMap* roi) {
  return iou(confusion(pred_hard, gt, roi));
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  require_same_length(scores.size(), labels.size(), "roc_auc");
  std::vector<std::pair<double, std::uint8_t>> sorted(scores.size());
  std::int64_t n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    sorted[i] = {scores[i], labels[i] != 0};
    n_pos += labels[i] != 0;
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(scores.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("roc_auc: labels contain a single class");
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // Pairs (positive above negative) plus half of the tied pairs; all terms
  // are integers or halves, so the count is exact.
  double pairs = 0.0;
  std::int64_t neg_below = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    std::int64_t pos = 0;
    std::int64_t neg = 0;
    while (j < sorted.size() && sorted[j].first == sorted[i].first) {
      sorted[j].second ? ++pos : ++neg;
      ++j;
    }
    pairs += static_cast<double>(pos) * static_cast<double>(neg_below) +
             0.5 * static_cast<double>(pos) * static_cast<double>(neg);
    neg_below += neg;
    i = j;
  }
  return pairs / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

BinnedAuc roc_auc_binned(std::span<const double> scores, std::span<const std::uint8_t> labels, double lo,
                         double hi, int bins) {
  require_same_length(scores.size(), labels.size(), "roc_auc_binned");
  if (bins < 1) throw std::domain_error("roc_auc_binned: bins must be >= 1");
  if (!(hi >= lo)) throw std::domain_error("roc_auc_binned: empty score range");
  std::vector<std::int64_t> pos(static_cast<std::size_t>(bins), 0);
  std::vector<std::int64_t> neg(static_cast<std::size_t>(bins), 0);
  const double scale = hi > lo ? static_cast<double>(bins) / (hi - lo) : 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double x = (scores[i] - lo) * scale;
    const auto b = static_cast<std::size_t>(std::clamp(x, 0.0, static_cast<double>(bins - 1)));
    (labels[i] ? pos : neg)[b]++;
  }
  double pairs = 0.0;
  double shared = 0.0;
  std::int64_t neg_below = 0;
  std::int64_t n_pos = 0;
  for (std::size_t b = 0; b < pos.size(); ++b) {
    pairs += static_cast<double>(pos[b]) * static_cast<double>(neg_below) +
             0.5 * static_cast<double>(pos[b]) * static_cast<double>(neg[b]);
    shared += static_cast<double>(pos[b]) * static_cast<double>(neg[b]);
    neg_below += neg[b];
    n_pos += pos[b];
  }
  if (n_pos == 0 || neg_below == 0) throw UndefinedMetricError("roc_auc_binned: labels contain a single class");
  const double total = static_cast<double>(n_pos) * static_cast<double>(neg_below);
  return {pairs / total, 0.5 * shared / total};
}

double unc_auroc(const UncertaintyMap& unc, const ProbMap& pred, const GroundTruthMask& gt) {
  require_same_shape(unc, pred, "unc_auroc");
  const PlaneXu8 errors = error_indicator(pred, gt);
  return roc_auc(unc.flat(), std::span<const std::uint8_t>(errors.data(), static_cast<std::size_t>(errors.size())));
}

double error_rate(const ProbMap& pred, const GroundTruthMask& gt, const DecisionMap* roi) {
  const PlaneXu8 errors = error_indicator(pred, gt);
  if (!roi) return static_cast<double>((errors != 0).count()) / static_cast<double>(errors.size());
  require_same_shape(*roi, gt, "error_rate roi");
  const Index accepted = roi->accepted();
  if (accepted == 0) throw UndefinedMetricError("error_rate: no accepted pixels");
  const Index wrong = ((errors != 0) && (roi->values() != 0)).count();
  return static_cast<double>(wrong) / static_cast<double>(accepted);
}

double err(double e_before, double e_after) {
  if (!(e_before > 0.0)) throw UndefinedMetricError("err: error rate before deferral must be > 0");
  if (!(e_after >= 0.0)) throw std::domain_error("err: negative error rate after deferral");
  return (e_before - e_after) / e_before;
}

std::string_view to_string(CurveMetric m) {
  switch (m) {
    case CurveMetric::dice: return "dice";
    case CurveMetric::auc: return "auc";
    case CurveMetric::error_rate: return "error_rate";
  }
  return "?";
}

CurveMetric parse_curve_metric(std::string_view s) {
  if (s == "dice") return CurveMetric::dice;
  if (s == "auc") return CurveMetric::auc;
  if (s == "error_rate") return CurveMetric::error_rate;
  throw std::domain_error("unknown curve metric '" + std::string(s) + "'");
}

std::vector<double> coverage_grid(int n) {
  if (n < 2) throw std::domain_error("coverage_grid: need at least 2 levels");
  std::vector<double> grid(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) grid[static_cast<std::size_t>(i)] = static_cast<double>(i) / (n - 1);
  return grid;
}

double aucc(std::span<const CurvePoint> points, std::optional<double> extension) {
  const CurvePoint* first = nullptr;
  for (const auto& p : points) {
    if (p.defined && p.coverage > 0.0) {
      first = &p;
      break;
    }
  }
  if (!first) return 0.0;
  double area = first->coverage * (extension.value_or(first->value) + first->value) / 2.0;
  const CurvePoint* prev = first;
  for (const CurvePoint* p = first + 1; p != points.data() + points.size(); ++p) {
    if (!p->defined) continue;
    area += (p->coverage - prev->coverage) * (prev->value + p->value) / 2.0;
    prev = p;
  }
  return area;
}

std::vector<RiskCoverageCurve> risk_coverage_curves(std::span<const double> score,
                                                    std::span<const double> prob,
                                                    std::span<const std::uint8_t> gt,
                                                    std::span<const CurveMetric> metrics,
                                                    std::span<const double> grid) {
  require_same_length(score.size(), prob.size(), "risk_coverage_curves");
  require_same_length(score.size(), gt.size(), "risk_coverage_curves");
  if (score.empty()) throw std::domain_error("risk_coverage_curves: no pixels");
  if (grid.empty()) throw std::domain_error("risk_coverage_curves: empty coverage grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0 && grid[i] <= 1.0)) throw std::domain_error("risk_coverage_curves: grid outside [0,1]");
    if (i > 0 && !(grid[i] > grid[i - 1])) {
      throw std::domain_error("risk_coverage_curves: grid must be strictly increasing");
    }
  }

  const std::size_t n = score.size();
  const auto order = acceptance_order(score);
  const bool want_auc = std::find(metrics.begin(), metrics.end(), CurveMetric::auc) != metrics.end();

  // Dense ranks of the predicted probabilities, for the incremental AUC.
  std::vector<std::uint32_t> prob_rank;
  std::size_t distinct = 0;
  if (want_auc) {
    std::vector<double> values(prob.begin(), prob.end());
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    distinct = values.size();
    prob_rank.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      prob_rank[i] = static_cast<std::uint32_t>(
          std::lower_bound(values.begin(), values.end(), prob[i]) - values.begin() + 1);
    }
  }
  Fenwick pos_tree(want_auc ? distinct : 0);
  Fenwick neg_tree(want_auc ? distinct : 0);
  std::vector<std::int64_t> pos_at(want_auc ? distinct + 1 : 0, 0);
  std::vector<std::int64_t> neg_at(want_auc ? distinct + 1 : 0, 0);
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
  double pairs = 0.0;

  Confusion c;
  std::int64_t errors = 0;
  std::size_t taken = 0;

  std::vector<RiskCoverageCurve> curves(metrics.size());
  for (std::size_t m = 0; m < metrics.size(); ++m) curves[m].metric = metrics[m];

  for (double q : grid) {
    const auto k = static_cast<std::size_t>(std::llround(q * static_cast<double>(n)));
    for (; taken < std::min(k, n); ++taken) {
      const std::uint32_t i = order[taken];
      const bool p = prob[i] > 0.5;
      const bool t = gt[i] != 0;
      if (p && t) ++c.tp;
      else if (p) ++c.fp;
      else if (t) ++c.fn;
      else ++c.tn;
      errors += p != t;
      if (want_auc) {
        const std::uint32_t r = prob_rank[i];
        if (t) {
          pairs += static_cast<double>(neg_tree.prefix(r - 1)) + 0.5 * static_cast<double>(neg_at[r]);
          pos_tree.add(r);
          ++pos_at[r];
          ++n_pos;
        } else {
          pairs += static_cast<double>(n_pos - pos_tree.prefix(r)) + 0.5 * static_cast<double>(pos_at[r]);
          neg_tree.add(r);
          ++neg_at[r];
          ++n_neg;
        }
      }
    }
    for (auto& curve : curves) {
      CurvePoint pt{q, 0.0, false};
      switch (curve.metric) {
        case CurveMetric::dice:
          if (!is_empty_convention(c)) pt = {q, dice(c), true};
          break;
        case CurveMetric::error_rate:
          if (taken > 0) pt = {q, static_cast<double>(errors) / static_cast<double>(taken), true};
          break;
        case CurveMetric::auc:
          if (n_pos > 0 && n_neg > 0) {
            pt = {q, pairs / (static_cast<double>(n_pos) * static_cast<double>(n_neg)), true};
          }
          break;
      }
      curve.points.push_back(pt);
    }
  }

  for (auto& curve : curves) {
    std::size_t undefined = 0;
    for (const auto& p : curve.points) undefined += !p.defined;
    if (undefined > 0) {
      curve.notes.push_back(std::to_string(undefined) + " coverage level(s) have an undefined " +
                            std::string(to_string(curve.metric)) + " and are excluded from AUCC");
    }
    const auto first = std::find_if(curve.points.begin(), curve.points.end(),
                                    [](const CurvePoint& p) { return p.defined && p.coverage > 0.0; });
    if (first != curve.points.end()) {
      curve.notes.push_back("AUCC extends the curve to coverage 0 with the value at coverage " +
                            format_double(first->coverage));
    }
    curve.aucc = aucc(curve.points);
  }
  return curves;
}

RiskCoverageCurve risk_coverage_curve(const UncertaintyMap& score, const ProbMap& pred,
                                      const GroundTruthMask& gt, CurveMetric metric,
                                      std::span<const double> grid) {
  require_same_shape(score, pred, "risk_coverage_curve");
  require_same_shape(score, gt, "risk_coverage_curve");
  const CurveMetric metrics[] = {metric};
  return std::move(risk_coverage_curves(score.flat(), pred.flat(), gt.flat(), metrics, grid).front());
}

OperatingTarget OperatingTarget::parse(std::string_view text) {
  auto number = [&](std::string_view s) {
    std::string str(s);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(str, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != str.size()) {
      throw std::domain_error("operating target: bad number in '" + std::string(text) + "'");
    }
    return v;
  };
  if (const auto pos = text.find(">="); pos != std::string_view::npos) {
    OperatingTarget t{Kind::metric_at_least, number(text.substr(pos + 2)), std::nullopt};
    if (const auto name = text.substr(0, pos); !name.empty() && name != "metric") t.metric = parse_curve_metric(name);
    return t;
  }
  if (text.starts_with("coverage=")) {
    const double v = number(text.substr(9));
    if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error("operating target: coverage outside [0,1]");
    return {Kind::coverage, v, std::nullopt};
  }
  throw std::domain_error("operating target '" + std::string(text) + "': expected metric>=X or coverage=X");
}

std::string OperatingTarget::label() const {
  if (kind == Kind::coverage) return "coverage=" + format_double(value);
  return std::string(metric ? to_string(*metric) : "metric") + ">=" + format_double(value);
}

std::vector<OperatingPoint> operating_points(const RiskCoverageCurve& curve,
                                             std::span<const OperatingTarget> targets) {
  std::vector<CurvePoint> pts;
  for (const auto& p : curve.points) {
    if (p.defined) pts.push_back(p);
  }
  if (pts.empty()) throw std::domain_error("operating_points: curve has no defined points");

  std::vector<OperatingPoint> out;
  for (const auto& target : targets) {
    OperatingPoint op{target, false, 0.0, 0.0};
    if (target.kind == OperatingTarget::Kind::metric_at_least) {
      for (std::size_t i = pts.size(); i-- > 0;) {
        if (pts[i].value < target.value) continue;
        op.reachable = true;
        if (i + 1 == pts.size()) {
          op.coverage = pts[i].coverage;
          op.value = pts[i].value;
        } else {
          const auto& a = pts[i];
          const auto& b = pts[i + 1];
          op.coverage = a.coverage + (target.value - a.value) * (b.coverage - a.coverage) / (b.value - a.value);
          op.value = target.value;
        }
        break;
      }
    } else {
      const double q = target.value;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        if (pts[i].coverage == q) {
          op = {target, true, q, pts[i].value};
          break;
        }
        if (i + 1 < pts.size() && pts[i].coverage < q && q < pts[i + 1].coverage) {
          const double w = (q - pts[i].coverage) / (pts[i + 1].coverage - pts[i].coverage);
          op = {target, true, q, pts[i].value + w * (pts[i + 1].value - pts[i].value)};
          break;
        }
      }
    }
    out.push_back(op);
  }
  return out;
}

}  // namespace segdefer
