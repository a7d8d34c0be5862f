#include "segdefer/report.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <thread>

#include "segdefer/uncertainty.hpp"

namespace segdefer {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename Fn>
void for_each_index(std::size_t n, int threads, Fn fn) {
  const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, 256));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct AucValue {
  double auc = 0.0;
  std::optional<double> bound;
};

AucValue auc_with_mode(std::span<const double> scores, std::span<const std::uint8_t> labels, AucMode mode,
                       double lo, double hi) {
  if (mode == AucMode::exact) return {roc_auc(scores, labels), std::nullopt};
  const BinnedAuc b = roc_auc_binned(scores, labels, lo, hi);
  return {b.auc, b.error_bound};
}

double max_of(std::span<const double> v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

std::span<const std::uint8_t> bytes(const PlaneXu8& p) {
  return {p.data(), static_cast<std::size_t>(p.size())};
}

struct Work {
  ImageMetrics metrics;
  std::vector<std::string> notes;
  PlaneXu8 errors;
  std::optional<PlaneXd> score;
  std::optional<DecisionMap> decision;
  Confusion accepted_counts;
};

Work evaluate_image(const EvalImage& im, const EvaluateOptions& opt) {
  require_same_shape(im.pred, im.gt, "evaluate");
  Work w;
  ImageMetrics& m = w.metrics;
  m.id = im.id;
  const PlaneXu8 hard = hard_prediction(im.pred);
  m.counts = confusion(hard, im.gt);
  m.dice = dice(m.counts);
  m.iou = iou(m.counts);
  m.empty_convention = is_empty_convention(m.counts);
  if (m.empty_convention) w.notes.push_back(im.id + ": empty prediction and ground truth, Dice/IoU = 1 by convention");
  try {
    m.auc = auc_with_mode(im.pred.flat(), im.gt.flat(), opt.auc_mode, 0.0, 1.0).auc;
  } catch (const UndefinedMetricError&) {
    w.notes.push_back(im.id + ": AUC undefined (single-class ground truth)");
  }
  m.ece = ece(im.pred, im.gt, opt.ece_bins, opt.ece_accuracy).ece;
  w.errors = error_indicator(im.pred, im.gt);
  m.error_before = static_cast<double>((w.errors != 0).count()) / static_cast<double>(w.errors.size());

  if (!im.unc) return w;
  const UncertaintyMap& unc = *im.unc;
  require_same_shape(unc, im.pred, "evaluate uncertainty");
  try {
    m.unc_auroc = auc_with_mode(unc.flat(), bytes(w.errors), opt.auc_mode, 0.0, max_of(unc.flat())).auc;
  } catch (const UndefinedMetricError&) {
    w.notes.push_back(im.id + ": Unc-AUROC undefined (no errors or no correct pixels)");
  }
  const bool conf_aware = opt.model && opt.model->policy == Policy::confidence_aware;
  w.score = conf_aware ? confidence_aware_score(unc, im.pred).values() : unc.values();
  if (opt.embed_scores) m.scores.emplace(w.score->data(), w.score->data() + w.score->size());

  if (!opt.model) return w;
  w.decision = apply_policy(*opt.model, unc, im.pred);
  const DecisionMap& d = *w.decision;
  m.coverage = d.coverage();
  m.deferral = deferral_f1(d, im.pred, im.gt);
  w.accepted_counts = confusion(hard, im.gt, &d);
  if (d.accepted() > 0) {
    m.error_after = error_rate(im.pred, im.gt, &d);
    m.dice_accepted = dice(w.accepted_counts);
    if (m.error_before > 0.0) m.err = err(m.error_before, *m.error_after);
  } else {
    w.notes.push_back(im.id + ": every pixel deferred, accepted-pixel metrics undefined");
  }
  if (m.error_before == 0.0) w.notes.push_back(im.id + ": no errors before deferral, ERR undefined");
  return w;
}

void put(json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}

json f1_json(const DeferralF1& f) {
  return json{{"precision", f.precision}, {"recall", f.recall}, {"f1", f.f1}};
}

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

EvaluationReport evaluate(std::span<const EvalImage> images, const EvaluateOptions& opt) {
  if (images.empty()) throw std::domain_error("evaluate: no images");
  const bool with_unc = images.front().unc.has_value();
  for (const auto& im : images) {
    if (im.unc.has_value() != with_unc) {
      throw std::invalid_argument("evaluate: uncertainty must be given for every image or for none");
    }
  }
  if (opt.model) {
    opt.model->validate();
    if (!with_unc) throw std::invalid_argument("evaluate: a deferral model needs uncertainty maps");
  }

  EvaluationReport rep;
  auto t0 = Clock::now();
  std::vector<Work> work(images.size());
  for_each_index(images.size(), opt.threads, [&](std::size_t i) { work[i] = evaluate_image(images[i], opt); });
  rep.timings["per_image_metrics"] = seconds_since(t0);

  t0 = Clock::now();
  PooledMetrics& p = rep.pooled;
  Confusion total;
  Confusion accepted;
  Index pixels = 0;
  Index wrong = 0;
  Index n_accepted = 0;
  Index deferred = 0;
  Index deferred_wrong = 0;
  for (std::size_t i = 0; i < work.size(); ++i) {
    Work& w = work[i];
    total += w.metrics.counts;
    p.dice_image_mean += w.metrics.dice;
    p.iou_image_mean += w.metrics.iou;
    const auto n = static_cast<Index>(w.errors.size());
    pixels += n;
    wrong += (w.errors != 0).count();
    if (w.decision) {
      accepted += w.accepted_counts;
      const Index acc = w.decision->accepted();
      n_accepted += acc;
      deferred += n - acc;
      deferred_wrong += ((w.errors != 0) && (w.decision->values() == 0)).count();
    }
    rep.notes.insert(rep.notes.end(), w.notes.begin(), w.notes.end());
    rep.images.push_back(std::move(w.metrics));
  }
  const auto n_images = static_cast<double>(images.size());
  p.dice = dice(total);
  p.iou = iou(total);
  p.dice_image_mean /= n_images;
  p.iou_image_mean /= n_images;
  if (is_empty_convention(total)) rep.notes.push_back("pooled: empty prediction and ground truth, Dice/IoU = 1");
  p.error_before = static_cast<double>(wrong) / static_cast<double>(pixels);

  std::vector<double> prob;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> errors;
  std::vector<double> score;
  std::vector<double> unc;
  prob.reserve(static_cast<std::size_t>(pixels));
  labels.reserve(static_cast<std::size_t>(pixels));
  for (std::size_t i = 0; i < images.size(); ++i) {
    prob.insert(prob.end(), images[i].pred.flat().begin(), images[i].pred.flat().end());
    labels.insert(labels.end(), images[i].gt.flat().begin(), images[i].gt.flat().end());
    if (with_unc) {
      const auto e = bytes(work[i].errors);
      errors.insert(errors.end(), e.begin(), e.end());
      unc.insert(unc.end(), images[i].unc->flat().begin(), images[i].unc->flat().end());
      score.insert(score.end(), work[i].score->data(), work[i].score->data() + work[i].score->size());
    }
  }
  rep.timings["pooling"] = seconds_since(t0);

  t0 = Clock::now();
  try {
    const AucValue a = auc_with_mode(prob, labels, opt.auc_mode, 0.0, 1.0);
    p.auc = a.auc;
    p.auc_error_bound = a.bound;
  } catch (const UndefinedMetricError&) {
    rep.notes.push_back("pooled: AUC undefined (single-class ground truth)");
  }
  if (with_unc) {
    try {
      const AucValue a = auc_with_mode(unc, errors, opt.auc_mode, 0.0, max_of(unc));
      p.unc_auroc = a.auc;
      p.unc_auroc_error_bound = a.bound;
    } catch (const UndefinedMetricError&) {
      rep.notes.push_back("pooled: Unc-AUROC undefined (no errors or no correct pixels)");
    }
  }
  rep.timings["auc"] = seconds_since(t0);

  t0 = Clock::now();
  {
    std::vector<ProbMap> preds;
    std::vector<GroundTruthMask> gts;
    for (const auto& im : images) {
      preds.push_back(im.pred);
      gts.push_back(im.gt);
    }
    EceResult e = ece(preds, gts, opt.ece_bins, opt.ece_accuracy);
    p.ece = e.ece;
    rep.reliability = std::move(e.table);
  }
  rep.timings["ece"] = seconds_since(t0);

  if (opt.model) {
    p.coverage = static_cast<double>(n_accepted) / static_cast<double>(pixels);
    p.deferral = deferral_f1(deferred, deferred_wrong, wrong);
    if (n_accepted > 0) {
      p.error_after = static_cast<double>(wrong - deferred_wrong) / static_cast<double>(n_accepted);
      p.dice_accepted = dice(accepted);
      if (p.error_before > 0.0) p.err = err(p.error_before, *p.error_after);
    }
  }

  if (with_unc) {
    t0 = Clock::now();
    const CurveMetric metrics[] = {CurveMetric::dice, CurveMetric::auc, CurveMetric::error_rate};
    rep.curves = risk_coverage_curves(score, prob, labels, metrics, opt.grid);
    if (opt.aucc_extension) {
      for (auto& c : rep.curves) {
        c.aucc = aucc(c.points, opt.aucc_extension);
        c.notes.push_back("AUCC uses the explicit coverage-0 value " + shortest(*opt.aucc_extension));
      }
    }
    for (const auto& target : opt.targets) {
      const CurveMetric which = target.metric.value_or(CurveMetric::dice);
      const auto& curve = *std::find_if(rep.curves.begin(), rep.curves.end(),
                                        [&](const RiskCoverageCurve& c) { return c.metric == which; });
      OperatingTarget t = target;
      t.metric = which;
      const OperatingTarget one[] = {t};
      try {
        rep.operating_points.push_back(operating_points(curve, one).front());
      } catch (const std::domain_error&) {
        rep.operating_points.push_back({t, false, 0.0, 0.0});
      }
    }
    rep.timings["curves"] = seconds_since(t0);
  }

  json meta = {{"version", kVersion},
               {"entropy_base", "nats"},
               {"auc_mode", opt.auc_mode == AucMode::exact ? "exact" : "binned"},
               {"ece_bins", opt.ece_bins},
               {"ece_accuracy", opt.ece_accuracy == AccuracyMode::positive_frequency ? "positive_frequency"
                                                                                      : "correctness"},
               {"coverage_levels", opt.grid.size()},
               {"images", images.size()},
               {"pixels", pixels},
               {"dice_pooling", "pixel-pooled (dice, iou) and image-averaged (dice_image_mean, iou_image_mean)"},
               {"dice_coverage", "dice and iou are full-coverage; dice_accepted is over accepted pixels"}};
  if (opt.model) meta["deferral_model"] = opt.model->to_json();
  if (with_unc) {
    meta["curve_score"] =
        opt.model && opt.model->policy == Policy::confidence_aware ? "confidence_aware_score" : "uncertainty";
  }
  for (const auto& [k, v] : opt.metadata.items()) meta[k] = v;
  rep.metadata = std::move(meta);
  return rep;
}

json EvaluationReport::to_json() const {
  json pooled_j = {{"dice", pooled.dice},
                   {"iou", pooled.iou},
                   {"dice_image_mean", pooled.dice_image_mean},
                   {"iou_image_mean", pooled.iou_image_mean},
                   {"ece", pooled.ece},
                   {"error_before", pooled.error_before}};
  put(pooled_j, "auc", pooled.auc);
  put(pooled_j, "auc_error_bound", pooled.auc_error_bound);
  put(pooled_j, "unc_auroc", pooled.unc_auroc);
  put(pooled_j, "unc_auroc_error_bound", pooled.unc_auroc_error_bound);
  put(pooled_j, "coverage", pooled.coverage);
  put(pooled_j, "error_after", pooled.error_after);
  put(pooled_j, "err", pooled.err);
  put(pooled_j, "dice_accepted", pooled.dice_accepted);
  if (pooled.deferral) pooled_j["deferral_f1"] = f1_json(*pooled.deferral);

  json images_j = json::array();
  for (const auto& m : images) {
    json j = {{"id", m.id},
              {"dice", m.dice},
              {"iou", m.iou},
              {"empty_convention", m.empty_convention},
              {"ece", m.ece},
              {"error_before", m.error_before},
              {"confusion", {{"tp", m.counts.tp}, {"fp", m.counts.fp}, {"fn", m.counts.fn}, {"tn", m.counts.tn}}}};
    put(j, "auc", m.auc);
    put(j, "unc_auroc", m.unc_auroc);
    put(j, "coverage", m.coverage);
    put(j, "error_after", m.error_after);
    put(j, "err", m.err);
    put(j, "dice_accepted", m.dice_accepted);
    if (m.deferral) j["deferral_f1"] = f1_json(*m.deferral);
    if (m.scores) j["scores"] = *m.scores;
    images_j.push_back(std::move(j));
  }

  json out = {{"metadata", metadata},
              {"pooled", pooled_j},
              {"images", images_j},
              {"reliability", reliability.to_json()},
              {"notes", notes}};
  if (!curves.empty()) {
    json curves_j = json::array();
    for (const auto& c : curves) {
      json pts = json::array();
      for (const auto& pt : c.points) {
        pts.push_back({{"coverage", pt.coverage}, {"value", pt.value}, {"defined", pt.defined}});
      }
      curves_j.push_back({{"metric", to_string(c.metric)}, {"aucc", c.aucc}, {"notes", c.notes}, {"points", pts}});
    }
    out["curves"] = std::move(curves_j);
    json ops = json::array();
    for (const auto& op : operating_points) {
      json j = {{"target", op.target.label()}, {"reachable", op.reachable}};
      if (op.reachable) {
        j["coverage"] = op.coverage;
        j["value"] = op.value;
      }
      ops.push_back(std::move(j));
    }
    out["operating_points"] = std::move(ops);
  }
  return out;
}

std::string EvaluationReport::curve_csv(const RiskCoverageCurve& curve) {
  std::string out = "coverage,value,defined\n";
  for (const auto& p : curve.points) {
    out += shortest(p.coverage) + "," + (p.defined ? shortest(p.value) : std::string("nan")) + "," +
           (p.defined ? "1" : "0") + "\n";
  }
  return out;
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

}  // namespace segdefer
