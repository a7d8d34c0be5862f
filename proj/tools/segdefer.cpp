// segdefer command-line tool.
//
// Exit codes: 0 ok, 2 input error, 3 invariant violation, 4 infeasible fit,
// 1 anything unexpected.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "segdefer/calibration.hpp"
#include "segdefer/deferral.hpp"
#include "segdefer/error.hpp"
#include "segdefer/io.hpp"
#include "segdefer/manifest.hpp"
#include "segdefer/report.hpp"
#include "segdefer/synth.hpp"
#include "segdefer/uncertainty.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace segdefer;

namespace {

enum Exit { kOk = 0, kUnexpected = 1, kInputError = 2, kInvariant = 3, kInfeasible = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InfeasibleFit : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string format = "json";
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArrayFileError(ArrayFileErrc::io, "cannot write " + path.string());
  out << text;
  if (!out) throw ArrayFileError(ArrayFileErrc::io, "write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ArrayFileError(ArrayFileErrc::io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ArrayFileError(ArrayFileErrc::malformed_header, path.string() + ": " + e.what());
  }
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ArrayFileError(ArrayFileErrc::io, "cannot create " + dir.string() + ": " + ec.message());
}

Dtype parse_dtype(const std::string& s) { return s == "float32" ? Dtype::float32 : Dtype::float64; }

/// Every option of `app` (and its parent) as given or defaulted.
json config_echo(const CLI::App* app) {
  json cfg = json::object();
  for (const CLI::App* a = app; a != nullptr; a = a->get_parent()) {
    for (const CLI::Option* opt : a->get_options()) {
      const std::string name = opt->get_single_name();
      if (name == "help" || name == "version" || name == "config" || cfg.contains(name)) continue;
      if (opt->get_type_size() == 0) {
        cfg[name] = opt->count() > 0;
      } else if (opt->count() > 0) {
        const auto& r = opt->results();
        if (opt->get_expected_max() > 1) {
          cfg[name] = r;
        } else {
          cfg[name] = r.empty() ? std::string() : r.back();
        }
      } else if (!opt->get_default_str().empty()) {
        cfg[name] = opt->get_default_str();
      }
    }
  }
  return cfg;
}

void emit_summary(const json& summary, const Globals& g) {
  if (g.format == "json") {
    std::cout << dump_json(summary);
    return;
  }
  std::cout << "key,value\n";
  for (const auto& [k, v] : summary.items()) {
    if (v.is_structured()) continue;
    std::cout << k << "," << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
  }
}

json base_metadata(const char* command, const CLI::App* app, const Globals& g) {
  return {{"command", command}, {"version", kVersion}, {"seed", g.seed}, {"threads", g.threads},
          {"config", config_echo(app)}};
}

// ---------------------------------------------------------------- aggregate

struct AggregateArgs {
  std::string stack;
  std::string method;
  std::vector<std::string> kinds;
  std::string out_dir;
  std::string dtype = "float64";
  bool pgm = false;
  bool warmup = false;
};

void check_method(const PredictionStack& s, const std::string& method, const std::string& what) {
  const SourceTag tag = s.source();
  const bool ok = method == "mc" ? (tag != SourceTag::tta) : (tag == SourceTag::tta || tag == SourceTag::other);
  if (!ok) {
    throw UsageError(what + ": method '" + method + "' does not fit a stack tagged '" + std::string(to_string(tag)) +
                     "'");
  }
}

struct Aggregated {
  ProbMap mean;
  std::vector<UncertaintyMap> maps;
  bool inverted = false;
};

Aggregated aggregate(const PredictionStack& stack, const std::string& method, const std::vector<std::string>& kinds) {
  if (method == "mc") {
    auto a = mc_aggregate(stack);
    Aggregated out{a.mean, {}, false};
    for (const auto& k : kinds) {
      if (k == "mutual_information") {
        out.maps.push_back(a.mutual_information);
      } else {
        out.maps.emplace_back(binary_entropy(a.mean.values()).eval(), UncertaintyKind::entropy);
      }
    }
    return out;
  }
  auto a = tta_aggregate(stack);
  Aggregated out{a.mean, {}, a.inverted};
  for (const auto& k : kinds) out.maps.push_back(k == "variance" ? a.variance : a.entropy);
  return out;
}

std::vector<std::string> default_kinds(const std::string& method) {
  return method == "mc" ? std::vector<std::string>{"mutual_information"} : std::vector<std::string>{"variance"};
}

void check_kinds(const std::string& method, const std::vector<std::string>& kinds) {
  for (const auto& k : kinds) {
    const bool ok = method == "mc" ? (k == "mutual_information" || k == "entropy") : (k == "variance" || k == "entropy");
    if (!ok) throw UsageError("uncertainty kind '" + k + "' is not produced by method '" + method + "'");
  }
}

int run_aggregate(const AggregateArgs& a, const CLI::App* app, const Globals& g) {
  const auto kinds = a.kinds.empty() ? default_kinds(a.method) : a.kinds;
  check_kinds(a.method, kinds);
  auto t0 = Clock::now();
  const PredictionStack stack = read_stack(a.stack);
  const double read_s = since(t0);
  check_method(stack, a.method, a.stack);

  if (a.warmup) aggregate(stack, a.method, kinds);
  t0 = Clock::now();
  const Aggregated agg = aggregate(stack, a.method, kinds);
  const double agg_s = since(t0);

  const fs::path dir(a.out_dir);
  make_dir(dir);
  t0 = Clock::now();
  const Dtype dt = parse_dtype(a.dtype);
  write_array_file(agg.mean, dir / "mean.npy", dt);
  json outputs = {{"mean", "mean.npy"}};
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    write_array_file(agg.maps[i], dir / (kinds[i] + ".npy"), dt);
    outputs[kinds[i]] = kinds[i] + ".npy";
    if (a.pgm) write_uncertainty_pgm(agg.maps[i], dir / (kinds[i] + ".pgm"));
  }
  const double write_s = since(t0);

  json meta = base_metadata("aggregate", app, g);
  meta["method"] = a.method;
  meta["source_tag"] = to_string(stack.source());
  meta[a.method == "mc" ? "T" : "K"] = stack.passes();
  meta["entropy_base"] = "nats";
  meta["inverted"] = agg.inverted;
  if (stack.transforms()) {
    json ids = json::array();
    for (auto t : *stack.transforms()) ids.push_back(to_string(t));
    meta["transform_ids"] = ids;
  }
  meta["outputs"] = outputs;
  write_text(dir / "metadata.json", dump_json(meta));
  const json timings = {{"read_s", read_s}, {"aggregate_s", agg_s}, {"write_s", write_s}, {"warmup_excluded", a.warmup}};
  write_text(dir / "timings.json", dump_json(timings));

  emit_summary({{"method", a.method},
                {"passes", stack.passes()},
                {"height", stack.rows()},
                {"width", stack.cols()},
                {"inverted", agg.inverted},
                {"aggregate_s", agg_s}},
               g);
  return kOk;
}

// ---------------------------------------------------------------- calibrate

struct CalibrateArgs {
  std::vector<std::string> pred;
  std::vector<std::string> logits;
  std::vector<std::string> gt;
  std::string model_in;
  std::string out;
  std::string out_dir;
};

std::vector<LogitMap> load_logits(const CalibrateArgs& a) {
  std::vector<LogitMap> z;
  for (const auto& p : a.logits) z.push_back(read_logit_map(p));
  for (const auto& p : a.pred) z.push_back(to_logits(read_prob_map(p)));
  return z;
}

int run_calibrate(const CalibrateArgs& a, const CLI::App* app, const Globals& g) {
  if (a.pred.empty() == a.logits.empty()) throw UsageError("calibrate: give either --pred or --logits");
  if (a.model_in.empty()) {
    if (a.gt.empty()) throw UsageError("calibrate: fitting needs --gt");
    if (a.out.empty()) throw UsageError("calibrate: fitting needs --out");
    const std::size_t n = a.pred.size() + a.logits.size();
    if (a.gt.size() != n) throw UsageError("calibrate: --gt count differs from the prediction count");
    const auto z = load_logits(a);
    std::vector<GroundTruthMask> y;
    for (const auto& p : a.gt) y.push_back(read_mask(p));
    auto t0 = Clock::now();
    const TemperatureModel m = fit_temperature(z, y);
    const double fit_s = since(t0);
    json mj = m.to_json();
    json meta = base_metadata("calibrate", app, g);
    write_text(a.out, dump_json(mj));
    write_text(fs::path(a.out).replace_extension(".meta.json"), dump_json(meta));
    write_text(fs::path(a.out).replace_extension(".timings.json"), dump_json({{"fit_s", fit_s}}));
    emit_summary({{"temperature", m.temperature}, {"nll_before", m.nll_before}, {"nll_after", m.nll_after}, {"flat", m.flat}},
                 g);
    return kOk;
  }

  if (a.out_dir.empty()) throw UsageError("calibrate: applying a model needs --out-dir");
  const TemperatureModel m = TemperatureModel::from_json(read_json(a.model_in));
  const fs::path dir(a.out_dir);
  make_dir(dir);
  json written = json::array();
  for (const auto& p : a.logits) {
    const auto out = dir / (fs::path(p).stem().string() + "_calibrated.npy");
    write_array_file(apply_temperature(read_logit_map(p), m.temperature), out);
    written.push_back(out.string());
  }
  for (const auto& p : a.pred) {
    const auto out = dir / (fs::path(p).stem().string() + "_calibrated.npy");
    write_array_file(apply_temperature(read_prob_map(p), m.temperature), out);
    written.push_back(out.string());
  }
  json meta = base_metadata("calibrate", app, g);
  meta["temperature"] = m.temperature;
  meta["outputs"] = written;
  write_text(dir / "metadata.json", dump_json(meta));
  emit_summary({{"temperature", m.temperature}, {"written", written.size()}}, g);
  return kOk;
}

// ---------------------------------------------------------------- fit

struct FitArgs {
  std::vector<std::string> pred;
  std::vector<std::string> unc;
  std::vector<std::string> gt;
  std::string unc_kind = "mutual_information";
  std::string policy = "global";
  std::string criterion = "max_f1";
  double dice_floor = kDefaultDiceFloor;
  std::string out;
};

int run_fit(const FitArgs& a, const CLI::App* app, const Globals& g) {
  if (a.pred.size() != a.unc.size() || a.pred.size() != a.gt.size()) {
    throw UsageError("fit: --pred, --unc and --gt need the same number of files");
  }
  const Policy policy = parse_policy(a.policy);
  const Criterion criterion = parse_criterion(a.criterion);
  const UncertaintyKind kind = parse_uncertainty_kind(a.unc_kind);
  std::vector<ValidationItem> items;
  for (std::size_t i = 0; i < a.pred.size(); ++i) {
    items.push_back({read_prob_map(a.pred[i]), read_uncertainty_map(a.unc[i], kind), read_mask(a.gt[i])});
  }
  const ValidationSet val(std::move(items));
  auto t0 = Clock::now();
  const FitResult r = fit_threshold(val, policy, criterion, a.dice_floor);
  const double fit_s = since(t0);
  if (!r.feasible) {
    throw InfeasibleFit("fit: no threshold reaches accepted-pixel Dice >= " + std::to_string(a.dice_floor) +
                        "; best achievable Dice is " + std::to_string(r.best_dice));
  }
  write_text(a.out, dump_json(r.model->to_json()));
  json meta = base_metadata("fit", app, g);
  meta["validation"] = {{"images", val.items().size()}, {"pixels", val.pixel_count()}, {"fingerprint", val.fingerprint()}};
  meta["coverage"] = r.coverage;
  meta["f1"] = r.f1;
  meta["dice"] = r.dice;
  write_text(fs::path(a.out).replace_extension(".meta.json"), dump_json(meta));
  write_text(fs::path(a.out).replace_extension(".timings.json"), dump_json({{"fit_s", fit_s}}));
  json summary = {{"policy", a.policy}, {"criterion", a.criterion}, {"coverage", r.coverage}, {"f1", r.f1}, {"dice", r.dice}};
  if (r.model->tau) summary["tau"] = *r.model->tau;
  if (r.model->alpha) summary["alpha"] = *r.model->alpha;
  emit_summary(summary, g);
  return kOk;
}

// ---------------------------------------------------------------- defer

struct DeferArgs {
  std::string model;
  std::string pred;
  std::string unc;
  std::string gt;
  std::string unc_kind = "mutual_information";
  std::string out;
  std::string pgm;
};

int run_defer(const DeferArgs& a, const CLI::App* app, const Globals& g) {
  const DeferralModel m = DeferralModel::from_json(read_json(a.model));
  m.validate();
  const ProbMap p = read_prob_map(a.pred);
  const UncertaintyMap u = read_uncertainty_map(a.unc, parse_uncertainty_kind(a.unc_kind));
  auto t0 = Clock::now();
  const DecisionMap d = apply_policy(m, u, p);
  const double defer_s = since(t0);
  write_array_file(d, a.out);
  if (!a.pgm.empty()) write_decision_pgm(d, a.pgm);

  json summary = {{"policy", to_string(m.policy)}, {"coverage", d.coverage()}, {"deferred", d.size() - d.accepted()}};
  if (!a.gt.empty()) {
    const GroundTruthMask y = read_mask(a.gt);
    const auto f = deferral_f1(d, p, y);
    summary["deferral_precision"] = f.precision;
    summary["deferral_recall"] = f.recall;
    summary["deferral_f1"] = f.f1;
    const double before = error_rate(p, y);
    if (d.accepted() > 0) {
      const double after = error_rate(p, y, &d);
      summary["error_before"] = before;
      summary["error_after"] = after;
      if (before > 0) summary["err"] = err(before, after);
    }
  }
  json meta = base_metadata("defer", app, g);
  meta["model"] = m.to_json();
  meta["summary"] = summary;
  write_text(fs::path(a.out).replace_extension(".meta.json"), dump_json(meta));
  write_text(fs::path(a.out).replace_extension(".timings.json"), dump_json({{"defer_s", defer_s}}));
  emit_summary(summary, g);
  return kOk;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::vector<std::string> pred;
  std::vector<std::string> gt;
  std::vector<std::string> unc;
  std::vector<std::string> stack;
  std::vector<std::string> ids;
  std::string manifest;
  std::string method;
  std::string unc_kind;
  std::string model;
  std::string auc_mode = "exact";
  int ece_bins = kDefaultEceBins;
  std::string ece_accuracy = "positive_frequency";
  std::vector<std::string> targets;
  std::optional<double> aucc_extension;
  bool embed_scores = false;
  bool pgm = false;
  std::string out_dir;
};

int run_evaluate(const EvaluateArgs& a, const CLI::App* app, const Globals& g) {
  const int sources = !a.pred.empty() + !a.stack.empty() + !a.manifest.empty();
  if (sources != 1) throw UsageError("evaluate: give exactly one of --pred, --stack or --manifest");
  if (!a.unc.empty() && a.pred.empty()) throw UsageError("evaluate: --unc goes with --pred");

  EvaluateOptions opt;
  opt.auc_mode = a.auc_mode == "binned" ? AucMode::binned : AucMode::exact;
  opt.ece_bins = a.ece_bins;
  opt.ece_accuracy = a.ece_accuracy == "correctness" ? AccuracyMode::correctness : AccuracyMode::positive_frequency;
  if (!a.targets.empty()) {
    opt.targets.clear();
    for (const auto& t : a.targets) opt.targets.push_back(OperatingTarget::parse(t));
  }
  opt.aucc_extension = a.aucc_extension;
  opt.embed_scores = a.embed_scores;
  opt.threads = g.threads;
  if (!a.model.empty()) {
    opt.model = DeferralModel::from_json(read_json(a.model));
    opt.model->validate();
  }

  // Resolve inputs to (id, stack-or-pred, gt, unc) before loading anything large.
  std::vector<std::string> stack_paths = a.stack;
  std::vector<std::string> gt_paths = a.gt;
  std::vector<std::string> ids = a.ids;
  std::string method = a.method;
  if (!a.manifest.empty()) {
    const fs::path mp(a.manifest);
    const Manifest m = read_manifest(mp);
    verify_manifest(m, mp.parent_path());
    ids.clear();
    for (const auto& e : m.images) {
      if (!e.files.contains("stack") || !e.files.contains("gt")) {
        throw UsageError("evaluate: manifest entry '" + e.id + "' lacks a stack or gt file");
      }
      stack_paths.push_back((mp.parent_path() / e.files.at("stack").path).string());
      gt_paths.push_back((mp.parent_path() / e.files.at("gt").path).string());
      ids.push_back(e.id);
      if (method.empty() && e.source) method = *e.source == SourceTag::tta ? "tta" : "mc";
    }
  }
  const bool from_stacks = !stack_paths.empty();
  const std::size_t n = from_stacks ? stack_paths.size() : a.pred.size();
  if (gt_paths.size() != n) throw UsageError("evaluate: --gt count differs from the input count");
  if (!a.unc.empty() && a.unc.size() != n) throw UsageError("evaluate: --unc count differs from --pred count");
  if (!ids.empty() && ids.size() != n) throw UsageError("evaluate: --ids count differs from the input count");
  if (from_stacks && method.empty()) throw UsageError("evaluate: stacks need --method mc|tta");
  if (opt.model && !from_stacks && a.unc.empty()) throw UsageError("evaluate: --model needs uncertainty maps");
  std::string kind_name = a.unc_kind;
  if (kind_name.empty()) kind_name = from_stacks ? default_kinds(method).front() : "mutual_information";
  if (from_stacks) check_kinds(method, {kind_name});
  const UncertaintyKind kind = parse_uncertainty_kind(kind_name);

  auto t0 = Clock::now();
  double aggregate_s = 0.0;
  std::vector<EvalImage> images;
  for (std::size_t i = 0; i < n; ++i) {
    std::string id = ids.empty() ? fs::path(from_stacks ? stack_paths[i] : a.pred[i]).stem().string() : ids[i];
    GroundTruthMask y = read_mask(gt_paths[i]);
    if (from_stacks) {
      const PredictionStack s = read_stack(stack_paths[i]);
      check_method(s, method, stack_paths[i]);
      const auto ta = Clock::now();
      Aggregated agg = aggregate(s, method, {kind_name});
      aggregate_s += since(ta);
      images.push_back({std::move(id), std::move(agg.mean), std::move(y), std::move(agg.maps.front())});
    } else {
      std::optional<UncertaintyMap> u;
      if (!a.unc.empty()) u = read_uncertainty_map(a.unc[i], kind);
      images.push_back({std::move(id), read_prob_map(a.pred[i]), std::move(y), std::move(u)});
    }
  }
  const double load_s = since(t0) - aggregate_s;

  opt.metadata = base_metadata("evaluate", app, g);
  opt.metadata["uncertainty_kind"] = images.front().unc ? json(kind_name) : json(nullptr);
  if (from_stacks) opt.metadata["method"] = method;

  t0 = Clock::now();
  const EvaluationReport rep = evaluate(images, opt);
  const double eval_s = since(t0);

  const fs::path dir(a.out_dir);
  make_dir(dir);
  write_text(dir / "report.json", dump_json(rep.to_json()));
  write_text(dir / "reliability.csv", rep.reliability.to_csv());
  for (const auto& c : rep.curves) {
    write_text(dir / ("curve_" + std::string(to_string(c.metric)) + ".csv"), EvaluationReport::curve_csv(c));
  }
  if (a.pgm) {
    for (const auto& im : images) {
      if (!im.unc) continue;
      write_uncertainty_pgm(*im.unc, dir / (im.id + "_uncertainty.pgm"));
      if (opt.model) write_decision_pgm(apply_policy(*opt.model, *im.unc, im.pred), dir / (im.id + "_decision.pgm"));
    }
  }
  json timings = rep.timings;
  timings["load_s"] = load_s;
  timings["aggregate_s"] = aggregate_s;
  timings["aggregate_per_image_s"] = aggregate_s / static_cast<double>(n);
  timings["evaluate_s"] = eval_s;
  write_text(dir / "timings.json", dump_json(timings));

  const PooledMetrics& p = rep.pooled;
  json summary = {{"images", rep.images.size()}, {"dice", p.dice}, {"iou", p.iou}, {"ece", p.ece},
                  {"error_before", p.error_before}};
  if (p.auc) summary["auc"] = *p.auc;
  if (p.unc_auroc) summary["unc_auroc"] = *p.unc_auroc;
  if (p.coverage) summary["coverage"] = *p.coverage;
  if (p.error_after) summary["error_after"] = *p.error_after;
  if (p.err) summary["err"] = *p.err;
  if (p.deferral) summary["deferral_f1"] = p.deferral->f1;
  summary["report"] = (dir / "report.json").string();
  emit_summary(summary, g);
  return kOk;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string spec_file;
  SynthSpec spec;
  std::string calibration = "calibrated";
  std::string source = "mc_dropout";
  std::string dtype = "float64";
  std::string out_dir;
};

int run_synth(SynthArgs a, const CLI::App* app, const Globals& g) {
  SynthSpec spec = a.spec;
  if (!a.spec_file.empty()) {
    spec = SynthSpec::from_json(read_json(a.spec_file));
    // Flags given explicitly on the command line override the file.
    const SynthSpec& f = a.spec;
    if (app->count("--height")) spec.height = f.height;
    if (app->count("--width")) spec.width = f.width;
    if (app->count("--n-images")) spec.n_images = f.n_images;
    if (app->count("--error-rate")) spec.error_rate = f.error_rate;
    if (app->count("--corr")) spec.unc_error_corr = f.unc_error_corr;
    if (app->count("--temperature")) spec.temperature = f.temperature;
    if (app->count("--passes")) spec.passes = f.passes;
    if (app->count("--tta-transformed")) spec.tta_transformed = f.tta_transformed;
    if (app->count("--calibration")) spec.calibration = parse_calibration_mode(a.calibration);
    if (app->count("--source")) spec.source = parse_source_tag(a.source);
    if (app->get_parent()->count("--seed")) spec.seed = g.seed;
  } else {
    spec.calibration = parse_calibration_mode(a.calibration);
    spec.source = parse_source_tag(a.source);
    spec.seed = g.seed;
  }
  try {
    spec.validate();
  } catch (const std::domain_error& e) {
    throw UsageError(e.what());
  }

  const fs::path dir(a.out_dir);
  make_dir(dir);
  const Dtype dt = parse_dtype(a.dtype);
  Manifest manifest;
  manifest.dataset = "synth";
  manifest.spec = spec.to_json();
  auto t0 = Clock::now();
  for (int i = 0; i < spec.n_images; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%03d", i);
    const fs::path sub = dir / name;
    make_dir(sub);
    const SynthImage img = generate_image(spec, i);
    write_array_file(img.stack, sub / "stack.npy", dt);
    write_array_file(img.gt, sub / "gt.npy");
    ManifestEntry e;
    e.id = name;
    for (const char* role : {"stack", "stack_sidecar", "gt"}) {
      const std::string file = std::string(role) == "stack" ? "stack.npy"
                               : std::string(role) == "gt"  ? "gt.npy"
                                                            : "stack.json";
      const std::string rel = std::string(name) + "/" + file;
      e.files[role] = {rel, file_checksum(dir / rel)};
    }
    e.source = img.stack.source();
    e.passes = img.stack.passes();
    e.transforms = img.stack.transforms();
    manifest.images.push_back(std::move(e));
  }
  const double gen_s = since(t0);
  write_manifest(manifest, dir / "manifest.json");
  json meta = base_metadata("synth", app, g);
  meta["spec"] = spec.to_json();
  write_text(dir / "metadata.json", dump_json(meta));
  write_text(dir / "timings.json", dump_json({{"generate_s", gen_s}}));
  emit_summary({{"images", spec.n_images}, {"manifest", (dir / "manifest.json").string()}}, g);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty aggregation, deferral and evaluation for binary segmentation maps."};
  app.name("segdefer");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", json{{"name", "segdefer"}, {"version", kVersion}}.dump());
  app.set_config("--config", "", "TOML file with option values; unknown keys are rejected");
  app.allow_config_extras(CLI::config_extras_mode::error);

  Globals g;
  app.add_option("--seed", g.seed, "Seed for anything random (synth)")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (evaluate); 1 is bitwise reproducible")
      ->check(CLI::Range(1, 256))
      ->capture_default_str();
  app.add_option("--format", g.format, "Summary format on stdout")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();

  const auto kind_check = CLI::IsMember({"mutual_information", "variance", "entropy", "confidence_aware_score"});
  const auto dtype_check = CLI::IsMember({"float64", "float32"});

  AggregateArgs ag;
  auto* c_ag = app.add_subcommand("aggregate", "Mean map and uncertainty map(s) from a prediction stack");
  c_ag->add_option("--stack", ag.stack, "Stack file (.npy with sidecar .json)")->required()->check(CLI::ExistingFile);
  c_ag->add_option("--method", ag.method, "mc (mutual information) or tta (variance)")
      ->required()
      ->check(CLI::IsMember({"mc", "tta"}));
  c_ag->add_option("--unc", ag.kinds, "Uncertainty maps to write (mc: mutual_information, entropy; tta: variance, entropy)")
      ->check(kind_check);
  c_ag->add_option("--out-dir", ag.out_dir, "Output directory")->required();
  c_ag->add_option("--dtype", ag.dtype, "Output dtype")->check(dtype_check)->capture_default_str();
  c_ag->add_flag("--pgm", ag.pgm, "Also write PGM previews of the uncertainty maps");
  c_ag->add_flag("--warmup", ag.warmup, "Run once untimed before the timed run");

  CalibrateArgs ca;
  auto* c_ca = app.add_subcommand("calibrate", "Fit a temperature on validation data, or apply one");
  c_ca->add_option("--pred", ca.pred, "Probability maps")->check(CLI::ExistingFile);
  c_ca->add_option("--logits", ca.logits, "Logit maps")->check(CLI::ExistingFile);
  c_ca->add_option("--gt", ca.gt, "Ground-truth masks (fitting)")->check(CLI::ExistingFile);
  c_ca->add_option("--model", ca.model_in, "Temperature model to apply instead of fitting")->check(CLI::ExistingFile);
  c_ca->add_option("--out", ca.out, "Where to write the fitted model");
  c_ca->add_option("--out-dir", ca.out_dir, "Where to write calibrated maps (apply)");

  FitArgs fa;
  auto* c_fit = app.add_subcommand("fit", "Select a deferral threshold on validation data");
  c_fit->add_option("--pred", fa.pred, "Mean probability maps")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--unc", fa.unc, "Uncertainty maps")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--gt", fa.gt, "Ground-truth masks")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--unc-kind", fa.unc_kind, "Kind of the uncertainty maps")->check(kind_check)->capture_default_str();
  c_fit->add_option("--policy", fa.policy)->check(CLI::IsMember({"global", "adaptive", "confidence_aware"}))->capture_default_str();
  c_fit->add_option("--criterion", fa.criterion)->check(CLI::IsMember({"max_f1", "coverage_dice"}))->capture_default_str();
  c_fit->add_option("--dice-floor", fa.dice_floor, "Dice floor for coverage_dice")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  c_fit->add_option("--out", fa.out, "Model JSON")->required();

  DeferArgs da;
  auto* c_def = app.add_subcommand("defer", "Apply a fitted deferral model to one image");
  c_def->add_option("--model", da.model, "Deferral model JSON")->required()->check(CLI::ExistingFile);
  c_def->add_option("--pred", da.pred, "Mean probability map")->required()->check(CLI::ExistingFile);
  c_def->add_option("--unc", da.unc, "Uncertainty map")->required()->check(CLI::ExistingFile);
  c_def->add_option("--gt", da.gt, "Ground-truth mask, for deferral F1 and ERR")->check(CLI::ExistingFile);
  c_def->add_option("--unc-kind", da.unc_kind)->check(kind_check)->capture_default_str();
  c_def->add_option("--out", da.out, "Decision map (.npy, accept = 1)")->required();
  c_def->add_option("--pgm", da.pgm, "Decision PGM (defer = 0, accept = 255)");

  EvaluateArgs ea;
  auto* c_ev = app.add_subcommand("evaluate", "Full evaluation report");
  c_ev->add_option("--pred", ea.pred, "Mean probability maps")->check(CLI::ExistingFile);
  c_ev->add_option("--unc", ea.unc, "Uncertainty maps, one per --pred")->check(CLI::ExistingFile);
  c_ev->add_option("--stack", ea.stack, "Prediction stacks, aggregated with --method")->check(CLI::ExistingFile);
  c_ev->add_option("--manifest", ea.manifest, "Dataset manifest (e.g. from synth)")->check(CLI::ExistingFile);
  c_ev->add_option("--gt", ea.gt, "Ground-truth masks")->check(CLI::ExistingFile);
  c_ev->add_option("--ids", ea.ids, "Image ids (default: file stems)");
  c_ev->add_option("--method", ea.method)->check(CLI::IsMember({"mc", "tta"}));
  c_ev->add_option("--unc-kind", ea.unc_kind)->check(kind_check);
  c_ev->add_option("--model", ea.model, "Deferral model JSON")->check(CLI::ExistingFile);
  c_ev->add_option("--auc-mode", ea.auc_mode)->check(CLI::IsMember({"exact", "binned"}))->capture_default_str();
  c_ev->add_option("--ece-bins", ea.ece_bins)->check(CLI::Range(1, 1000))->capture_default_str();
  c_ev->add_option("--ece-accuracy", ea.ece_accuracy)
      ->check(CLI::IsMember({"positive_frequency", "correctness"}))
      ->capture_default_str();
  c_ev->add_option("--target", ea.targets, "Operating targets such as dice>=0.82 or coverage=0.9");
  c_ev->add_option("--aucc-extension", ea.aucc_extension, "Curve value assumed at coverage 0")->check(CLI::Range(0.0, 1.0));
  c_ev->add_flag("--embed-scores", ea.embed_scores, "Write per-pixel ranking scores into the report");
  c_ev->add_flag("--pgm", ea.pgm, "Write uncertainty and decision PGMs");
  c_ev->add_option("--out-dir", ea.out_dir, "Output directory")->required();

  SynthArgs sa;
  auto* c_syn = app.add_subcommand("synth", "Write a synthetic fixture with planted structure");
  c_syn->add_option("--spec", sa.spec_file, "SynthSpec JSON; explicit flags override it")->check(CLI::ExistingFile);
  c_syn->add_option("--height", sa.spec.height)->check(CLI::PositiveNumber)->capture_default_str();
  c_syn->add_option("--width", sa.spec.width)->check(CLI::PositiveNumber)->capture_default_str();
  c_syn->add_option("--n-images", sa.spec.n_images)->check(CLI::PositiveNumber)->capture_default_str();
  c_syn->add_option("--error-rate", sa.spec.error_rate)->capture_default_str();
  c_syn->add_option("--corr", sa.spec.unc_error_corr, "Target 2*AUROC(uncertainty, error) - 1")->capture_default_str();
  c_syn->add_option("--calibration", sa.calibration)
      ->check(CLI::IsMember({"calibrated", "overconfident", "underconfident"}))
      ->capture_default_str();
  c_syn->add_option("--temperature", sa.spec.temperature, "Planted temperature")->capture_default_str();
  c_syn->add_option("--passes", sa.spec.passes)->capture_default_str();
  c_syn->add_option("--source", sa.source)->check(CLI::IsMember({"mc_dropout", "ensemble", "tta"}))->capture_default_str();
  c_syn->add_flag("--tta-transformed", sa.spec.tta_transformed, "Store TTA planes transformed, with ids");
  c_syn->add_option("--dtype", sa.dtype)->check(dtype_check)->capture_default_str();
  c_syn->add_option("--out-dir", sa.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInputError;
  }

  try {
    if (*c_ag) return run_aggregate(ag, c_ag, g);
    if (*c_ca) return run_calibrate(ca, c_ca, g);
    if (*c_fit) return run_fit(fa, c_fit, g);
    if (*c_def) return run_defer(da, c_def, g);
    if (*c_ev) return run_evaluate(ea, c_ev, g);
    if (*c_syn) return run_synth(sa, c_syn, g);
  } catch (const InfeasibleFit& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInfeasible;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const ArrayFileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const UndefinedMetricError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const InvariantError& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return kInvariant;
  } catch (const std::domain_error& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return kInvariant;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kOk;
}
