#include "fpte/bench.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

namespace fpte {

namespace fs = std::filesystem;

// ------------------------------------------------------------------ statistics

Interval wilson_interval(std::size_t successes, std::size_t n, double z) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double center = (p + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

PairedDifference paired_difference(const std::vector<double>& a, const std::vector<double>& b, double z) {
  if (a.size() != b.size()) throw DimensionError("paired_difference: sequences differ in length");
  if (a.empty()) throw ConfigError("paired_difference: no pairs");
  PairedDifference d;
  d.n = a.size();
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  d.mean = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(d.n);
  double ss = 0.0;
  for (double v : diff) ss += (v - d.mean) * (v - d.mean);
  d.sd = d.n > 1 ? std::sqrt(ss / static_cast<double>(d.n - 1)) : 0.0;
  const double half = z * d.sd / std::sqrt(static_cast<double>(d.n));
  d.ci = {d.mean - half, d.mean + half};
  return d;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DimensionError("roc_auc: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += (l != 0);
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ConfigError("roc_auc: need both positive and negative samples");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t t = i; t < j; ++t)
      if (labels[idx[t]] != 0) rank_sum += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

std::vector<PrPoint> pr_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DimensionError("pr_curve: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += (l != 0);
  if (n_pos == 0 || n_pos == labels.size()) throw ConfigError("pr_curve: need both positive and negative samples");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<PrPoint> out;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] != 0 ? tp : fp)++;
      ++j;
    }
    out.push_back({scores[idx[i]], static_cast<double>(tp) / static_cast<double>(tp + fp),
                   static_cast<double>(tp) / static_cast<double>(n_pos)});
    i = j;
  }
  return out;
}

std::vector<SweepRow> threshold_sweep(const std::vector<double>& pos_err, const std::vector<Vec3>& rot_err,
                                      const std::vector<double>& thresholds, double rot_threshold) {
  if (pos_err.size() != rot_err.size()) throw DimensionError("threshold_sweep: error lists differ in length");
  std::vector<SweepRow> rows;
  if (pos_err.empty()) return rows;
  for (double t : thresholds) {
    SweepRow r;
    r.threshold = t;
    r.total = pos_err.size();
    for (std::size_t i = 0; i < pos_err.size(); ++i)
      r.included += (pos_err[i] <= t && rot_err[i].cwiseAbs().maxCoeff() <= rot_threshold);
    r.fraction = static_cast<double>(r.included) / static_cast<double>(r.total);
    rows.push_back(r);
  }
  return rows;
}

namespace {

std::ostringstream csv_stream() {
  std::ostringstream ss;
  ss.imbue(std::locale::classic());
  ss << std::setprecision(10);
  return ss;
}

void put_number(std::ostringstream& ss, double v) {
  if (std::isinf(v)) {
    ss << (v > 0 ? "inf" : "-inf");
  } else {
    ss << v;
  }
}

}  // namespace

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  auto ss = csv_stream();
  ss << "pos_threshold_m,included,total,fraction\n";
  for (const auto& r : rows) {
    put_number(ss, r.threshold);
    ss << ',' << r.included << ',' << r.total << ',';
    put_number(ss, r.fraction);
    ss << '\n';
  }
  return ss.str();
}

std::string pr_csv(const std::vector<PrPoint>& rows) {
  auto ss = csv_stream();
  ss << "threshold,precision,recall\n";
  for (const auto& r : rows) {
    put_number(ss, r.threshold);
    ss << ',';
    put_number(ss, r.precision);
    ss << ',';
    put_number(ss, r.recall);
    ss << '\n';
  }
  return ss.str();
}

std::string curve_csv(const std::vector<CurvePoint>& rows) {
  auto ss = csv_stream();
  ss << "step,loss,accuracy\n";
  for (const auto& r : rows) {
    ss << r.step << ',';
    put_number(ss, r.loss);
    ss << ',';
    put_number(ss, r.accuracy);
    ss << '\n';
  }
  return ss.str();
}

// ------------------------------------------------------------------ run configuration

bps::BasisSet RunConfig::basis() const { return bps::make_basis(bps_size, bps_radius, bps_seed); }

RunConfig RunConfig::from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  RunConfig c;
  c.raw = j;
  c.seed = require_as<std::uint64_t>(j, "seed", "config");
  c.jobs = value_or(j, "jobs", 0, "config");
  if (j.contains("robot")) {
    const Json& r = j.at("robot");
    c.robot = r.is_string() ? RobotModel::load(r.get<std::string>()) : RobotModel::from_json(r);
  }
  if (j.contains("world")) c.world = WorldConfig::from_json(j.at("world"));
  if (j.contains("bps")) {
    const Json& b = j.at("bps");
    c.bps_size = value_or(b, "size", c.bps_size, "bps");
    c.bps_radius = value_or(b, "radius", c.bps_radius, "bps");
    c.bps_seed = value_or(b, "seed", c.bps_seed, "bps");
    if (c.bps_size < 1) throw ConfigError("bps.size: must be >= 1");
    if (!(c.bps_radius > 0.0)) throw ConfigError("bps.radius: must be > 0");
  }
  if (j.contains("planner")) c.planner = PlannerConfig::from_json(j.at("planner"));
  if (j.contains("pipeline")) c.pipeline = PipelineConfig::from_json(j.at("pipeline"));

  Json dg = j.value("datagen", Json::object());
  if (!dg.contains("seed")) dg["seed"] = c.seed;
  if (!dg.contains("n_rays")) dg["n_rays"] = c.pipeline.n_rays;
  c.datagen = DatagenConfig::from_json(dg);
  c.datagen.world = c.world;
  c.datagen.planner = c.planner;
  c.datagen.grasp = c.pipeline.grasp;
  c.datagen.jobs = c.jobs;

  Json tg = j.value("train_generator", Json::object());
  if (!tg.contains("seed")) tg["seed"] = c.seed;
  c.train_generator = GeneratorTrainConfig::from_json(tg);
  Json te = j.value("train_evaluator", Json::object());
  if (!te.contains("seed")) te["seed"] = c.seed;
  c.train_evaluator = EvaluatorTrainConfig::from_json(te);

  if (j.contains("eval")) c.held_out_fraction = value_or(j.at("eval"), "held_out_fraction", c.held_out_fraction, "eval");
  if (!(c.held_out_fraction > 0.0 && c.held_out_fraction < 1.0))
    throw ConfigError("eval.held_out_fraction: must be in (0, 1)");

  c.sweep_thresholds = {0.0, 0.001, 0.0025, 0.005, 0.0075, 0.01, 0.015, 0.02, 0.03, 0.05, 0.075, 0.1, 0.2, 0.5, 1.0};
  if (j.contains("bench")) {
    const Json& b = j.at("bench");
    c.trials = value_or(b, "trials", c.trials, "bench");
    c.bench_seed = value_or(b, "seed", c.bench_seed, "bench");
    c.sweep_thresholds = value_or(b, "sweep_thresholds", c.sweep_thresholds, "bench");
  }
  if (j.contains("paths")) {
    const Json& p = j.at("paths");
    c.dataset_dir = value_or(p, "dataset", std::string(), "paths");
    c.generator_path = value_or(p, "generator", std::string(), "paths");
    c.evaluator_path = value_or(p, "evaluator", std::string(), "paths");
    c.out_dir = value_or(p, "out", std::string(), "paths");
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) { return from_json(read_json_file(path)); }

Json apply_overrides(Json doc, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "': expected key=value");
    const std::string key = o.substr(0, eq);
    const std::string text = o.substr(eq + 1);
    Json value;
    try {
      value = Json::parse(text);
    } catch (const Json::exception&) {
      value = text;
    }
    Json* node = &doc;
    std::size_t start = 0;
    for (;;) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("override '" + o + "': empty key segment");
      if (!node->is_object()) throw ConfigError("override '" + o + "': '" + part + "' is not inside an object");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      if (node->is_null()) *node = Json::object();
      start = dot + 1;
    }
  }
  return doc;
}

// ------------------------------------------------------------------ benchmark

Json TrialRecord::to_json() const {
  return Json{{"trial", trial},
              {"scene_seed", scene_seed},
              {"seed", seed},
              {"blocked", blocked},
              {"fpte", fpte.to_json()},
              {"trad", trad.to_json()}};
}

Json MethodSummary::to_json() const {
  return Json{{"trials", trials},
              {"successes", successes},
              {"executed", executed},
              {"success_rate", success_rate},
              {"success_ci95", {success_ci.lo, success_ci.hi}},
              {"mean_predicted_executed", mean_predicted_executed},
              {"mean_planner_attempts", mean_planner_attempts}};
}

Json BenchmarkReport::to_json() const {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return Json{{"trials", trials},
              {"fpte", fpte.to_json()},
              {"trad", trad.to_json()},
              {"success_gap",
               {{"mean", success_gap.mean}, {"sd", success_gap.sd}, {"ci95", {success_gap.ci.lo, success_gap.ci.hi}}}},
              {"predicted_gap", num(predicted_gap)},
              {"trad_no_trajectory", trad_no_trajectory},
              {"blocked_trials", blocked_trials},
              {"blocked_trad_no_trajectory", blocked_trad_no_trajectory},
              {"fpte_executed", fpte_executed_all},
              {"fpte_successes_passing_thresholds", fpte_successes_passing},
              {"fpte_success_pass_fraction", num(fpte_success_pass_fraction)},
              {"scene_seeds", scene_seeds},
              {"trials_path", trials_path},
              {"config", config}};
}

std::uint64_t bench_scene_seed(const RunConfig& cfg, int trial) {
  for (int a = 0; a < 16; ++a) {
    const std::uint64_t s = mix_seed(cfg.bench_seed, static_cast<std::uint64_t>(trial) +
                                                         static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(cfg.trials));
    try {
      render_partial_cloud(make_scene(s, cfg.world), cfg.pipeline.n_rays, mix_seed(mix_seed(s, 0x7e), 1));
      return s;
    } catch (const PerceptionError&) {
    }
  }
  throw PerceptionError("bench: no visible scene for trial " + std::to_string(trial));
}

std::vector<TrialRecord> run_trials(const RunConfig& cfg, const Generator& gen, const Evaluator& ev) {
  if (cfg.trials < 1) throw ConfigError("bench.trials: must be >= 1");
  std::vector<TrialRecord> out(static_cast<std::size_t>(cfg.trials));
  PlannerConfig planner = cfg.planner;
  planner.jobs = 1;
  const JointConfig start = default_start_config(cfg.robot);
  parallel_for(
      out.size(),
      [&](std::size_t i) {
        TrialRecord& t = out[i];
        t.trial = static_cast<int>(i);
        t.scene_seed = bench_scene_seed(cfg, t.trial);
        t.seed = mix_seed(t.scene_seed, 0x7e);
        t.blocked = scene_is_blocked(t.scene_seed, cfg.world);
        const Scene scene = make_scene(t.scene_seed, cfg.world);
        t.fpte = run_fpte(scene, cfg.robot, start, gen, ev, planner, cfg.pipeline, t.seed);
        t.trad = run_trad(scene, cfg.robot, start, gen, ev, planner, cfg.pipeline, t.seed);
      },
      cfg.jobs);
  return out;
}

namespace {

MethodSummary summarize_method(const std::vector<const PipelineResult*>& rs) {
  MethodSummary m;
  m.trials = rs.size();
  double pred = 0.0, attempts = 0.0;
  for (const auto* r : rs) {
    m.successes += r->actual_success;
    attempts += r->planner_attempts;
    if (r->executed) {
      ++m.executed;
      pred += r->predicted_success;
    }
  }
  m.success_rate = m.trials ? static_cast<double>(m.successes) / static_cast<double>(m.trials) : 0.0;
  m.success_ci = wilson_interval(m.successes, m.trials);
  m.mean_predicted_executed = m.executed ? pred / static_cast<double>(m.executed) : std::nan("");
  m.mean_planner_attempts = m.trials ? attempts / static_cast<double>(m.trials) : 0.0;
  return m;
}

}  // namespace

BenchmarkReport summarize(const std::vector<TrialRecord>& trials, const RunConfig& cfg) {
  if (trials.empty()) throw ConfigError("bench: no trials to summarize");
  BenchmarkReport rep;
  rep.trials = trials.size();
  std::vector<const PipelineResult*> f, t;
  std::vector<double> fs_, ts_;
  for (const auto& tr : trials) {
    f.push_back(&tr.fpte);
    t.push_back(&tr.trad);
    fs_.push_back(tr.fpte.actual_success ? 1.0 : 0.0);
    ts_.push_back(tr.trad.actual_success ? 1.0 : 0.0);
    rep.scene_seeds.push_back(tr.scene_seed);
    rep.trad_no_trajectory += !tr.trad.executed;
    rep.fpte_executed_all += tr.fpte.executed;
    if (tr.blocked) {
      ++rep.blocked_trials;
      rep.blocked_trad_no_trajectory += !tr.trad.executed;
    }
    if (tr.fpte.actual_success) rep.fpte_successes_passing += tr.fpte.passes_thresholds;
  }
  rep.fpte = summarize_method(f);
  rep.trad = summarize_method(t);
  rep.success_gap = paired_difference(fs_, ts_);
  rep.predicted_gap = rep.fpte.mean_predicted_executed - rep.trad.mean_predicted_executed;
  rep.fpte_success_pass_fraction = rep.fpte.successes
                                       ? static_cast<double>(rep.fpte_successes_passing) / static_cast<double>(rep.fpte.successes)
                                       : std::nan("");
  rep.config = cfg.raw;
  return rep;
}

namespace {

void require_artifacts(const std::vector<std::pair<std::string, std::string>>& named) {
  std::string missing;
  for (const auto& [name, path] : named) {
    if (path.empty()) throw ConfigError("paths." + name + ": missing required key");
    if (!fs::exists(path)) missing += (missing.empty() ? "" : ", ") + path;
  }
  if (!missing.empty()) throw MissingArtifactError("missing artifacts: " + missing);
}

std::vector<double> successful_errors(const std::string& results_path, std::vector<Vec3>* rot) {
  std::istringstream in(read_text_file(results_path));
  std::string line;
  std::vector<double> pos;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    const Json& f = j.at("fpte");
    if (!f.at("actual_success").get<bool>()) continue;
    const Json& d = f.at("diagnostics");
    pos.push_back(d.at("pos_err").get<double>());
    const Json& r = d.at("rot_err_per_axis");
    rot->emplace_back(r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>());
  }
  return pos;
}

}  // namespace

BenchmarkReport cmd_bench(const RunConfig& cfg, const std::string& out_dir) {
  if (cfg.trials < 1) throw ConfigError("bench.trials: must be >= 1 (empty benchmark)");
  require_artifacts({{"generator", cfg.generator_path}, {"evaluator", cfg.evaluator_path}});
  const Generator gen = Generator::load(cfg.generator_path);
  const Evaluator ev = Evaluator::load(cfg.evaluator_path);
  const std::vector<TrialRecord> trials = run_trials(cfg, gen, ev);
  std::string lines;
  for (const auto& t : trials) lines += t.to_json().dump() + "\n";
  const std::string trials_path = (fs::path(out_dir) / "trials.jsonl").string();
  write_text_file(trials_path, lines);
  BenchmarkReport rep = summarize(trials, cfg);
  rep.trials_path = trials_path;
  Json out = rep.to_json();
  out["seeds"] = {{"config", cfg.seed}, {"bench", cfg.bench_seed}};
  write_text_file((fs::path(out_dir) / "report.json").string(), out.dump(2) + "\n");
  cmd_threshold_sweep(trials_path, cfg.sweep_thresholds, cfg.planner.rot_threshold,
                      (fs::path(out_dir) / "sweep.csv").string());
  return rep;
}

std::vector<SweepRow> cmd_threshold_sweep(const std::string& results_path, const std::vector<double>& thresholds,
                                          double rot_threshold, const std::string& csv_path) {
  if (!fs::exists(results_path)) throw MissingArtifactError("results not found: " + results_path);
  std::vector<Vec3> rot;
  const std::vector<double> pos = successful_errors(results_path, &rot);
  const std::vector<SweepRow> rows = threshold_sweep(pos, rot, thresholds, rot_threshold);
  if (rows.empty()) std::cerr << "warning: no successful FPTE grasps in " << results_path << "; sweep table is empty\n";
  write_text_file(csv_path, sweep_csv(rows));
  return rows;
}

std::vector<std::uint64_t> split_scenes(const Dataset& ds, double held_out_fraction, bool held_out) {
  std::vector<std::uint64_t> out;
  for (const auto& [seed, cloud] : ds.clouds)
    if (is_held_out(seed, held_out_fraction) == held_out) out.push_back(seed);
  return out;
}

double evaluator_auc(const Evaluator& ev, const std::vector<GraspSample>& samples) {
  std::vector<double> scores(samples.size());
  std::vector<int> labels(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    scores[i] = ev.evaluate(*samples[i].encoding, samples[i].grasp);
    labels[i] = samples[i].success ? 1 : 0;
  });
  return roc_auc(scores, labels);
}

PrReport cmd_pr_curve(const std::string& evaluator_path, const std::string& dataset_path, double held_out_fraction,
                      const std::string& csv_path) {
  require_artifacts({{"evaluator", evaluator_path}, {"dataset", dataset_path}});
  const Evaluator ev = Evaluator::load(evaluator_path);
  const Dataset ds = read_dataset(dataset_path);
  const std::vector<std::uint64_t> held = split_scenes(ds, held_out_fraction, true);
  const std::vector<GraspSample> samples = training_samples(ds, ev.basis, &held);
  std::vector<double> scores(samples.size());
  std::vector<int> labels(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    scores[i] = ev.evaluate(*samples[i].encoding, samples[i].grasp);
    labels[i] = samples[i].success ? 1 : 0;
  });
  PrReport rep;
  rep.samples = samples.size();
  for (int l : labels) rep.positives += l;
  rep.auc = roc_auc(scores, labels);
  rep.curve = pr_curve(scores, labels);
  write_text_file(csv_path, pr_csv(rep.curve));
  return rep;
}

DatagenSummary cmd_datagen(const RunConfig& cfg) {
  if (cfg.dataset_dir.empty()) throw ConfigError("paths.dataset: missing required key");
  return generate_dataset(cfg.datagen, cfg.robot, cfg.dataset_dir);
}

TrainResult cmd_train_generator(const RunConfig& cfg) {
  if (cfg.generator_path.empty()) throw ConfigError("paths.generator: missing required key");
  require_artifacts({{"dataset", cfg.dataset_dir}});
  const Dataset ds = read_dataset(cfg.dataset_dir);
  const std::vector<std::uint64_t> train = split_scenes(ds, cfg.held_out_fraction, false);
  const std::vector<SceneGrasps> data = positive_scene_grasps(ds, &train);
  TrainResult res;
  const Generator gen = train_generator(data, cfg.basis(), HandLimits::of(cfg.robot), cfg.train_generator, &res.curve);
  gen.save(cfg.generator_path, Json{{"config", cfg.raw},
                                    {"train", cfg.train_generator.to_json()},
                                    {"dataset_hash", ds.meta.value("content_hash", "")}});
  write_text_file(cfg.generator_path + ".curve.csv", curve_csv(res.curve));
  return res;
}

TrainResult cmd_train_evaluator(const RunConfig& cfg) {
  if (cfg.evaluator_path.empty()) throw ConfigError("paths.evaluator: missing required key");
  require_artifacts({{"dataset", cfg.dataset_dir}});
  const Dataset ds = read_dataset(cfg.dataset_dir);
  const bps::BasisSet basis = cfg.basis();
  const std::vector<std::uint64_t> train = split_scenes(ds, cfg.held_out_fraction, false);
  const std::vector<std::uint64_t> held = split_scenes(ds, cfg.held_out_fraction, true);
  TrainResult res;
  const Evaluator ev = train_evaluator(training_samples(ds, basis, &train), basis, cfg.robot.hand_dof(),
                                       cfg.train_evaluator, &res.curve);
  res.held_out_auc = evaluator_auc(ev, training_samples(ds, basis, &held));
  ev.save(cfg.evaluator_path, Json{{"config", cfg.raw},
                                   {"train", cfg.train_evaluator.to_json()},
                                   {"held_out_auc", res.held_out_auc},
                                   {"dataset_hash", ds.meta.value("content_hash", "")}});
  write_text_file(cfg.evaluator_path + ".curve.csv", curve_csv(res.curve));
  return res;
}

}  // namespace fpte
