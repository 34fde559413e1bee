#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fpte/bench.hpp"

namespace fs = std::filesystem;
using namespace fpte;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  cmd->add_option("--config", c.config, "JSON run configuration")->required();
  cmd->add_option("--set", c.overrides, "override a config value, e.g. --set bench.trials=50");
  cmd->add_option("--seed", c.seed, "top-level seed (recorded in every output)");
  cmd->add_option("--jobs", c.jobs, "worker threads (0 = all cores)");
  cmd->add_option("--out", c.out, out_help);
}

// Resolves the config document: file, then --set overrides, then explicit flags.
RunConfig resolve(const Common& c, const std::string& out_key) {
  Json doc = apply_overrides(read_json_file(c.config), c.overrides);
  if (c.seed) doc["seed"] = *c.seed;
  if (c.jobs) doc["jobs"] = *c.jobs;
  if (!c.out.empty()) doc["paths"][out_key] = c.out;
  return RunConfig::from_json(doc);
}

void print(const Json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FPTE grasping pipeline: data generation, training and benchmarking"};
  app.require_subcommand(1);

  Common dg, tg, te, be, sw, pr;
  auto* c_dg = app.add_subcommand("datagen", "generate the labeled grasp dataset");
  add_common(c_dg, dg, "dataset directory (paths.dataset)");
  auto* c_tg = app.add_subcommand("train-gen", "train the grasp generator");
  add_common(c_tg, tg, "generator checkpoint (paths.generator)");
  auto* c_te = app.add_subcommand("train-ev", "train the grasp evaluator");
  add_common(c_te, te, "evaluator checkpoint (paths.evaluator)");
  auto* c_be = app.add_subcommand("bench", "paired FPTE vs TRAD benchmark");
  add_common(c_be, be, "output directory (paths.out)");
  std::optional<int> trials;
  c_be->add_option("--trials", trials, "number of paired trials");
  auto* c_sw = app.add_subcommand("sweep", "position-threshold sweep over successful FPTE grasps");
  add_common(c_sw, sw, "output directory (paths.out)");
  std::string results;
  c_sw->add_option("--results", results, "trials.jsonl from bench (default <out>/trials.jsonl)");
  auto* c_pr = app.add_subcommand("pr", "evaluator precision-recall curve on the held-out scenes");
  add_common(c_pr, pr, "output directory (paths.out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (c_dg->parsed()) {
      const RunConfig cfg = resolve(dg, "dataset");
      print(cmd_datagen(cfg).to_json());
    } else if (c_tg->parsed()) {
      const RunConfig cfg = resolve(tg, "generator");
      const TrainResult r = cmd_train_generator(cfg);
      print(Json{{"checkpoint", cfg.generator_path},
                 {"curve", cfg.generator_path + ".curve.csv"},
                 {"final_nll", r.curve.empty() ? Json(nullptr) : Json(r.curve.back().loss)},
                 {"seed", cfg.train_generator.seed}});
    } else if (c_te->parsed()) {
      const RunConfig cfg = resolve(te, "evaluator");
      const TrainResult r = cmd_train_evaluator(cfg);
      print(Json{{"checkpoint", cfg.evaluator_path},
                 {"curve", cfg.evaluator_path + ".curve.csv"},
                 {"held_out_auc", r.held_out_auc},
                 {"seed", cfg.train_evaluator.seed}});
    } else if (c_be->parsed()) {
      Common c = be;
      if (trials) c.overrides.push_back("bench.trials=" + std::to_string(*trials));
      const RunConfig cfg = resolve(c, "out");
      if (cfg.out_dir.empty()) throw ConfigError("paths.out: missing required key");
      Json rep = cmd_bench(cfg, cfg.out_dir).to_json();
      rep.erase("config");
      rep.erase("scene_seeds");
      print(rep);
    } else if (c_sw->parsed()) {
      const RunConfig cfg = resolve(sw, "out");
      if (cfg.out_dir.empty()) throw ConfigError("paths.out: missing required key");
      const std::string in = results.empty() ? (fs::path(cfg.out_dir) / "trials.jsonl").string() : results;
      const auto rows = cmd_threshold_sweep(in, cfg.sweep_thresholds, cfg.planner.rot_threshold,
                                            (fs::path(cfg.out_dir) / "sweep.csv").string());
      std::cout << sweep_csv(rows);
    } else if (c_pr->parsed()) {
      const RunConfig cfg = resolve(pr, "out");
      if (cfg.out_dir.empty()) throw ConfigError("paths.out: missing required key");
      if (cfg.evaluator_path.empty()) throw ConfigError("paths.evaluator: missing required key");
      if (cfg.dataset_dir.empty()) throw ConfigError("paths.dataset: missing required key");
      const PrReport r = cmd_pr_curve(cfg.evaluator_path, cfg.dataset_dir, cfg.held_out_fraction,
                                      (fs::path(cfg.out_dir) / "pr.csv").string());
      print(Json{{"auc", r.auc}, {"samples", r.samples}, {"positives", r.positives},
                 {"csv", (fs::path(cfg.out_dir) / "pr.csv").string()}});
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
