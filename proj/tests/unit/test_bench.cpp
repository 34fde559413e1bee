#include <doctest.h>

#include <clocale>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fpte/bench.hpp"

using namespace fpte;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json minimal_config() { return Json{{"seed", 3}}; }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FPTE_CLI_PATH) + " " + args + " > cli_stdout.txt 2> cli_stderr.txt";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("Wilson interval") {
  const Interval all = wilson_interval(10, 10);
  CHECK(all.hi == 1.0);
  CHECK(all.lo == doctest::Approx(0.7225).epsilon(1e-3));
  const Interval half = wilson_interval(50, 100);
  CHECK(half.lo == doctest::Approx(0.4038).epsilon(1e-3));
  CHECK(half.hi == doctest::Approx(0.5962).epsilon(1e-3));
  CHECK(wilson_interval(0, 0).lo == 0.0);
  CHECK(wilson_interval(0, 0).hi == 1.0);
  CHECK(wilson_interval(0, 20).lo == 0.0);
}

TEST_CASE("paired difference") {
  const PairedDifference d = paired_difference({1, 1, 0, 1}, {0, 1, 0, 0});
  CHECK(d.n == 4);
  CHECK(d.mean == 0.5);
  CHECK(d.sd == doctest::Approx(std::sqrt(1.0 / 3.0)));
  CHECK(d.ci.lo == doctest::Approx(0.5 - 1.96 * std::sqrt(1.0 / 3.0) / 2.0));
  const PairedDifference same = paired_difference({0.3, 0.3}, {0.1, 0.1});
  CHECK(same.ci.lo == doctest::Approx(0.2));
  CHECK(same.ci.hi == doctest::Approx(0.2));
  CHECK_THROWS_AS(paired_difference({}, {}), ConfigError);
  CHECK_THROWS_AS(paired_difference({1.0}, {1.0, 2.0}), DimensionError);
}

TEST_CASE("ROC AUC") {
  CHECK(roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  CHECK(roc_auc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == 0.0);
  CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
  // One of four positive-negative pairs is misordered.
  CHECK(roc_auc({0.1, 0.6, 0.5, 0.9}, {0, 0, 1, 1}) == 0.75);
  CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {1, 1}), ConfigError);
  CHECK_THROWS_AS(roc_auc({0.1}, {0, 1}), DimensionError);
}

TEST_CASE("precision-recall curve") {
  const std::vector<int> labels = {1, 0, 1, 1, 0, 0, 1, 0};
  std::vector<double> perfect(labels.begin(), labels.end());
  const auto pc = pr_curve(perfect, labels);
  CHECK(roc_auc(perfect, labels) == 1.0);
  for (const auto& p : pc)
    if (p.threshold > 0.5) CHECK(p.precision == 1.0);
  CHECK(pc.front().recall == 1.0);

  const auto flat = pr_curve(std::vector<double>(labels.size(), 0.3), labels);
  REQUIRE(flat.size() == 1);
  CHECK(flat[0].recall == 1.0);
  CHECK(flat[0].precision == 0.5);

  const auto curve = pr_curve({0.9, 0.8, 0.7, 0.6}, {1, 0, 1, 0});
  REQUIRE(curve.size() == 4);
  CHECK(curve[0].threshold == 0.9);
  CHECK(curve[0].precision == 1.0);
  CHECK(curve[0].recall == 0.5);
  CHECK(curve[2].precision == doctest::Approx(2.0 / 3.0));
  CHECK(curve[3].recall == 1.0);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].recall >= curve[i - 1].recall);
  CHECK_THROWS_AS(pr_curve({0.1, 0.2}, {0, 0}), ConfigError);
}

TEST_CASE("threshold sweep") {
  Rng rng(5);
  std::vector<double> pos;
  std::vector<Vec3> rot;
  for (int i = 0; i < 200; ++i) {
    pos.push_back(uniform(rng, 1e-6, 0.05));
    rot.push_back(Vec3(uniform(rng, -0.4, 0.4), uniform(rng, -0.4, 0.4), 0.0));
  }
  const double inf = std::numeric_limits<double>::infinity();
  const auto all = threshold_sweep(pos, rot, {inf}, inf);
  CHECK(all[0].fraction == 1.0);
  CHECK(all[0].total == 200);
  CHECK(threshold_sweep(pos, rot, {0.0}, inf)[0].fraction == 0.0);
  const auto rows = threshold_sweep(pos, rot, {0.0, 0.001, 0.005, 0.01, 0.02, 0.05, 1.0}, 14.0 * M_PI / 180.0);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].fraction >= rows[i - 1].fraction);
  CHECK(rows.back().fraction < 1.0);  // some rotations exceed 14 degrees
  CHECK(threshold_sweep({}, {}, {0.1}, inf).empty());
}

TEST_CASE("CSV output is locale-independent with stable headers") {
  const char* prev = std::setlocale(LC_NUMERIC, nullptr);
  const std::string saved = prev ? prev : "C";
  std::setlocale(LC_NUMERIC, "de_DE.UTF-8");  // may be unavailable; the check holds either way
  std::locale::global(std::locale::classic());
  const std::string s = sweep_csv({{0.005, 1, 4, 0.25}, {std::numeric_limits<double>::infinity(), 4, 4, 1.0}});
  CHECK(s == "pos_threshold_m,included,total,fraction\n0.005,1,4,0.25\ninf,4,4,1\n");
  CHECK(pr_csv({{0.5, 0.75, 1.0}}) == "threshold,precision,recall\n0.5,0.75,1\n");
  CHECK(curve_csv({{1, 0.5, 0.25}}).rfind("step,loss,accuracy\n1,0.5,0.25", 0) == 0);
  std::setlocale(LC_NUMERIC, saved.c_str());
}

TEST_CASE("run configuration parsing") {
  const RunConfig c = RunConfig::from_json(minimal_config());
  CHECK(c.seed == 3);
  CHECK(c.datagen.seed == 3);
  CHECK(c.train_evaluator.seed == 3);
  CHECK(c.trials == 200);
  CHECK(c.sweep_thresholds.size() > 3);
  CHECK(c.raw.at("seed") == 3);

  try {
    RunConfig::from_json(Json{{"bench", {{"trials", 5}}}});
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("seed") != std::string::npos);
  }
  Json bad = minimal_config();
  bad["eval"] = {{"held_out_fraction", 1.5}};
  CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
  bad = minimal_config();
  bad["planner"] = {{"pos_threshold", -1.0}};
  CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
  bad = minimal_config();
  bad["pipeline"] = {{"k", "many"}};
  CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
}

TEST_CASE("config overrides") {
  const Json doc = apply_overrides(minimal_config(), {"bench.trials=7", "paths.out=some/dir", "planner.weights.position=5.5"});
  CHECK(doc.at("bench").at("trials") == 7);
  CHECK(doc.at("paths").at("out") == "some/dir");
  CHECK(doc.at("planner").at("weights").at("position") == 5.5);
  const RunConfig c = RunConfig::from_json(doc);
  CHECK(c.trials == 7);
  CHECK(c.planner.weights.position == 5.5);
  CHECK_THROWS_AS(apply_overrides(minimal_config(), {"no_equals_sign"}), ConfigError);
}

TEST_CASE("bench rejects empty runs and missing checkpoints") {
  Json doc = minimal_config();
  doc["bench"] = {{"trials", 0}};
  doc["paths"] = {{"generator", "nowhere/gen.fpnn"}, {"evaluator", "nowhere/ev.fpnn"}};
  CHECK_THROWS_AS(cmd_bench(RunConfig::from_json(doc), "."), ConfigError);
  doc["bench"]["trials"] = 2;
  try {
    cmd_bench(RunConfig::from_json(doc), ".");
    FAIL("expected a missing-artifact error");
  } catch (const MissingArtifactError& e) {
    CHECK(std::string(e.what()).find("nowhere/gen.fpnn") != std::string::npos);
    CHECK(std::string(e.what()).find("nowhere/ev.fpnn") != std::string::npos);
  }
}

TEST_CASE("scene seeds are shared by both methods and visible") {
  RunConfig c = RunConfig::from_json(minimal_config());
  c.trials = 5;
  for (int i = 0; i < c.trials; ++i) {
    const std::uint64_t s = bench_scene_seed(c, i);
    CHECK(s == bench_scene_seed(c, i));
    CHECK_NOTHROW(render_partial_cloud(make_scene(s, c.world), c.pipeline.n_rays, mix_seed(mix_seed(s, 0x7e), 1)));
  }
}

TEST_CASE("command line end to end") {
  const fs::path dir = fs::absolute("test_bench_cli");
  fs::remove_all(dir);
  fs::create_directories(dir);
  const Json cfg = {
      {"seed", 5},
      {"jobs", 1},
      {"bps", {{"size", 32}, {"radius", 0.15}, {"seed", 2}}},
      {"datagen", {{"n_scenes", 6}, {"k", 8}}},
      {"planner", {{"iterations", 60}}},
      {"pipeline", {{"k", 4}, {"n_rays", 2048}}},
      {"train_evaluator", {{"steps", 30}, {"batch_size", 12}, {"hidden", {16}}}},
      {"train_generator", {{"epochs", 3}, {"batch_size", 8}, {"hidden", {16}}, {"components", 2}}},
      {"eval", {{"held_out_fraction", 0.5}}},
      {"bench", {{"trials", 3}, {"seed", 9}}},
      {"paths",
       {{"dataset", (dir / "ds").string()},
        {"generator", (dir / "gen.fpnn").string()},
        {"evaluator", (dir / "ev.fpnn").string()},
        {"out", (dir / "bench").string()}}}};
  std::ofstream(dir / "cfg.json") << cfg.dump(2);
  const std::string conf = "--config " + (dir / "cfg.json").string();

  CHECK(run_cli("") == 2);
  CHECK(run_cli("bench " + conf) == 3);
  CHECK(slurp("cli_stderr.txt").find("gen.fpnn") != std::string::npos);
  CHECK(run_cli("bench " + conf + " --trials 0") == 2);
  std::ofstream(dir / "noseed.json") << Json{{"bench", {{"trials", 1}}}}.dump();
  CHECK(run_cli("bench --config " + (dir / "noseed.json").string()) == 2);
  CHECK(slurp("cli_stderr.txt").find("seed") != std::string::npos);

  REQUIRE(run_cli("datagen " + conf) == 0);
  CHECK(fs::exists(dir / "ds" / "records.jsonl"));
  REQUIRE(run_cli("train-ev " + conf) == 0);
  CHECK(fs::exists(dir / "ev.fpnn"));
  CHECK(slurp(dir / "ev.fpnn.curve.csv").rfind("step,loss,accuracy\n", 0) == 0);
  REQUIRE(run_cli("train-gen " + conf) == 0);
  CHECK(fs::exists(dir / "gen.fpnn.curve.csv"));

  REQUIRE(run_cli("bench " + conf) == 0);
  const Json report = Json::parse(slurp(dir / "bench" / "report.json"));
  CHECK(report.at("trials") == 3);
  CHECK(report.at("config").at("seed") == 5);
  CHECK(report.at("seeds").at("bench") == 9);
  CHECK(report.at("fpte").at("executed") == 3);
  const std::string trials = slurp(dir / "bench" / "trials.jsonl");
  std::istringstream lines(trials);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const Json t = Json::parse(line);
    CHECK(t.at("fpte").at("candidates").size() == t.at("trad").at("candidates").size());
    ++n;
  }
  CHECK(n == 3);
  CHECK(slurp(dir / "bench" / "sweep.csv").rfind("pos_threshold_m,included,total,fraction\n", 0) == 0);

  const std::string first_report = slurp(dir / "bench" / "report.json");
  REQUIRE(run_cli("bench " + conf) == 0);
  CHECK(slurp(dir / "bench" / "trials.jsonl") == trials);
  CHECK(slurp(dir / "bench" / "report.json") == first_report);

  REQUIRE(run_cli("sweep " + conf) == 0);
  CHECK(run_cli("sweep " + conf + " --results " + (dir / "missing.jsonl").string()) == 3);
  REQUIRE(run_cli("pr " + conf) == 0);
  CHECK(slurp(dir / "bench" / "pr.csv").rfind("threshold,precision,recall\n", 0) == 0);
  fs::remove_all(dir);
}
