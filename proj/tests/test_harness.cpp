#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "bba/harness.hpp"

using namespace bba;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bba_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.oracle.toy.oracle = ToyOracleKind::kLowpass;
  c.oracle.toy.shape = {12, 12, 1};
  c.oracle.toy.margin = 0.5;
  c.oracle.toy.surrogate = SurrogateKind::kExact;
  c.budget = 120;
  c.threshold = 1.0;
  c.checkpoints = {40, 80, 120};
  c.seeds = {0, 1};
  c.images.count = 2;
  return c;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(BBA_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, UnknownKeysAreErrors) {
  EXPECT_THROW(parse_experiment_config(nlohmann::json{{"budgett", 10}}), ConfigError);
  EXPECT_THROW(parse_experiment_config(nlohmann::json{{"oracle", {{"toy", "linear"}, {"colour", 1}}}}), ConfigError);
  EXPECT_THROW(parse_experiment_config(nlohmann::json::parse(R"({"grid":[{"perlin":true,"noise":1}]})")), ConfigError);
  EXPECT_THROW(parse_experiment_config(nlohmann::json::parse(R"({"images":{"count":2,"size":3}})")), ConfigError);
  EXPECT_THROW(parse_experiment_config(nlohmann::json::parse(R"({"oracle":{"toy":"conv"}})")), ConfigError);
}

TEST(Config, CheckpointsAndBudget) {
  EXPECT_THROW(parse_experiment_config(nlohmann::json::parse(R"({"budget":100,"checkpoints":[50,40]})")), ConfigError);
  EXPECT_THROW(parse_experiment_config(nlohmann::json::parse(R"({"budget":100,"checkpoints":[50,150]})")), ConfigError);
  EXPECT_THROW(parse_experiment_config(nlohmann::json::parse(R"({"budget":0})")), ConfigError);
  EXPECT_THROW(parse_experiment_config(nlohmann::json::parse(R"({"budget":-5})")), ConfigError);
  EXPECT_THROW(parse_experiment_config(nlohmann::json::parse(R"({"threshold":0})")), ConfigError);
  EXPECT_THROW(parse_experiment_config(nlohmann::json::parse(R"({"step_mode":"fast"})")), ConfigError);
  EXPECT_THROW(parse_experiment_config(nlohmann::json::parse(R"({"grid":{"full":false}})")), ConfigError);
  EXPECT_NO_THROW(parse_experiment_config(nlohmann::json::parse(R"({"budget":100,"checkpoints":[50,100]})")));
}

TEST(Config, Defaults) {
  const ExperimentConfig c = parse_experiment_config(nlohmann::json::object());
  EXPECT_EQ(c.budget, 1000u);
  EXPECT_EQ(effective_checkpoints(c), (std::vector<std::size_t>{500, 1000}));
  EXPECT_NEAR(effective_threshold(c), 0.05 * 32.0, 1e-12);
  EXPECT_NEAR(default_threshold({299, 299, 3}), 25.89, 0.005);
  ExperimentConfig tiny;
  tiny.budget = 300;
  EXPECT_EQ(effective_checkpoints(tiny), (std::vector<std::size_t>{300}));
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = small_config();
  c.grid = full_bias_grid(0.3);
  c.step_mode = StepMode::kTwoQuery;
  c.oracle.toy.region = {1, 2, 3, 4};
  const nlohmann::json j = config_to_json(c);
  EXPECT_EQ(config_to_json(parse_experiment_config(j)), j);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"quick_ablation.json", "composite_ablation.json"})
    EXPECT_NO_THROW(load_experiment_config(std::string(BBA_CONFIG_DIR) + "/" + name)) << name;
  EXPECT_THROW(load_experiment_config("/nonexistent/config.json"), IoError);
}

TEST(BiasGrid, OrderAndLabels) {
  const auto grid = full_bias_grid(0.25);
  ASSERT_EQ(grid.size(), 8u);
  const std::vector<std::string> labels{"none", "perlin", "mask", "perlin+mask", "gradient", "perlin+gradient",
                                        "mask+gradient", "perlin+mask+gradient"};
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(grid[i].label(), labels[i]);
    EXPECT_EQ(grid[i].gradient_weight, 0.25);
  }
}

TEST(PickTarget, NeverTheTrueLabel) {
  Rng rng = make_rng(51);
  const std::vector<std::string> classes{"cat", "dog", "ocarina"};
  std::map<std::string, int> seen;
  for (int i = 0; i < 300; ++i) ++seen[pick_target(classes, "dog", rng)];
  EXPECT_EQ(seen.count("dog"), 0u);
  EXPECT_GT(seen["cat"], 100);
  EXPECT_GT(seen["ocarina"], 100);
  EXPECT_THROW(pick_target({"dog"}, "dog", rng), ConfigError);
}

TEST(TensorFiles, RoundTrip) {
  const fs::path dir = scratch_dir("tensors");
  Rng rng = make_rng(52);
  std::vector<ImageTensor> xs;
  for (int i = 0; i < 3; ++i) {
    ImageTensor x({3, 2, 2});
    for (auto& e : x.data()) e = uniform01(rng);
    save_tensor(x, dir / ("img" + std::to_string(i) + ".json"));
    xs.push_back(x);
  }
  EXPECT_EQ(load_tensor(dir / "img1.json"), xs[1]);
  const auto items = load_image_directory(dir.string());
  ASSERT_EQ(items.size(), 3u);
  EXPECT_EQ(items[0].name, "img0");
  EXPECT_EQ(items[2].original, xs[2]);
  EXPECT_EQ(items[1].pool, (std::vector<ImageTensor>{xs[0], xs[2]}));
  EXPECT_THROW(load_tensor(dir / "missing.json"), IoError);
}

TEST(Aggregation, InfiniteThresholdSucceedsImmediately) {
  ExperimentConfig c = small_config();
  c.grid = {BiasConfig{}};
  c.threshold = kInfinity;
  const ExperimentReport r = run_ablation(c);
  ASSERT_EQ(r.summaries.size(), 1u);
  for (double rate : r.summaries[0].success_rates) EXPECT_EQ(rate, 1.0);
  EXPECT_EQ(r.summaries[0].median_queries, 1.0);
  EXPECT_EQ(r.summaries[0].runs, 4u);
}

TEST(Aggregation, IdenticalConfigsGiveIdenticalRows) {
  ExperimentConfig c = small_config();
  BiasConfig pm;
  pm.use_perlin = pm.use_mask = true;
  c.grid = {pm, pm};
  const ExperimentReport r = run_ablation(c);
  const auto rows = lines_of(summary_csv(r));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1], rows[2]);
  for (std::size_t i = 0; i < r.runs.size() / 2; ++i)
    EXPECT_EQ(trace_csv(r.runs[i]), trace_csv(r.runs[i + r.runs.size() / 2]));
}

TEST(Aggregation, EmptyRunListGivesHeaderOnly) {
  ExperimentReport r;
  r.checkpoints = {100, 200};
  EXPECT_EQ(summary_csv(r), "config,perlin,mask,gradient,gradient_weight,success@100,success@200,median_queries\n");
  const auto s = aggregate({BiasConfig{}}, {}, {100});
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].runs, 0u);
  EXPECT_FALSE(s[0].median_reported());
}

TEST(Aggregation, MedianHiddenAtHalfSuccess) {
  std::vector<RunRecord> runs(4);
  runs[0].queries_to_success = 10;
  runs[1].queries_to_success = 30;
  const auto s = aggregate({BiasConfig{}}, runs, {10, 20, 40});
  EXPECT_EQ(s[0].success_rates, (std::vector<double>{0.25, 0.25, 0.5}));
  EXPECT_EQ(s[0].final_success_rate, 0.5);
  EXPECT_FALSE(s[0].median_reported());
  ExperimentReport r;
  r.checkpoints = {10, 20, 40};
  r.summaries = s;
  EXPECT_EQ(lines_of(summary_csv(r)).back(), "none,no,no,no,0.5,0.25,0.25,0.5,-");
  runs[2].queries_to_success = 40;
  const auto s3 = aggregate({BiasConfig{}}, runs, {10, 20, 40});
  EXPECT_TRUE(s3[0].median_reported());
  EXPECT_EQ(s3[0].median_queries, 35.0);  // {10, 30, 40, inf}
}

TEST(Aggregation, RatesAreMonotone) {
  ExperimentConfig c = small_config();
  c.grid = full_bias_grid(0.5);
  const ExperimentReport r = run_ablation(c);
  for (const auto& s : r.summaries)
    for (std::size_t k = 1; k < s.success_rates.size(); ++k) EXPECT_LE(s.success_rates[k - 1], s.success_rates[k]);
}

TEST(Aggregation, BiasedLowpassDominatesUnbiased) {
  ExperimentConfig c = load_experiment_config(std::string(BBA_CONFIG_DIR) + "/quick_ablation.json");
  c.grid = {BiasConfig{}, full_bias_grid(0.5).back()};
  const ExperimentReport r = run_ablation(c);
  for (std::size_t k = 0; k < r.checkpoints.size(); ++k)
    EXPECT_GE(r.summaries[1].success_rates[k], r.summaries[0].success_rates[k]);
  EXPECT_GT(r.summaries[1].final_success_rate, r.summaries[0].final_success_rate);
}

TEST(Report, TraceHasOneLinePerQuery) {
  ExperimentConfig c = small_config();
  c.budget = 100;
  c.checkpoints = {100};
  c.seeds = {3};
  c.images.count = 1;
  const ExperimentReport r = run_ablation(c);
  ASSERT_EQ(r.runs.size(), 1u);
  const auto lines = lines_of(trace_csv(r.runs[0]));
  EXPECT_EQ(lines.size(), 101u);
  EXPECT_EQ(lines.front(), "query_index,best_distance,adversarial");
}

TEST(Report, ReaggregationFromTraceFiles) {
  ExperimentConfig c = small_config();
  c.grid = full_bias_grid(0.5);
  const ExperimentReport r = run_ablation(c);
  const fs::path dir = scratch_dir("reaggregate");
  emit_report(r, dir.string());

  std::vector<RunRecord> reread;
  for (const auto& orig : r.runs) {
    RunRecord rec;
    rec.config_index = orig.config_index;
    const auto lines = lines_of(slurp(dir / "traces" / trace_file_name(orig)));
    for (std::size_t i = 1; i < lines.size(); ++i) {
      std::stringstream ss(lines[i]);
      std::string q, d;
      std::getline(ss, q, ',');
      std::getline(ss, d, ',');
      if (std::stod(d) <= r.threshold) {
        rec.queries_to_success = std::stoul(q);
        break;
      }
    }
    reread.push_back(rec);
  }
  const auto again = aggregate(c.grid, reread, r.checkpoints);
  for (std::size_t ci = 0; ci < again.size(); ++ci) {
    for (std::size_t k = 0; k < r.checkpoints.size(); ++k)
      EXPECT_NEAR(again[ci].success_rates[k], r.summaries[ci].success_rates[k], 1e-9);
    if (r.summaries[ci].median_reported())
      EXPECT_NEAR(again[ci].median_queries, r.summaries[ci].median_queries, 1e-9);
    else
      EXPECT_FALSE(again[ci].median_reported());
  }
  EXPECT_EQ(slurp(dir / "summary.csv"), summary_csv(r));
  EXPECT_TRUE(fs::exists(dir / "plot_data.csv"));
  const auto meta = nlohmann::json::parse(slurp(dir / "metadata.json"));
  EXPECT_EQ(meta["runs"], r.runs.size());
  EXPECT_FALSE(meta["config"].contains("output_dir"));
}

TEST(Report, JsonFormat) {
  ExperimentConfig c = small_config();
  c.grid = {BiasConfig{}};
  c.budget = 40;
  c.checkpoints = {40};
  const ExperimentReport r = run_ablation(c);
  const fs::path dir = scratch_dir("json_format");
  emit_report(r, dir.string(), "json");
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(summary["rows"].size(), 1u);
  EXPECT_EQ(summary["checkpoints"], nlohmann::json::array({40}));
  EXPECT_TRUE(fs::exists(dir / "plot_data.json"));
  EXPECT_THROW(emit_report(r, dir.string(), "xml"), ConfigError);
}

TEST(Runs, FailedInitializationIsRecorded) {
  const ImageShape s{4, 4, 1};
  const auto oracle = linear_oracle(PerturbationVector(s, 1.0), -100.0);  // never "pos"
  EvaluationItem item{"x", ImageTensor(s, 0.5), {ImageTensor(s, 0.1), ImageTensor(s, 0.9)}};
  const RunRecord rec =
      execute_run(*oracle, AdversarialCriterion::exact_target("pos"), item, BbaConfig{}, 50, 1.0, 0);
  EXPECT_FALSE(rec.initialized);
  EXPECT_FALSE(rec.error.empty());
  EXPECT_EQ(rec.result.queries, 2u);
  EXPECT_EQ(rec.result.trace.size(), 2u);
  EXPECT_FALSE(rec.queries_to_success.has_value());
}

TEST(Cli, AttackIsDeterministic) {
  const fs::path dir = scratch_dir("cli_attack");
  const std::string args = "attack --oracle lowpass --side 16 --budget 200 --threshold 1.0 --biases perlin,mask --seed 4";
  ASSERT_EQ(run_cli(args + " --out " + (dir / "a").string(), dir / "a.log"), 0) << slurp(dir / "a.log");
  ASSERT_EQ(run_cli(args + " --out " + (dir / "b").string(), dir / "b.log"), 0) << slurp(dir / "b.log");
  EXPECT_EQ(slurp(dir / "a.log"), slurp(dir / "b.log"));
  for (const char* f : {"summary.csv", "plot_data.csv", "metadata.json", "adversarial.json", "traces/c0_i0_s4.csv"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  EXPECT_EQ(lines_of(slurp(dir / "a" / "traces" / "c0_i0_s4.csv")).size(), 201u);
}

TEST(Cli, QuickAblationProducesEightRows) {
  const fs::path dir = scratch_dir("cli_ablation");
  ASSERT_EQ(run_cli("ablation --config " + std::string(BBA_CONFIG_DIR) + "/quick_ablation.json --out " +
                        (dir / "out").string(),
                    dir / "log"),
            0)
      << slurp(dir / "log");
  const auto rows = lines_of(slurp(dir / "out" / "summary.csv"));
  ASSERT_EQ(rows.size(), 9u);
  EXPECT_EQ(rows[0], "config,perlin,mask,gradient,gradient_weight,success@100,success@200,success@300,median_queries");
}

TEST(Cli, VerifyPasses) {
  const fs::path dir = scratch_dir("cli_verify");
  EXPECT_EQ(run_cli("verify", dir / "log"), 0) << slurp(dir / "log");
  EXPECT_EQ(slurp(dir / "log").find("FAIL"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  const fs::path dir = scratch_dir("cli_usage");
  EXPECT_EQ(run_cli("attack --biases perlin --gradient-weight 0.3 --out " + dir.string(), dir / "log"), 2);
  EXPECT_EQ(run_cli("attack --biases gradient --out " + dir.string(), dir / "log"), 2);
  EXPECT_EQ(run_cli("attack --oracle http://127.0.0.1:9 --out " + dir.string(), dir / "log"), 2);
  EXPECT_NE(run_cli("attack --budget 0", dir / "log"), 0);
  EXPECT_NE(run_cli("attack --no-such-flag", dir / "log"), 0);
  EXPECT_NE(run_cli("", dir / "log"), 0);
  EXPECT_EQ(run_cli("ablation --config /nonexistent.json", dir / "log"), 1);
}
