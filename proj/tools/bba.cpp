// Command-line front end: single attacks, ablation grids, the stub oracle
// server and the invariant suite.

#include <csignal>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <pthread.h>

#include <CLI11.hpp>

#include "bba/harness.hpp"
#include "bba/remote.hpp"
#include "bba/scenario.hpp"
#include "bba/verify.hpp"

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

bool is_url(const std::string& s) { return s.rfind("http://", 0) == 0 || s.rfind("https://", 0) == 0; }

struct AttackArgs {
  std::string oracle = "linear";
  std::string criterion;
  std::size_t budget = 1000;
  double threshold = 0.0;
  std::string biases = "none";
  double gradient_weight = 0.5;
  std::uint64_t seed = 0;
  std::string out = "attack_out";
  std::size_t side = 32;
  std::size_t channels = 1;
  std::string surrogate;
  std::uint64_t image_seed = 0;
  std::string image;
  std::vector<std::string> pool;
  std::string format = "csv";
  std::string step_mode = "combined";
};

bba::BiasConfig parse_biases(const std::string& text, double weight, bool weight_given) {
  bba::BiasConfig b;
  b.gradient_weight = weight;
  for (const auto& name : split_list(text)) {
    if (name == "perlin") b.use_perlin = true;
    else if (name == "mask") b.use_mask = true;
    else if (name == "gradient") b.use_gradient = true;
    else if (name != "none") throw UsageError("unknown bias '" + name + "' (expected perlin, mask, gradient, none)");
  }
  if (weight_given && !b.use_gradient) throw UsageError("--gradient-weight needs the gradient bias");
  if (!b.valid()) throw UsageError("--gradient-weight must lie in [0, 1]");
  return b;
}

int run_attack(const AttackArgs& a, bool weight_given, bool threshold_given) {
  bba::ExperimentConfig config;
  config.grid = {parse_biases(a.biases, a.gradient_weight, weight_given)};
  config.budget = a.budget;
  config.seeds = {a.seed};
  config.output_dir = a.out;
  config.format = a.format;
  config.criterion = a.criterion;
  if (threshold_given) config.threshold = a.threshold;
  if (a.step_mode == "two_query") config.step_mode = bba::StepMode::kTwoQuery;
  else if (a.step_mode != "combined") throw UsageError("--step-mode must be combined or two_query");
  const bool gradient = config.grid.front().use_gradient;

  bba::ExperimentSetup setup;
  if (is_url(a.oracle)) {
    if (a.image.empty() || a.pool.empty()) throw UsageError("a remote oracle needs --image and at least one --pool");
    if (a.criterion.empty()) throw UsageError("a remote oracle needs --criterion");
    if (gradient && a.surrogate.empty()) throw UsageError("the gradient bias needs --surrogate <parameter file>");
    bba::EvaluationItem item{std::filesystem::path(a.image).stem().string(), bba::load_tensor(a.image), {}};
    for (const auto& p : a.pool) item.pool.push_back(bba::load_tensor(p));
    config.oracle.remote = true;
    config.oracle.endpoint = a.oracle;
    config.oracle.shape = item.original.shape();
    config.images.synthetic = false;
    config.images.directory = a.image;
    config.surrogate_path = a.surrogate;
    bba::validate(config);
    setup.oracle = bba::remote_oracle(a.oracle, item.original.shape());
    setup.criterion = bba::parse_criterion(a.criterion);
    if (!a.surrogate.empty()) setup.surrogate = bba::load_surrogate(a.surrogate);
    setup.images.push_back(std::move(item));
  } else {
    if (!a.image.empty() || !a.pool.empty()) throw UsageError("--image and --pool only apply to remote oracles");
    config.oracle.toy.oracle = bba::parse_toy_oracle_kind(a.oracle);
    config.oracle.toy.shape = {a.side, a.side, a.channels};
    if (!a.surrogate.empty()) {
      if (std::filesystem::exists(a.surrogate)) config.surrogate_path = a.surrogate;
      else config.oracle.toy.surrogate = bba::parse_surrogate_kind(a.surrogate);
    }
    if (gradient && a.surrogate.empty())
      throw UsageError("the gradient bias needs --surrogate (exact, partial, unfiltered, orthogonal or a file)");
    config.images.count = 1;
    config.images.seed = a.image_seed;
    setup = bba::prepare_experiment(config);
  }

  const bba::ExperimentReport report = bba::run_ablation(config, setup);
  bba::emit_report(report, config.output_dir, config.format);
  const bba::RunRecord& run = report.runs.front();
  if (run.result.adversarial)
    bba::save_tensor(*run.result.adversarial, std::filesystem::path(config.output_dir) / "adversarial.json");
  std::cout << "queries " << run.result.queries << " distance " << bba::format_number(run.result.distance)
            << " threshold " << bba::format_number(report.threshold) << (run.result.success ? " success" : " failure")
            << '\n';
  if (!run.error.empty()) std::cout << "error: " << run.error << '\n';
  return 0;
}

int run_ablation_command(const std::string& path, const std::string& out_override, const std::string& format) {
  bba::ExperimentConfig config = bba::load_experiment_config(path);
  if (!out_override.empty()) config.output_dir = out_override;
  if (!format.empty()) config.format = format;
  bba::validate(config);
  const bba::ExperimentReport report = bba::run_ablation(config);
  bba::emit_report(report, config.output_dir, config.format);
  std::cout << bba::summary_csv(report);
  return 0;
}

int run_serve_stub(const std::string& host, int port, const std::string& oracle, std::size_t side,
                   std::uint64_t oracle_seed, const bba::StubOptions& options) {
  bba::ToyProblemSpec spec;
  spec.oracle = bba::parse_toy_oracle_kind(oracle);
  spec.shape = {side, side, 1};
  spec.oracle_seed = oracle_seed;
  const bba::ToyProblem problem = bba::make_toy_problem(spec);

  // Block the shutdown signals before the server thread exists so only sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  bba::StubServer server(problem.oracle, options);
  server.start(host, port);
  std::cout << server.endpoint() << std::endl;
  int received = 0;
  sigwait(&signals, &received);
  server.stop();
  return 0;
}

int run_verify(std::uint64_t seed) {
  bool ok = true;
  for (const auto& c : bba::run_invariant_suite(seed)) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    ok = ok && c.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Biased Boundary Attack toolkit"};
  app.require_subcommand(1);

  AttackArgs attack;
  auto* attack_cmd = app.add_subcommand("attack", "attack one image");
  attack_cmd->add_option("--oracle", attack.oracle, "toy oracle (linear, lowpass, region, composite) or http endpoint");
  attack_cmd->add_option("--criterion", attack.criterion, "e.g. exact:pos, in:a,b, substring:cat!dog");
  attack_cmd->add_option("--budget", attack.budget, "query budget")->check(CLI::PositiveNumber);
  auto* threshold_opt =
      attack_cmd->add_option("--threshold", attack.threshold, "success distance (default 0.05*sqrt(k))")->check(
          CLI::PositiveNumber);
  attack_cmd->add_option("--biases", attack.biases, "comma list of perlin, mask, gradient, or none");
  auto* weight_opt = attack_cmd->add_option("--gradient-weight", attack.gradient_weight, "gradient bias weight");
  attack_cmd->add_option("--seed", attack.seed, "random seed");
  attack_cmd->add_option("--out", attack.out, "output directory");
  attack_cmd->add_option("--side", attack.side, "toy image side")->check(CLI::PositiveNumber);
  attack_cmd->add_option("--channels", attack.channels, "toy image channels")->check(CLI::PositiveNumber);
  attack_cmd->add_option("--surrogate", attack.surrogate, "toy surrogate kind or parameter file");
  attack_cmd->add_option("--image-seed", attack.image_seed, "synthetic image seed");
  attack_cmd->add_option("--image", attack.image, "original image tensor (remote oracles)");
  attack_cmd->add_option("--pool", attack.pool, "starting point tensor (remote oracles, repeatable)");
  attack_cmd->add_option("--format", attack.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  attack_cmd->add_option("--step-mode", attack.step_mode, "combined or two_query");

  std::string config_path, ablation_out, ablation_format;
  auto* ablation_cmd = app.add_subcommand("ablation", "run a bias grid from a config file");
  ablation_cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
  ablation_cmd->add_option("--out", ablation_out, "override the output directory");
  ablation_cmd->add_option("--format", ablation_format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  std::string host = "127.0.0.1", stub_oracle = "linear";
  int port = 8080;
  std::size_t stub_side = 32;
  std::uint64_t stub_seed = 1;
  bba::StubOptions stub_options;
  auto* stub_cmd = app.add_subcommand("serve-stub", "serve a toy oracle over the /classify wire format");
  stub_cmd->add_option("--host", host);
  stub_cmd->add_option("--port", port, "0 picks a free port")->check(CLI::Range(0, 65535));
  stub_cmd->add_option("--oracle", stub_oracle, "toy oracle kind");
  stub_cmd->add_option("--side", stub_side)->check(CLI::PositiveNumber);
  stub_cmd->add_option("--oracle-seed", stub_seed);
  stub_cmd->add_option("--fail-first", stub_options.fail_first, "answer the first N requests with 503");
  stub_cmd->add_flag("--malformed", stub_options.malformed, "answer with malformed bodies");
  stub_cmd->add_flag("--scores", stub_options.include_scores, "add score fields to the labels");

  std::uint64_t verify_seed = 2024;
  auto* verify_cmd = app.add_subcommand("verify", "run the invariant suite");
  verify_cmd->add_option("--seed", verify_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*attack_cmd) return run_attack(attack, weight_opt->count() > 0, threshold_opt->count() > 0);
    if (*ablation_cmd) return run_ablation_command(config_path, ablation_out, ablation_format);
    if (*stub_cmd) return run_serve_stub(host, port, stub_oracle, stub_side, stub_seed, stub_options);
    if (*verify_cmd) return run_verify(verify_seed);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const bba::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const bba::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
