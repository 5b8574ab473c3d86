#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bba/attack.hpp"
#include "bba/bias.hpp"
#include "bba/criterion.hpp"
#include "bba/errors.hpp"
#include "bba/oracle.hpp"
#include "bba/remote.hpp"
#include "bba/result.hpp"
#include "bba/scenario.hpp"
#include "bba/surrogate.hpp"

namespace bba {

/// l2 threshold equivalent to a worst-case per-element distortion of 0.05:
/// 25.89 for 299x299x3.
inline double default_threshold(const ImageShape& shape) {
  return 0.05 * std::sqrt(static_cast<double>(shape.size()));
}

inline const std::vector<std::size_t>& standard_checkpoints() {
  static const std::vector<std::size_t> cps{500, 1000, 2500, 5000, 10000, 15000};
  return cps;
}

/// The eight on/off combinations in the order
/// none, P, M, PM, G, PG, MG, PMG.
inline std::vector<BiasConfig> full_bias_grid(double gradient_weight = 0.5) {
  std::vector<BiasConfig> grid;
  for (int g = 0; g < 2; ++g)
    for (int m = 0; m < 2; ++m)
      for (int p = 0; p < 2; ++p) {
        BiasConfig c;
        c.use_perlin = p == 1;
        c.use_mask = m == 1;
        c.use_gradient = g == 1;
        c.gradient_weight = gradient_weight;
        grid.push_back(c);
      }
  return grid;
}

/// Uniformly random target label for a targeted attack, never the image's
/// own label.
inline std::string pick_target(const std::vector<std::string>& classes, const std::string& true_label, Rng& rng) {
  std::vector<std::string> candidates;
  for (const auto& c : classes)
    if (c != true_label) candidates.push_back(c);
  if (candidates.empty()) throw ConfigError("no target label other than '" + true_label + "'");
  return candidates[uniform_index(rng, candidates.size())];
}

// ---------------------------------------------------------------------------
// Number formatting shared by every emitted file.

inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Round-trip precision, for traces that may be re-aggregated.
inline std::string format_exact(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Tensor files: the same JSON object as a /classify request body.

inline nlohmann::json tensor_to_json(const ImageTensor& x) {
  const ImageShape& s = x.shape();
  return {{"shape", {s.height, s.width, s.channels}}, {"pixels", x.values()}};
}

inline ImageTensor tensor_from_json(const nlohmann::json& j) {
  try {
    return decode_classify_request(j.dump());
  } catch (const ProtocolError& e) {
    throw ConfigError(std::string("malformed tensor: ") + e.what());
  }
}

inline ImageTensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return decode_classify_request(ss.str());
  } catch (const ProtocolError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline void save_tensor(const ImageTensor& x, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << tensor_to_json(x).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Configuration

struct OracleSpec {
  bool remote = false;
  ToyProblemSpec toy{};
  std::string endpoint;
  ImageShape shape{};  // remote only; toy shapes live in `toy`
  RemoteOptions remote_options{};
};

struct ImageSource {
  bool synthetic = true;
  std::size_t count = 1;        // synthetic images
  std::uint64_t seed = 0;       // first synthetic image seed; image i uses seed + i
  std::string directory;        // tensor files; every other file serves as a starting point
};

struct ExperimentConfig {
  OracleSpec oracle{};
  std::string criterion;  // empty: "exact:pos" for toy oracles
  std::vector<BiasConfig> grid{BiasConfig{}};
  std::size_t budget = 1000;
  std::optional<double> threshold;  // default 0.05 sqrt(k)
  std::vector<std::size_t> checkpoints;  // default: the standard list, truncated to the budget
  std::vector<std::uint64_t> seeds{0};
  ImageSource images{};
  std::string output_dir = "out";
  std::string surrogate_path;  // parameter file; overrides a toy surrogate
  std::size_t surrogate_target = 1;
  StepMode step_mode = StepMode::kCombined;
  std::string format = "csv";
};

inline ImageShape config_shape(const ExperimentConfig& c) { return c.oracle.remote ? c.oracle.shape : c.oracle.toy.shape; }

inline double effective_threshold(const ExperimentConfig& c) {
  return c.threshold ? *c.threshold : default_threshold(config_shape(c));
}

inline std::vector<std::size_t> effective_checkpoints(const ExperimentConfig& c) {
  if (!c.checkpoints.empty()) return c.checkpoints;
  std::vector<std::size_t> out;
  for (std::size_t cp : standard_checkpoints())
    if (cp <= c.budget) out.push_back(cp);
  if (out.empty()) out.push_back(c.budget);
  return out;
}

inline void validate(const ExperimentConfig& c) {
  if (c.budget < 1) throw ConfigError("budget must be a positive integer");
  if (c.threshold && !(*c.threshold > 0.0)) throw ConfigError("threshold must be positive");
  std::size_t previous = 0;
  for (std::size_t cp : c.checkpoints) {
    if (cp <= previous) throw ConfigError("checkpoints must be strictly increasing positive counts");
    if (cp > c.budget) throw ConfigError("checkpoint " + std::to_string(cp) + " exceeds the budget");
    previous = cp;
  }
  if (c.grid.empty()) throw ConfigError("bias grid is empty");
  for (const auto& b : c.grid)
    if (!b.valid()) throw ConfigError("invalid bias configuration " + b.label());
  if (c.seeds.empty()) throw ConfigError("seed list is empty");
  if (c.images.synthetic && c.images.count < 1) throw ConfigError("image count must be positive");
  if (c.images.synthetic && c.oracle.remote) throw ConfigError("synthetic images need a toy oracle");
  if (!c.images.synthetic && c.images.directory.empty()) throw ConfigError("image directory is empty");
  if (c.oracle.remote && !c.oracle.shape.valid()) throw ConfigError("remote oracle needs a shape");
  if (c.format != "csv" && c.format != "json") throw ConfigError("format must be csv or json");
}

namespace detail {

inline void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : j.items())
    if (!ok.count(item.key())) throw ConfigError("unknown key '" + item.key() + "' in " + where);
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline ImageShape read_shape(const nlohmann::json& j, const char* key) {
  std::vector<std::size_t> dims;
  read(j, key, dims);
  if (dims.size() != 3) throw ConfigError(std::string("'") + key + "' must be [height, width, channels]");
  return {dims[0], dims[1], dims[2]};
}

inline BiasConfig parse_bias(const nlohmann::json& j) {
  require_keys(j, {"perlin", "mask", "gradient", "gradient_weight", "perlin_frequency", "perlin_channels", "mask_floor"},
               "grid entry");
  BiasConfig b;
  read(j, "perlin", b.use_perlin);
  read(j, "mask", b.use_mask);
  read(j, "gradient", b.use_gradient);
  read(j, "gradient_weight", b.gradient_weight);
  read(j, "perlin_frequency", b.perlin_frequency);
  read(j, "mask_floor", b.mask_floor);
  std::string channels = "per_channel";
  read(j, "perlin_channels", channels);
  if (channels == "per_channel") b.perlin_channels = PerlinChannelMode::kPerChannel;
  else if (channels == "replicated") b.perlin_channels = PerlinChannelMode::kReplicated;
  else throw ConfigError("perlin_channels must be per_channel or replicated");
  return b;
}

inline nlohmann::json bias_to_json(const BiasConfig& b) {
  return {{"perlin", b.use_perlin},
          {"mask", b.use_mask},
          {"gradient", b.use_gradient},
          {"gradient_weight", b.gradient_weight},
          {"perlin_frequency", b.perlin_frequency},
          {"perlin_channels", b.perlin_channels == PerlinChannelMode::kPerChannel ? "per_channel" : "replicated"},
          {"mask_floor", b.mask_floor}};
}

inline OracleSpec parse_oracle(const nlohmann::json& j) {
  OracleSpec o;
  std::string kind = "toy";
  read(j, "kind", kind);
  if (kind == "remote") {
    require_keys(j, {"kind", "endpoint", "shape", "timeout_ms", "max_retries", "backoff_ms"}, "oracle");
    o.remote = true;
    read(j, "endpoint", o.endpoint);
    if (o.endpoint.empty()) throw ConfigError("remote oracle needs an endpoint");
    o.shape = read_shape(j, "shape");
    long long timeout = o.remote_options.timeout.count();
    long long backoff = o.remote_options.initial_backoff.count();
    read(j, "timeout_ms", timeout);
    read(j, "backoff_ms", backoff);
    read(j, "max_retries", o.remote_options.max_retries);
    if (timeout <= 0 || backoff < 0 || o.remote_options.max_retries < 0)
      throw ConfigError("remote timeout must be positive and retries nonnegative");
    o.remote_options.timeout = std::chrono::milliseconds(timeout);
    o.remote_options.initial_backoff = std::chrono::milliseconds(backoff);
    return o;
  }
  if (kind != "toy") throw ConfigError("oracle kind must be toy or remote");
  require_keys(j,
               {"kind", "toy", "shape", "oracle_seed", "blur_radius", "region", "margin", "spread", "pool_size",
                "pool_margin", "background_noise", "surrogate", "surrogate_fidelity"},
               "oracle");
  ToyProblemSpec& t = o.toy;
  std::string toy = to_string(t.oracle);
  read(j, "toy", toy);
  t.oracle = parse_toy_oracle_kind(toy);
  if (j.contains("shape")) t.shape = read_shape(j, "shape");
  read(j, "oracle_seed", t.oracle_seed);
  read(j, "blur_radius", t.blur_radius);
  if (j.contains("region")) {
    std::vector<std::size_t> r;
    read(j, "region", r);
    if (r.size() != 4) throw ConfigError("region must be [row, col, rows, cols]");
    t.region = {r[0], r[1], r[2], r[3]};
  }
  read(j, "margin", t.margin);
  read(j, "spread", t.spread);
  read(j, "pool_size", t.pool_size);
  read(j, "pool_margin", t.pool_margin);
  read(j, "background_noise", t.background_noise);
  std::string surrogate = to_string(t.surrogate);
  read(j, "surrogate", surrogate);
  t.surrogate = parse_surrogate_kind(surrogate);
  read(j, "surrogate_fidelity", t.surrogate_fidelity);
  return o;
}

inline nlohmann::json oracle_to_json(const OracleSpec& o) {
  if (o.remote)
    return {{"kind", "remote"},
            {"endpoint", o.endpoint},
            {"shape", {o.shape.height, o.shape.width, o.shape.channels}},
            {"timeout_ms", o.remote_options.timeout.count()},
            {"max_retries", o.remote_options.max_retries},
            {"backoff_ms", o.remote_options.initial_backoff.count()}};
  const ToyProblemSpec& t = o.toy;
  nlohmann::json j{{"kind", "toy"},
                   {"toy", to_string(t.oracle)},
                   {"shape", {t.shape.height, t.shape.width, t.shape.channels}},
                   {"oracle_seed", t.oracle_seed},
                   {"blur_radius", t.blur_radius},
                   {"margin", t.margin},
                   {"spread", t.spread},
                   {"pool_size", t.pool_size},
                   {"pool_margin", t.pool_margin},
                   {"background_noise", t.background_noise},
                   {"surrogate", to_string(t.surrogate)},
                   {"surrogate_fidelity", t.surrogate_fidelity}};
  if (t.region.rows > 0 && t.region.cols > 0) j["region"] = {t.region.row, t.region.col, t.region.rows, t.region.cols};
  return j;
}

}  // namespace detail

/// Strict: unknown keys anywhere are an error.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  detail::require_keys(j,
                       {"oracle", "criterion", "grid", "budget", "threshold", "checkpoints", "seeds", "images",
                        "output_dir", "surrogate", "surrogate_target", "step_mode", "format"},
                       "config");
  ExperimentConfig c;
  if (j.contains("oracle")) c.oracle = detail::parse_oracle(j["oracle"]);
  detail::read(j, "criterion", c.criterion);
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    c.grid.clear();
    if (g.is_object()) {
      detail::require_keys(g, {"full", "gradient_weight"}, "grid");
      bool full = false;
      double w = 0.5;
      detail::read(g, "full", full);
      detail::read(g, "gradient_weight", w);
      if (!full) throw ConfigError("grid object must set \"full\": true");
      c.grid = full_bias_grid(w);
    } else if (g.is_array()) {
      for (const auto& e : g) c.grid.push_back(detail::parse_bias(e));
    } else {
      throw ConfigError("grid must be a list of bias entries or {\"full\": true}");
    }
  }
  long long budget = static_cast<long long>(c.budget);
  detail::read(j, "budget", budget);
  if (budget < 1) throw ConfigError("budget must be a positive integer");
  c.budget = static_cast<std::size_t>(budget);
  if (j.contains("threshold")) {
    double t = 0.0;
    detail::read(j, "threshold", t);
    c.threshold = t;
  }
  detail::read(j, "checkpoints", c.checkpoints);
  detail::read(j, "seeds", c.seeds);
  if (j.contains("images")) {
    const auto& im = j["images"];
    detail::require_keys(im, {"synthetic", "count", "seed", "directory"}, "images");
    detail::read(im, "directory", c.images.directory);
    c.images.synthetic = c.images.directory.empty();
    detail::read(im, "synthetic", c.images.synthetic);
    detail::read(im, "count", c.images.count);
    detail::read(im, "seed", c.images.seed);
  }
  detail::read(j, "output_dir", c.output_dir);
  detail::read(j, "surrogate", c.surrogate_path);
  detail::read(j, "surrogate_target", c.surrogate_target);
  std::string mode = "combined";
  detail::read(j, "step_mode", mode);
  if (mode == "combined") c.step_mode = StepMode::kCombined;
  else if (mode == "two_query") c.step_mode = StepMode::kTwoQuery;
  else throw ConfigError("step_mode must be combined or two_query");
  detail::read(j, "format", c.format);
  validate(c);
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + " is not valid JSON: " + e.what());
  }
  return parse_experiment_config(j);
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& b : c.grid) grid.push_back(detail::bias_to_json(b));
  nlohmann::json j{{"oracle", detail::oracle_to_json(c.oracle)},
                   {"criterion", c.criterion},
                   {"grid", grid},
                   {"budget", c.budget},
                   {"checkpoints", c.checkpoints},
                   {"seeds", c.seeds},
                   {"output_dir", c.output_dir},
                   {"surrogate", c.surrogate_path},
                   {"surrogate_target", c.surrogate_target},
                   {"step_mode", c.step_mode == StepMode::kCombined ? "combined" : "two_query"},
                   {"format", c.format}};
  if (c.threshold) j["threshold"] = *c.threshold;
  if (c.images.synthetic)
    j["images"] = {{"synthetic", true}, {"count", c.images.count}, {"seed", c.images.seed}};
  else
    j["images"] = {{"synthetic", false}, {"directory", c.images.directory}};
  return j;
}

// ---------------------------------------------------------------------------
// Evaluation set

struct EvaluationItem {
  std::string name;
  ImageTensor original;
  std::vector<ImageTensor> pool;
};

struct ExperimentSetup {
  OraclePtr oracle;
  AdversarialCriterion criterion = AdversarialCriterion::exact_target("pos");
  SurrogatePtr surrogate;
  std::size_t surrogate_target = 1;
  std::vector<EvaluationItem> images;
  std::optional<ToyProblem> toy;
};

/// Tensor files in a directory, sorted by name. Each file is attacked in
/// turn with every other file as a candidate starting point.
inline std::vector<EvaluationItem> load_image_directory(const std::string& directory) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(directory)) throw IoError("image directory " + directory + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(directory))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.size() < 2) throw ConfigError("image directory needs at least two tensors");
  std::vector<ImageTensor> tensors;
  for (const auto& f : files) tensors.push_back(load_tensor(f));
  std::vector<EvaluationItem> items;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    EvaluationItem item{files[i].stem().string(), tensors[i], {}};
    for (std::size_t k = 0; k < tensors.size(); ++k)
      if (k != i) item.pool.push_back(tensors[k]);
    items.push_back(std::move(item));
  }
  return items;
}

inline ExperimentSetup prepare_experiment(const ExperimentConfig& config) {
  validate(config);
  ExperimentSetup setup;
  if (config.oracle.remote) {
    setup.oracle = remote_oracle(config.oracle.endpoint, config.oracle.shape, config.oracle.remote_options);
  } else {
    setup.toy = make_toy_problem(config.oracle.toy);
    setup.oracle = setup.toy->oracle;
    setup.criterion = setup.toy->criterion;
    setup.surrogate = setup.toy->surrogate;
    setup.surrogate_target = setup.toy->surrogate_target;
  }
  if (!config.criterion.empty()) setup.criterion = parse_criterion(config.criterion);
  if (!config.surrogate_path.empty()) {
    setup.surrogate = load_surrogate(config.surrogate_path);
    setup.surrogate_target = config.surrogate_target;
    require_same_shape(setup.surrogate->shape(), config_shape(config));
  }
  const bool needs_surrogate =
      std::any_of(config.grid.begin(), config.grid.end(), [](const BiasConfig& b) { return b.use_gradient; });
  if (needs_surrogate && !setup.surrogate) throw ConfigError("gradient bias in the grid but no surrogate configured");

  if (config.images.synthetic) {
    for (std::size_t i = 0; i < config.images.count; ++i) {
      ToyImage img = make_toy_image(*setup.toy, config.images.seed + i);
      setup.images.push_back({"image" + std::to_string(i), std::move(img.original), std::move(img.pool)});
    }
  } else {
    setup.images = load_image_directory(config.images.directory);
  }
  for (const auto& item : setup.images) require_same_shape(item.original.shape(), config_shape(config));
  return setup;
}

// ---------------------------------------------------------------------------
// Runs and aggregation

struct RunRecord {
  std::size_t config_index = 0;
  std::size_t image_index = 0;
  std::uint64_t seed = 0;
  bool initialized = false;
  std::string error;  // initialization failure or aborted remote run
  AttackResult result;
  std::optional<std::size_t> queries_to_success;
};

struct ConfigSummary {
  BiasConfig bias;
  std::vector<double> success_rates;  // one per checkpoint
  double final_success_rate = 0.0;    // within the full budget
  double median_queries = kInfinity;  // over all runs, failures counting as infinite
  std::size_t runs = 0;

  /// Reported only when more than half of the runs succeed.
  bool median_reported() const { return final_success_rate > 0.5; }
};

struct ExperimentReport {
  ExperimentConfig config;
  double threshold = 0.0;
  std::vector<std::size_t> checkpoints;
  std::vector<RunRecord> runs;
  std::vector<ConfigSummary> summaries;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return kInfinity;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<ConfigSummary> aggregate(const std::vector<BiasConfig>& grid, const std::vector<RunRecord>& runs,
                                            const std::vector<std::size_t>& checkpoints) {
  std::vector<ConfigSummary> out;
  for (std::size_t ci = 0; ci < grid.size(); ++ci) {
    ConfigSummary s;
    s.bias = grid[ci];
    s.success_rates.assign(checkpoints.size(), 0.0);
    std::vector<double> queries;
    std::size_t successes = 0;
    for (const auto& r : runs) {
      if (r.config_index != ci) continue;
      ++s.runs;
      queries.push_back(r.queries_to_success ? static_cast<double>(*r.queries_to_success) : kInfinity);
      if (r.queries_to_success) ++successes;
      for (std::size_t k = 0; k < checkpoints.size(); ++k)
        if (r.queries_to_success && *r.queries_to_success <= checkpoints[k]) s.success_rates[k] += 1.0;
    }
    if (s.runs > 0) {
      for (auto& rate : s.success_rates) rate /= static_cast<double>(s.runs);
      s.final_success_rate = static_cast<double>(successes) / static_cast<double>(s.runs);
    }
    s.median_queries = median_of(std::move(queries));
    out.push_back(std::move(s));
  }
  return out;
}

inline BbaConfig make_bba_config(const ExperimentConfig& config, const ExperimentSetup& setup, const BiasConfig& bias) {
  BbaConfig c;
  c.bias = bias;
  c.mode = config.step_mode;
  c.surrogate = setup.surrogate;
  c.surrogate_target = setup.surrogate_target;
  return c;
}

/// One attack run whose ledger survives errors.
inline RunRecord execute_run(const Oracle& oracle, const AdversarialCriterion& criterion, const EvaluationItem& item,
                             const BbaConfig& cfg, std::size_t budget, double threshold, std::uint64_t rng_seed) {
  RunRecord rec;
  check_run_arguments(cfg, budget);
  AttackState state = make_attack_state(item.original, make_rng(rng_seed));
  try {
    initialize(state, oracle, criterion, item.pool, budget, cfg.init);
    rec.initialized = true;
    iterate(state, oracle, criterion, cfg, budget);
  } catch (const InitializationFailed& e) {
    rec.error = e.what();
  } catch (const RemoteUnavailable& e) {
    rec.error = e.what();
  }
  if (rec.initialized) {
    rec.result = finish(state, threshold);
  } else {
    rec.result.threshold = threshold;
    rec.result.queries = state.ledger.total_queries();
    rec.result.initialization_queries = state.ledger.count(QueryPhase::kInitialization);
    rec.result.trace = best_distance_trace(state.ledger);
  }
  rec.queries_to_success = queries_to_threshold(rec.result.trace, threshold);
  return rec;
}

/// Every (config, image, seed) combination. A run's random stream depends on
/// its image and seed only, so identical configs give identical rows.
inline ExperimentReport run_ablation(const ExperimentConfig& config, const ExperimentSetup& setup) {
  validate(config);
  if (setup.images.empty()) throw ConfigError("image source yields no images");
  ExperimentReport report;
  report.config = config;
  report.threshold = effective_threshold(config);
  report.checkpoints = effective_checkpoints(config);
  for (std::size_t ci = 0; ci < config.grid.size(); ++ci) {
    const BbaConfig cfg = make_bba_config(config, setup, config.grid[ci]);
    for (std::size_t ii = 0; ii < setup.images.size(); ++ii)
      for (std::uint64_t seed : config.seeds) {
        RunRecord rec = execute_run(*setup.oracle, setup.criterion, setup.images[ii], cfg, config.budget,
                                    report.threshold, derive_seed(seed, ii));
        rec.config_index = ci;
        rec.image_index = ii;
        rec.seed = seed;
        report.runs.push_back(std::move(rec));
      }
  }
  report.summaries = aggregate(config.grid, report.runs, report.checkpoints);
  return report;
}

inline ExperimentReport run_ablation(const ExperimentConfig& config) {
  return run_ablation(config, prepare_experiment(config));
}

// ---------------------------------------------------------------------------
// Output files
//
//   summary.csv / summary.json   one row per bias configuration
//   traces/c<config>_i<image>_s<seed>.csv
//   plot_data.csv / plot_data.json   median best distance vs query count
//   metadata.json

inline std::string trace_file_name(const RunRecord& r) {
  return "c" + std::to_string(r.config_index) + "_i" + std::to_string(r.image_index) + "_s" + std::to_string(r.seed) +
         ".csv";
}

inline std::string summary_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << "config,perlin,mask,gradient,gradient_weight";
  for (std::size_t cp : report.checkpoints) out << ",success@" << cp;
  out << ",median_queries\n";
  for (std::size_t ci = 0; ci < report.summaries.size(); ++ci) {
    const ConfigSummary& s = report.summaries[ci];
    out << s.bias.label() << ',' << (s.bias.use_perlin ? "yes" : "no") << ',' << (s.bias.use_mask ? "yes" : "no") << ','
        << (s.bias.use_gradient ? "yes" : "no") << ',' << format_number(s.bias.gradient_weight);
    for (double rate : s.success_rates) out << ',' << format_number(rate);
    out << ',' << (s.median_reported() ? format_number(s.median_queries) : "-") << '\n';
  }
  return out.str();
}

inline nlohmann::json summary_json(const ExperimentReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : report.summaries) {
    nlohmann::json rates = nlohmann::json::array();
    for (double r : s.success_rates) rates.push_back(std::stod(format_number(r)));
    rows.push_back({{"config", s.bias.label()},
                    {"bias", detail::bias_to_json(s.bias)},
                    {"success_rates", rates},
                    {"runs", s.runs},
                    {"median_queries", s.median_reported() ? nlohmann::json(std::stod(format_number(s.median_queries)))
                                                           : nlohmann::json("-")}});
  }
  return {{"checkpoints", report.checkpoints}, {"rows", rows}};
}

inline std::string trace_csv(const RunRecord& r) {
  std::ostringstream out;
  out << "query_index,best_distance,adversarial\n";
  for (const auto& p : r.result.trace)
    out << p.query << ',' << format_exact(p.best_distance) << ',' << (p.adversarial ? 1 : 0) << '\n';
  return out.str();
}

/// Sample points for distance curves: about 200 per run plus the budget itself.
inline std::vector<std::size_t> plot_points(std::size_t budget) {
  const std::size_t step = std::max<std::size_t>(1, budget / 200);
  std::vector<std::size_t> pts;
  for (std::size_t q = step; q < budget; q += step) pts.push_back(q);
  pts.push_back(budget);
  return pts;
}

/// Median best distance over a configuration's runs after q queries. Runs that
/// stopped early keep their last value.
inline std::vector<std::pair<std::size_t, double>> distance_curve(const ExperimentReport& report, std::size_t ci) {
  std::vector<std::pair<std::size_t, double>> curve;
  for (std::size_t q : plot_points(report.config.budget)) {
    std::vector<double> values;
    for (const auto& r : report.runs) {
      if (r.config_index != ci) continue;
      double best = kInfinity;
      for (const auto& p : r.result.trace) {
        if (p.query > q) break;
        best = p.best_distance;
      }
      values.push_back(best);
    }
    curve.emplace_back(q, median_of(std::move(values)));
  }
  return curve;
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

inline void emit_report(const ExperimentReport& report, const std::string& output_dir, const std::string& format = "csv") {
  namespace fs = std::filesystem;
  if (format != "csv" && format != "json") throw ConfigError("format must be csv or json");
  std::error_code ec;
  fs::create_directories(fs::path(output_dir) / "traces", ec);
  if (ec) throw IoError("cannot create " + output_dir + ": " + ec.message());
  const fs::path root(output_dir);

  if (format == "csv") {
    detail::write_file(root / "summary.csv", summary_csv(report));
    std::ostringstream plot;
    plot << "config,query,median_best_distance\n";
    for (std::size_t ci = 0; ci < report.summaries.size(); ++ci)
      for (const auto& [q, d] : distance_curve(report, ci))
        plot << report.summaries[ci].bias.label() << ',' << q << ',' << format_number(d) << '\n';
    detail::write_file(root / "plot_data.csv", plot.str());
  } else {
    detail::write_file(root / "summary.json", summary_json(report).dump(2) + "\n");
    nlohmann::json curves = nlohmann::json::array();
    for (std::size_t ci = 0; ci < report.summaries.size(); ++ci) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& [q, d] : distance_curve(report, ci))
        pts.push_back({q, std::isinf(d) ? nlohmann::json(nullptr) : nlohmann::json(std::stod(format_number(d)))});
      curves.push_back({{"config", report.summaries[ci].bias.label()}, {"points", pts}});
    }
    detail::write_file(root / "plot_data.json", curves.dump(2) + "\n");
  }
  for (const auto& r : report.runs) detail::write_file(root / "traces" / trace_file_name(r), trace_csv(r));

  nlohmann::json failures = nlohmann::json::array();
  for (const auto& r : report.runs)
    if (!r.error.empty())
      failures.push_back({{"config", r.config_index}, {"image", r.image_index}, {"seed", r.seed}, {"error", r.error}});
  nlohmann::json config = config_to_json(report.config);
  config.erase("output_dir");  // keeps the files identical wherever they are written
  const nlohmann::json meta{{"config", config},
                            {"threshold", report.threshold},
                            {"threshold_rule", report.config.threshold ? "configured" : "0.05*sqrt(k)"},
                            {"checkpoints", report.checkpoints},
                            {"bias_pipeline", kBiasPipelineOrder},
                            {"runs", report.runs.size()},
                            {"failed_runs", failures}};
  detail::write_file(root / "metadata.json", meta.dump(2) + "\n");
}

}  // namespace bba
