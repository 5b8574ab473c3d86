#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "bba/bias.hpp"
#include "bba/oracle.hpp"
#include "bba/result.hpp"
#include "bba/rng.hpp"
#include "bba/surrogate.hpp"
#include "bba/tensor.hpp"

namespace bba {

/// Step lengths as fractions of the current distance to the original.
struct StepSizes {
  double orthogonal = 0.05;
  double source = 0.002;

  bool valid() const { return orthogonal > 0.0 && orthogonal <= 1.0 && source > 0.0 && source <= 1.0; }
  friend bool operator==(const StepSizes&, const StepSizes&) = default;
};

/// The original Boundary Attack's suggestion, kept for comparison runs.
inline constexpr StepSizes kClassicStepSizes{0.01, 0.01};

/// Failure-driven decay: both sizes shrink by `decay` every `decay_every`
/// consecutive failures and snap back to base after `reset_after`.
struct StepSchedule {
  StepSizes base{};
  double decay = 0.5;
  int decay_every = 3;
  int reset_after = 50;
};

struct StepAdaptation {
  StepSizes sizes;
  int consecutive_failures = 0;
};

inline StepAdaptation adapt_step_sizes(const StepSchedule& schedule, int consecutive_failures) {
  if (consecutive_failures < 0) throw ContractViolation("failure count must be nonnegative");
  if (consecutive_failures >= schedule.reset_after) return {schedule.base, 0};
  const double factor = std::pow(schedule.decay, consecutive_failures / std::max(1, schedule.decay_every));
  return {{schedule.base.orthogonal * factor, schedule.base.source * factor}, consecutive_failures};
}

enum class StepMode {
  kCombined,  // orthogonal and source step in one proposal, one query
  kTwoQuery,  // spherical candidate first, then the source step
};

struct InitOptions {
  double tolerance = 1e-2;  // stop bisecting once the bracket is this fraction of the starting distance
  int max_bisections = 10;
};

struct BbaConfig {
  BiasConfig bias{};
  StepSchedule schedule{};
  StepMode mode = StepMode::kCombined;
  InitOptions init{};
  SurrogatePtr surrogate;  // required when bias.use_gradient
  std::size_t surrogate_target = 1;
  double retreat_fraction = kDefaultRetreatFraction;
};

struct AttackState {
  ImageTensor x_orig;
  ImageTensor x_adv;
  double best_distance = 0.0;
  StepSizes step_sizes{};
  int consecutive_failures = 0;
  QueryLedger ledger;
  Rng rng;
};

inline AttackState make_attack_state(const ImageTensor& x_orig, Rng rng) {
  return AttackState{x_orig, x_orig, 0.0, {}, 0, QueryLedger{}, std::move(rng)};
}

/// Picks the closest criterion-satisfying pool member (screening in order of
/// distance) and bisects the segment towards x_orig. Queries land in
/// state.ledger, which survives a thrown error.
inline void initialize(AttackState& state, const Oracle& oracle, const AdversarialCriterion& criterion,
                       std::span<const ImageTensor> pool, std::size_t budget, const InitOptions& options = {}) {
  if (pool.empty()) throw ContractViolation("initialization pool is empty");
  const ImageTensor& x_orig = state.x_orig;
  QuerySession session(oracle, criterion, x_orig, state.ledger, budget);

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> distances(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) distances[i] = l2_distance(pool[i], x_orig);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });

  std::optional<std::size_t> chosen;
  for (std::size_t idx : order) {
    if (session.exhausted()) break;
    if (session.probe(pool[idx], QueryPhase::kInitialization)) {
      chosen = idx;
      break;
    }
  }
  if (!chosen) throw InitializationFailed("no pool member satisfies the criterion within the budget");

  const ImageTensor& start = pool[*chosen];
  state.x_adv = start;
  state.best_distance = distances[*chosen];
  if (state.best_distance == 0.0) return;

  // x(t) = x_orig + t (start - x_orig); t = 1 is adversarial.
  double lo = 0.0;
  double hi = 1.0;
  const PerturbationVector segment = difference(start, x_orig);
  for (int i = 0; i < options.max_bisections && (hi - lo) > options.tolerance && !session.exhausted(); ++i) {
    const double mid = 0.5 * (lo + hi);
    const ImageTensor probe = displaced(x_orig, segment, mid);
    if (session.probe(probe, QueryPhase::kInitialization)) {
      hi = mid;
      state.x_adv = probe;
      state.best_distance = l2_distance(probe, x_orig);
    } else {
      lo = mid;
    }
  }
}

inline AttackState initialize(const Oracle& oracle, const AdversarialCriterion& criterion, const ImageTensor& x_orig,
                              std::span<const ImageTensor> pool, std::size_t budget, Rng rng,
                              const InitOptions& options = {}) {
  AttackState state = make_attack_state(x_orig, std::move(rng));
  initialize(state, oracle, criterion, pool, budget, options);
  return state;
}

namespace detail {

inline std::optional<PerturbationVector> gradient_bias(const AttackState& state, const BbaConfig& config) {
  if (!config.bias.use_gradient) return std::nullopt;
  if (!config.surrogate) throw ContractViolation("gradient bias enabled without a surrogate model");
  try {
    return projected_surrogate_direction(*config.surrogate, state.x_adv, state.x_orig, config.surrogate_target,
                                         config.retreat_fraction);
  } catch (const DegenerateGradient&) {
    return std::nullopt;  // unbiased step this time
  }
}

inline void record_outcome(AttackState& state, const BbaConfig& config, const ImageTensor* accepted) {
  if (accepted != nullptr) {
    state.best_distance = l2_distance(*accepted, state.x_orig);
    state.x_adv = *accepted;
    state.consecutive_failures = 0;
    state.step_sizes = config.schedule.base;
    return;
  }
  const StepAdaptation next = adapt_step_sizes(config.schedule, state.consecutive_failures + 1);
  state.step_sizes = next.sizes;
  state.consecutive_failures = next.consecutive_failures;
}

}  // namespace detail

/// One iteration: sample a biased orthogonal step, add the source step,
/// query, and keep the proposal only if it is adversarial and strictly closer.
inline void bba_step(AttackState& state, const Oracle& oracle, const AdversarialCriterion& criterion,
                     const BbaConfig& config, std::size_t budget) {
  QuerySession session(oracle, criterion, state.x_orig, state.ledger, budget);
  if (session.exhausted() || !(state.best_distance > 0.0)) return;
  const double d = state.best_distance;
  const auto pg = detail::gradient_bias(state, config);
  const PerturbationVector candidate = generate_candidate(
      {state.x_adv, state.x_orig, state.step_sizes.orthogonal * d, pg ? &*pg : nullptr}, config.bias, state.rng);
  const PerturbationVector source = difference(state.x_orig, state.x_adv);

  if (config.mode == StepMode::kCombined) {
    ImageTensor proposal = displaced(state.x_adv, candidate);
    proposal = clip_to_valid(displaced(proposal, source, state.step_sizes.source));
    const bool adversarial = session.probe(proposal, QueryPhase::kAttack);
    const bool closer = l2_distance(proposal, state.x_orig) < d;
    detail::record_outcome(state, config, adversarial && closer ? &proposal : nullptr);
    return;
  }

  // Two-query mode: project the orthogonal step back onto the sphere of radius d first.
  PerturbationVector radial = difference(displaced(state.x_adv, candidate), state.x_orig);
  radial = renormalize(std::move(radial), d);
  const ImageTensor spherical = clip_to_valid(displaced(state.x_orig, radial));
  if (!session.probe(spherical, QueryPhase::kAttack)) {
    detail::record_outcome(state, config, nullptr);
    return;
  }
  // Clipping can pull the spherical point inside the sphere; keep it then.
  const bool inside = l2_distance(spherical, state.x_orig) < d;
  if (inside) detail::record_outcome(state, config, &spherical);
  if (session.exhausted()) {
    if (!inside) detail::record_outcome(state, config, nullptr);
    return;
  }
  const ImageTensor proposal =
      clip_to_valid(displaced(spherical, difference(state.x_orig, spherical), state.step_sizes.source));
  const bool adversarial = session.probe(proposal, QueryPhase::kAttack);
  const bool closer = l2_distance(proposal, state.x_orig) < state.best_distance;
  if (adversarial && closer) detail::record_outcome(state, config, &proposal);
  else if (!inside) detail::record_outcome(state, config, nullptr);
}

inline AttackResult finish(const AttackState& state, double threshold) {
  AttackResult result;
  result.adversarial = state.x_adv;
  result.distance = state.best_distance;
  result.queries = state.ledger.total_queries();
  result.initialization_queries = state.ledger.count(QueryPhase::kInitialization);
  result.threshold = threshold;
  result.success = result.distance <= threshold;
  result.trace = best_distance_trace(state.ledger);
  return result;
}

/// Spends the remaining budget on Boundary Attack iterations.
inline void iterate(AttackState& state, const Oracle& oracle, const AdversarialCriterion& criterion,
                    const BbaConfig& config, std::size_t budget) {
  state.step_sizes = config.schedule.base;
  state.consecutive_failures = 0;
  while (state.ledger.total_queries() < budget && state.best_distance > 0.0)
    bba_step(state, oracle, criterion, config, budget);
}

inline void check_run_arguments(const BbaConfig& config, std::size_t budget) {
  if (budget < 1) throw ContractViolation("budget must be at least 1");
  if (!config.schedule.base.valid()) throw ContractViolation("invalid step sizes");
  if (!config.bias.valid()) throw ContractViolation("invalid bias configuration");
  if (config.bias.use_gradient && !config.surrogate)
    throw ContractViolation("gradient bias enabled without a surrogate model");
}

/// Initialization followed by Boundary Attack iterations until the budget is spent.
inline AttackResult run_bba(const Oracle& oracle, const AdversarialCriterion& criterion, const ImageTensor& x_orig,
                            std::span<const ImageTensor> pool, const BbaConfig& config, std::size_t budget,
                            double threshold, std::uint64_t seed) {
  check_run_arguments(config, budget);
  AttackState state = make_attack_state(x_orig, make_rng(seed));
  initialize(state, oracle, criterion, pool, budget, config.init);
  iterate(state, oracle, criterion, config, budget);
  return finish(state, threshold);
}

// ---------------------------------------------------------------------------
// Random guessing on a shrinking hypersphere around the original.

enum class GuessDistribution { kNormal, kPerlin };

enum class RadiusSearch {
  kFreshDirections,  // every probe draws a new direction
  kFixedDirection,   // after a success, keep bisecting along that direction until it fails
};

struct RandomGuessOptions {
  GuessDistribution distribution = GuessDistribution::kNormal;
  RadiusSearch search = RadiusSearch::kFreshDirections;
  double initial_epsilon = 1.0;
  double tolerance = 1e-3;        // bracket width relative to the best radius at which the search restarts
  double perlin_frequency = 0.0;  // 0 selects the default for the shape
  double threshold = kInfinity;
};

struct RandomGuessResult {
  AttackResult attack;
  double epsilon = 0.0;  // smallest radius that produced an adversarial example
};

inline RandomGuessResult run_random_guessing(const Oracle& oracle, const AdversarialCriterion& criterion,
                                             const ImageTensor& x_orig, std::size_t budget, std::uint64_t seed,
                                             const RandomGuessOptions& options) {
  if (budget < 1) throw ContractViolation("budget must be at least 1");
  if (!(options.initial_epsilon > 0.0)) throw ContractViolation("initial epsilon must be positive");
  QueryLedger ledger;
  QuerySession session(oracle, criterion, x_orig, ledger, budget);
  Rng rng = make_rng(seed);
  BiasConfig sampler;
  sampler.use_perlin = options.distribution == GuessDistribution::kPerlin;
  sampler.perlin_frequency = options.perlin_frequency;

  RandomGuessResult out;
  out.epsilon = options.initial_epsilon;
  AttackResult& result = out.attack;
  result.threshold = options.threshold;

  bool found = false;
  double lo = 0.0;
  double hi = options.initial_epsilon;
  std::optional<PerturbationVector> keep_direction;
  while (!session.exhausted()) {
    const double radius = found ? 0.5 * (lo + hi) : options.initial_epsilon;
    PerturbationVector direction = keep_direction ? *keep_direction : sample_base(x_orig.shape(), sampler, rng);
    const double n = norm(direction);
    if (!(n > kDegenerateNorm)) continue;
    direction = scaled(std::move(direction), 1.0 / n);
    const ImageTensor candidate = clip_to_valid(displaced(x_orig, direction, radius));
    if (session.probe(candidate, QueryPhase::kAttack)) {
      const double dist = l2_distance(candidate, x_orig);
      if (dist < result.distance) {
        result.distance = dist;
        result.adversarial = candidate;
      }
      found = true;
      hi = radius;
      out.epsilon = radius;
      if (options.search == RadiusSearch::kFixedDirection) keep_direction = direction;
    } else {
      if (found) lo = radius;
      keep_direction.reset();
    }
    if (found && hi - lo <= options.tolerance * hi) {
      lo = 0.0;
      keep_direction.reset();
    }
  }
  result.queries = ledger.total_queries();
  result.trace = best_distance_trace(ledger);
  result.success = result.adversarial.has_value() && result.distance <= result.threshold;
  return out;
}

}  // namespace bba
