#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bba/oracle.hpp"
#include "bba/result.hpp"
#include "bba/tensor.hpp"

namespace bba {

/// Differentiable stand-in for the black box. Used only to bias sampling,
/// never to decide adversariality.
class SurrogateModel {
 public:
  virtual ~SurrogateModel() = default;
  virtual ImageShape shape() const = 0;
  virtual std::size_t class_count() const = 0;
  /// Log-probability of `target`; larger means more target-like.
  virtual double objective(const ImageTensor& x, std::size_t target) const = 0;
  /// d objective / d x.
  virtual PerturbationVector objective_gradient(const ImageTensor& x, std::size_t target) const = 0;
};

using SurrogatePtr = std::shared_ptr<const SurrogateModel>;

namespace detail {

inline double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Objective and d objective / d logits. One logit means a binary model
/// (class 1 <=> positive logit, log-sigmoid margin loss); more logits use
/// softmax cross-entropy.
inline std::pair<double, std::vector<double>> logit_objective(const std::vector<double>& logits,
                                                             std::size_t target) {
  if (logits.size() == 1) {
    const double sign = target == 1 ? 1.0 : -1.0;
    const double z = sign * logits[0];
    return {log_sigmoid(z), {sign * sigmoid(-z)}};
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - top);
  const double log_norm = top + std::log(sum);
  std::vector<double> grad(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) grad[i] = -std::exp(logits[i] - log_norm);
  grad[target] += 1.0;
  return {logits[target] - log_norm, std::move(grad)};
}

inline void require_target(std::size_t target, std::size_t classes) {
  if (target >= classes)
    throw ContractViolation("target class " + std::to_string(target) + " out of range for " +
                            std::to_string(classes) + " classes");
}

}  // namespace detail

/// logits = W x + b, with W stored row-major as outputs x k.
class LinearSurrogate final : public SurrogateModel {
 public:
  LinearSurrogate(ImageShape shape, std::vector<double> weights, std::vector<double> bias)
      : shape_(shape), weights_(std::move(weights)), bias_(std::move(bias)) {
    require_valid(shape_);
    if (bias_.empty() || weights_.size() != bias_.size() * shape_.size())
      throw ContractViolation("linear surrogate weights do not match shape and output count");
  }

  /// Binary model with a single weight vector.
  static LinearSurrogate binary(const PerturbationVector& w, double b) {
    return LinearSurrogate(w.shape(), w.values(), {b});
  }

  ImageShape shape() const override { return shape_; }
  std::size_t class_count() const override { return bias_.size() == 1 ? 2 : bias_.size(); }

  double objective(const ImageTensor& x, std::size_t target) const override {
    detail::require_target(target, class_count());
    return detail::logit_objective(logits(x), target).first;
  }

  PerturbationVector objective_gradient(const ImageTensor& x, std::size_t target) const override {
    detail::require_target(target, class_count());
    const auto [value, dlogits] = detail::logit_objective(logits(x), target);
    (void)value;
    const std::size_t k = shape_.size();
    PerturbationVector g(shape_);
    for (std::size_t o = 0; o < dlogits.size(); ++o)
      for (std::size_t i = 0; i < k; ++i) g[i] += dlogits[o] * weights_[o * k + i];
    return g;
  }

  std::vector<double> logits(const ImageTensor& x) const {
    require_same_shape(shape_, x.shape());
    const std::size_t k = shape_.size();
    std::vector<double> out(bias_);
    for (std::size_t o = 0; o < out.size(); ++o)
      for (std::size_t i = 0; i < k; ++i) out[o] += weights_[o * k + i] * x[i];
    return out;
  }

  const std::vector<double>& weights() const noexcept { return weights_; }
  const std::vector<double>& bias() const noexcept { return bias_; }

 private:
  ImageShape shape_;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

/// One tanh hidden layer: logits = W2 tanh(W1 x + b1) + b2.
class MlpSurrogate final : public SurrogateModel {
 public:
  MlpSurrogate(ImageShape shape, std::size_t hidden, std::vector<double> w1, std::vector<double> b1,
               std::vector<double> w2, std::vector<double> b2)
      : shape_(shape), hidden_(hidden), w1_(std::move(w1)), b1_(std::move(b1)), w2_(std::move(w2)),
        b2_(std::move(b2)) {
    require_valid(shape_);
    if (hidden_ == 0 || b1_.size() != hidden_ || w1_.size() != hidden_ * shape_.size() || b2_.empty() ||
        w2_.size() != b2_.size() * hidden_)
      throw ContractViolation("MLP surrogate parameters do not match shape and layer sizes");
  }

  ImageShape shape() const override { return shape_; }
  std::size_t class_count() const override { return b2_.size() == 1 ? 2 : b2_.size(); }
  std::size_t hidden() const noexcept { return hidden_; }

  double objective(const ImageTensor& x, std::size_t target) const override {
    detail::require_target(target, class_count());
    return detail::logit_objective(forward(x).second, target).first;
  }

  PerturbationVector objective_gradient(const ImageTensor& x, std::size_t target) const override {
    detail::require_target(target, class_count());
    const auto [activations, logits] = forward(x);
    const auto dlogits = detail::logit_objective(logits, target).second;
    const std::size_t k = shape_.size();
    std::vector<double> dpre(hidden_, 0.0);
    for (std::size_t o = 0; o < dlogits.size(); ++o)
      for (std::size_t j = 0; j < hidden_; ++j) dpre[j] += dlogits[o] * w2_[o * hidden_ + j];
    for (std::size_t j = 0; j < hidden_; ++j) dpre[j] *= 1.0 - activations[j] * activations[j];
    PerturbationVector g(shape_);
    for (std::size_t j = 0; j < hidden_; ++j)
      for (std::size_t i = 0; i < k; ++i) g[i] += dpre[j] * w1_[j * k + i];
    return g;
  }

  const std::vector<double>& hidden_weights() const noexcept { return w1_; }
  const std::vector<double>& hidden_bias() const noexcept { return b1_; }
  const std::vector<double>& output_weights() const noexcept { return w2_; }
  const std::vector<double>& output_bias() const noexcept { return b2_; }

 private:
  std::pair<std::vector<double>, std::vector<double>> forward(const ImageTensor& x) const {
    require_same_shape(shape_, x.shape());
    const std::size_t k = shape_.size();
    std::vector<double> act(b1_);
    for (std::size_t j = 0; j < hidden_; ++j) {
      for (std::size_t i = 0; i < k; ++i) act[j] += w1_[j * k + i] * x[i];
      act[j] = std::tanh(act[j]);
    }
    std::vector<double> logits(b2_);
    for (std::size_t o = 0; o < logits.size(); ++o)
      for (std::size_t j = 0; j < hidden_; ++j) logits[o] += w2_[o * hidden_ + j] * act[j];
    return {std::move(act), std::move(logits)};
  }

  ImageShape shape_;
  std::size_t hidden_;
  std::vector<double> w1_, b1_, w2_, b2_;
};

inline PerturbationVector adversarial_gradient(const SurrogateModel& model, const ImageTensor& x,
                                               std::size_t target) {
  require_same_shape(model.shape(), x.shape());
  return model.objective_gradient(x, target);
}

inline constexpr double kDefaultRetreatFraction = 0.05;

/// Surrogate gradient taken slightly on the original's side of x_adv,
/// projected onto the hyperplane orthogonal to the source direction and
/// unit-normalized.
inline PerturbationVector projected_surrogate_direction(const SurrogateModel& model, const ImageTensor& x_adv,
                                                        const ImageTensor& x_orig, std::size_t target,
                                                        double retreat_fraction = kDefaultRetreatFraction) {
  if (!(retreat_fraction >= 0.0 && retreat_fraction < 1.0))
    throw ContractViolation("retreat fraction must lie in [0, 1)");
  const PerturbationVector source = difference(x_orig, x_adv);
  if (!(norm(source) > kDegenerateNorm)) throw DegenerateDirection("x_adv coincides with x_orig");
  const ImageTensor x_eval = displaced(x_adv, source, retreat_fraction);
  PerturbationVector g = adversarial_gradient(model, x_eval, target);
  try {
    g = project_orthogonal(std::move(g), source);
    return renormalize(std::move(g), 1.0);
  } catch (const DegenerateSample&) {
    throw DegenerateGradient("projected surrogate gradient vanished");
  }
}

struct PgdOptions {
  double step_size = 0.1;  // l2 length of each step
  std::size_t steps = 1000;
  std::size_t budget = 1000;
  double threshold = kInfinity;
};

/// Iterative transfer attack: steps follow the surrogate's normalized
/// gradient, every iterate is checked once against the black box.
inline AttackResult pgd_transfer_attack(const SurrogateModel& model, const Oracle& oracle,
                                        const AdversarialCriterion& criterion, const ImageTensor& x_orig,
                                        std::size_t target, const PgdOptions& options) {
  if (options.budget < 1) throw ContractViolation("PGD budget must be at least 1");
  if (!(options.step_size > 0.0)) throw ContractViolation("PGD step size must be positive");
  QueryLedger ledger;
  QuerySession session(oracle, criterion, x_orig, ledger, options.budget);
  AttackResult result;
  result.threshold = options.threshold;
  ImageTensor x = x_orig;
  for (std::size_t i = 0; i < options.steps && !session.exhausted(); ++i) {
    const PerturbationVector g = adversarial_gradient(model, x, target);
    const double gn = norm(g);
    if (!(gn > kDegenerateNorm)) break;
    x = clip_to_valid(displaced(x, g, options.step_size / gn));
    if (session.probe(x, QueryPhase::kAttack)) {
      result.adversarial = x;
      result.distance = l2_distance(x, x_orig);
      break;
    }
  }
  result.queries = ledger.total_queries();
  result.trace = best_distance_trace(ledger);
  result.success = result.adversarial.has_value() && result.distance <= result.threshold;
  return result;
}

// ---------------------------------------------------------------------------
// Parameter files: JSON with a shape header and row-major weights.
//   {"kind": "linear", "shape": [H, W, C], "weights": [...], "bias": [...]}
//   {"kind": "mlp", "shape": [H, W, C], "hidden": n,
//    "hidden_weights": [...], "hidden_bias": [...],
//    "output_weights": [...], "output_bias": [...]}

inline nlohmann::json surrogate_to_json(const SurrogateModel& model) {
  const ImageShape s = model.shape();
  nlohmann::json j;
  j["shape"] = {s.height, s.width, s.channels};
  if (const auto* lin = dynamic_cast<const LinearSurrogate*>(&model)) {
    j["kind"] = "linear";
    j["weights"] = lin->weights();
    j["bias"] = lin->bias();
  } else if (const auto* mlp = dynamic_cast<const MlpSurrogate*>(&model)) {
    j["kind"] = "mlp";
    j["hidden"] = mlp->hidden();
    j["hidden_weights"] = mlp->hidden_weights();
    j["hidden_bias"] = mlp->hidden_bias();
    j["output_weights"] = mlp->output_weights();
    j["output_bias"] = mlp->output_bias();
  } else {
    throw ContractViolation("surrogate kind has no parameter file representation");
  }
  return j;
}

inline SurrogatePtr surrogate_from_json(const nlohmann::json& j) {
  try {
    const auto dims = j.at("shape").get<std::vector<std::size_t>>();
    if (dims.size() != 3) throw ConfigError("surrogate shape must have three entries");
    const ImageShape shape{dims[0], dims[1], dims[2]};
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "linear")
      return std::make_shared<LinearSurrogate>(shape, j.at("weights").get<std::vector<double>>(),
                                               j.at("bias").get<std::vector<double>>());
    if (kind == "mlp")
      return std::make_shared<MlpSurrogate>(shape, j.at("hidden").get<std::size_t>(),
                                            j.at("hidden_weights").get<std::vector<double>>(),
                                            j.at("hidden_bias").get<std::vector<double>>(),
                                            j.at("output_weights").get<std::vector<double>>(),
                                            j.at("output_bias").get<std::vector<double>>());
    throw ConfigError("unknown surrogate kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed surrogate parameters: ") + e.what());
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
}

inline SurrogatePtr load_surrogate(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open surrogate file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("surrogate file " + path + " is not valid JSON: " + e.what());
  }
  return surrogate_from_json(j);
}

}  // namespace bba
