#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>

#include "bba/perlin.hpp"
#include "bba/rng.hpp"
#include "bba/tensor.hpp"

namespace bba {

struct MaskTag;
/// Nonnegative per-element weights from the current adversarial/original difference.
using RegionalMask = Field<MaskTag>;

inline constexpr double kMaskRelativeFloor = 1e-3;
inline constexpr double kMaskAbsoluteFloor = 1e-6;

/// |x_adv - x_orig| elementwise, floored at relative_floor * max (or at the
/// absolute floor when the images coincide). A relative floor of 0 disables
/// flooring.
inline RegionalMask compute_mask(const ImageTensor& x_adv, const ImageTensor& x_orig,
                                 double relative_floor = kMaskRelativeFloor) {
  require_same_shape(x_adv.shape(), x_orig.shape());
  RegionalMask mask(x_adv.shape());
  double peak = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = std::abs(x_adv[i] - x_orig[i]);
    peak = std::max(peak, mask[i]);
  }
  if (relative_floor <= 0.0) return mask;
  const double floor = peak > 0.0 ? relative_floor * peak : kMaskAbsoluteFloor;
  for (auto& w : mask.data()) w = std::max(w, floor);
  return mask;
}

/// mask (.) eta, unit-normalized.
inline PerturbationVector apply_mask(PerturbationVector eta, const RegionalMask& mask) {
  require_same_shape(eta.shape(), mask.shape());
  for (std::size_t i = 0; i < eta.size(); ++i) {
    if (mask[i] < 0.0) throw ContractViolation("mask weights must be nonnegative");
    eta[i] *= mask[i];
  }
  return renormalize(std::move(eta), 1.0);
}

/// (1 - weight) * eta + weight * eta_pg, unit-normalized. Both inputs are
/// expected to be unit vectors.
inline PerturbationVector mix_gradient(const PerturbationVector& eta, const PerturbationVector& eta_pg,
                                       double weight) {
  if (!(weight >= 0.0 && weight <= 1.0)) throw ContractViolation("gradient weight must lie in [0, 1]");
  PerturbationVector mixed = axpy(scaled(eta, 1.0 - weight), eta_pg, weight);
  return renormalize(std::move(mixed), 1.0);
}

struct BiasConfig {
  bool use_perlin = false;
  bool use_mask = false;
  bool use_gradient = false;
  double gradient_weight = 0.5;
  double perlin_frequency = 0.0;  // 0 selects default_perlin_frequency(shape)
  PerlinChannelMode perlin_channels = PerlinChannelMode::kPerChannel;
  double mask_floor = kMaskRelativeFloor;

  bool valid() const { return gradient_weight >= 0.0 && gradient_weight <= 1.0 && perlin_frequency >= 0.0; }

  /// e.g. "perlin+mask", "none"
  std::string label() const {
    std::string out;
    auto add = [&out](const char* s) { out += out.empty() ? s : std::string("+") + s; };
    if (use_perlin) add("perlin");
    if (use_mask) add("mask");
    if (use_gradient) add("gradient");
    return out.empty() ? "none" : out;
  }

  friend bool operator==(const BiasConfig&, const BiasConfig&) = default;
};

/// Order in which generate_candidate composes the biases; recorded in reports.
inline constexpr const char* kBiasPipelineOrder =
    "sample(normal|perlin) > mask > project > normalize > mix_gradient > project > scale";

inline constexpr int kDefaultSampleRetries = 10;

inline void fill_standard_normal(PerturbationVector& v, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& e : v.data()) e = dist(rng);
}

/// Raw sample from the configured base distribution.
inline PerturbationVector sample_base(const ImageShape& shape, const BiasConfig& config, Rng& rng) {
  if (config.use_perlin) {
    const double f = config.perlin_frequency > 0.0 ? config.perlin_frequency : default_perlin_frequency(shape);
    return draw_perlin(shape, f, rng, config.perlin_channels);
  }
  PerturbationVector s(shape);
  fill_standard_normal(s, rng);
  return s;
}

struct CandidateInputs {
  const ImageTensor& x_adv;
  const ImageTensor& x_orig;
  double length;                                        // requested norm of the orthogonal step
  const PerturbationVector* projected_gradient = nullptr;  // unit, orthogonal to the source direction
  const RegionalMask* mask = nullptr;                   // computed from x_adv when null and masking is on
};

/// Biased orthogonal step: orthogonal to x_orig - x_adv and of norm `length`.
inline PerturbationVector generate_candidate(const CandidateInputs& in, const BiasConfig& config, Rng& rng,
                                             int max_retries = kDefaultSampleRetries) {
  if (!config.valid()) throw ContractViolation("invalid bias configuration");
  if (!(in.length > 0.0)) throw ContractViolation("candidate length must be positive");
  const PerturbationVector source = difference(in.x_orig, in.x_adv);
  if (!(norm(source) > kDegenerateNorm)) throw DegenerateDirection("x_adv coincides with x_orig");

  RegionalMask local_mask;
  const RegionalMask* mask = in.mask;
  if (config.use_mask && mask == nullptr) {
    local_mask = compute_mask(in.x_adv, in.x_orig, config.mask_floor);
    mask = &local_mask;
  }
  const bool mix = config.use_gradient && in.projected_gradient != nullptr;

  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    try {
      PerturbationVector s = sample_base(in.x_adv.shape(), config, rng);
      if (config.use_mask) s = apply_mask(std::move(s), *mask);
      s = renormalize(project_orthogonal(std::move(s), source), 1.0);
      if (mix) s = mix_gradient(s, *in.projected_gradient, config.gradient_weight);
      return renormalize(project_orthogonal(std::move(s), source), in.length);
    } catch (const DegenerateSample&) {
      // resample
    }
  }
  throw SamplingExhausted("no usable candidate after " + std::to_string(max_retries) + " retries");
}

}  // namespace bba
