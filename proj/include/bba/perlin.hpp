#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>

#include "bba/rng.hpp"
#include "bba/tensor.hpp"

namespace bba {

/// How multi-channel images receive Perlin patterns.
enum class PerlinChannelMode {
  kPerChannel,  // one independently shuffled pattern per channel
  kReplicated,  // one pattern copied to every channel
};

struct PerlinParams {
  std::array<std::uint8_t, 256> permutation{};
  double frequency = 5.0;  // lattice cells across the longer image side

  bool valid() const {
    std::array<bool, 256> seen{};
    for (auto p : permutation) {
      if (seen[p]) return false;
      seen[p] = true;
    }
    return frequency > 0.0;
  }
};

/// Frequency 5 at 64 px, scaled so the spatial wavelength stays constant.
inline double default_perlin_frequency(const ImageShape& shape) {
  return 5.0 * static_cast<double>(std::max(shape.height, shape.width)) / 64.0;
}

/// Fisher-Yates over 0..255.
inline PerlinParams shuffle_permutation(Rng& rng, double frequency = 5.0) {
  if (!(frequency > 0.0)) throw ContractViolation("Perlin frequency must be positive");
  PerlinParams params;
  params.frequency = frequency;
  std::iota(params.permutation.begin(), params.permutation.end(), std::uint8_t{0});
  for (std::size_t i = params.permutation.size() - 1; i > 0; --i) {
    const std::size_t j = uniform_index(rng, i + 1);
    std::swap(params.permutation[i], params.permutation[j]);
  }
  return params;
}

namespace detail {

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

inline double lattice_gradient(std::uint8_t hash, double dx, double dy) {
  constexpr double s = 0.70710678118654752440;
  static constexpr std::array<std::array<double, 2>, 8> kGradients{{
      {1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}, {s, s}, {-s, s}, {s, -s}, {-s, -s}}};
  const auto& g = kGradients[hash & 7u];
  return g[0] * dx + g[1] * dy;
}

/// Classic 2-D gradient-lattice noise at (x, y).
inline double perlin2(const std::array<std::uint8_t, 256>& perm, double x, double y) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const double tx = x - fx;
  const double ty = y - fy;
  const auto xi = static_cast<unsigned>(static_cast<long long>(fx) & 255);
  const auto yi = static_cast<unsigned>(static_cast<long long>(fy) & 255);
  auto hash = [&perm](unsigned i, unsigned j) -> std::uint8_t {
    return perm[(perm[i & 255u] + j) & 255u];
  };
  const double n00 = lattice_gradient(hash(xi, yi), tx, ty);
  const double n10 = lattice_gradient(hash(xi + 1, yi), tx - 1.0, ty);
  const double n01 = lattice_gradient(hash(xi, yi + 1), tx, ty - 1.0);
  const double n11 = lattice_gradient(hash(xi + 1, yi + 1), tx - 1.0, ty - 1.0);
  const double u = smoothstep(tx);
  const double v = smoothstep(ty);
  const double nx0 = n00 + u * (n10 - n00);
  const double nx1 = n01 + u * (n11 - n01);
  return nx0 + v * (nx1 - nx0);
}

inline void fill_channel(const std::array<std::uint8_t, 256>& perm, double frequency, PerturbationVector& out,
                         std::size_t channel) {
  const ImageShape& shape = out.shape();
  const double scale = frequency / static_cast<double>(std::max(shape.height, shape.width));
  double mean = 0.0;
  for (std::size_t r = 0; r < shape.height; ++r) {
    const double y = (static_cast<double>(r) + 0.5) * scale;
    for (std::size_t c = 0; c < shape.width; ++c) {
      const double x = (static_cast<double>(c) + 0.5) * scale;
      const double value = perlin2(perm, x, y);
      out.at(r, c, channel) = value;
      mean += value;
    }
  }
  mean /= static_cast<double>(shape.height * shape.width);
  for (std::size_t r = 0; r < shape.height; ++r)
    for (std::size_t c = 0; c < shape.width; ++c) out.at(r, c, channel) -= mean;
}

}  // namespace detail

/// One Perlin pattern over the image grid, mean-subtracted per channel and
/// not normalized. Channel 0 uses `params`; further channels draw fresh
/// permutations from `rng` in per-channel mode.
inline PerturbationVector sample_perlin(const PerlinParams& params, const ImageShape& shape, Rng& rng,
                                       PerlinChannelMode mode = PerlinChannelMode::kPerChannel) {
  require_valid(shape);
  if (!(params.frequency > 0.0)) throw ContractViolation("Perlin frequency must be positive");
  PerturbationVector out(shape);
  detail::fill_channel(params.permutation, params.frequency, out, 0);
  for (std::size_t ch = 1; ch < shape.channels; ++ch) {
    if (mode == PerlinChannelMode::kReplicated) {
      for (std::size_t r = 0; r < shape.height; ++r)
        for (std::size_t c = 0; c < shape.width; ++c) out.at(r, c, ch) = out.at(r, c, 0);
    } else {
      const PerlinParams fresh = shuffle_permutation(rng, params.frequency);
      detail::fill_channel(fresh.permutation, fresh.frequency, out, ch);
    }
  }
  return out;
}

/// Shuffles a fresh permutation and samples one pattern; the form the attacks use.
inline PerturbationVector draw_perlin(const ImageShape& shape, double frequency, Rng& rng,
                                     PerlinChannelMode mode = PerlinChannelMode::kPerChannel) {
  const PerlinParams params = shuffle_permutation(rng, frequency);
  return sample_perlin(params, shape, rng, mode);
}

}  // namespace bba
