#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "bba/bias.hpp"
#include "bba/perlin.hpp"
#include "bba/rng.hpp"
#include "bba/surrogate.hpp"
#include "bba/tensor.hpp"

namespace bba {

// ---------------------------------------------------------------------------
// Spectra

/// |DFT|^2 of one channel, computed separably (rows, then columns).
inline std::vector<double> power_spectrum(const PerturbationVector& v, std::size_t channel = 0) {
  const ImageShape& s = v.shape();
  const std::size_t h = s.height;
  const std::size_t w = s.width;
  using cd = std::complex<double>;
  std::vector<cd> rows(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t u = 0; u < w; ++u) {
      cd acc = 0.0;
      for (std::size_t c = 0; c < w; ++c)
        acc += v.at(r, c, channel) * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(u * c % w) / w);
      rows[r * w + u] = acc;
    }
  std::vector<double> power(h * w);
  for (std::size_t u = 0; u < w; ++u)
    for (std::size_t k = 0; k < h; ++k) {
      cd acc = 0.0;
      for (std::size_t r = 0; r < h; ++r)
        acc += rows[r * w + u] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * r % h) / h);
      power[k * w + u] = std::norm(acc);
    }
  return power;
}

/// Fraction of non-DC spectral energy at radial index <= max_radius, where
/// the radial index of bin (k, u) uses the folded frequencies min(k, h - k)
/// and min(u, w - u).
inline double low_frequency_fraction(const PerturbationVector& v, double max_radius, std::size_t channel = 0) {
  const ImageShape& s = v.shape();
  const std::vector<double> power = power_spectrum(v, channel);
  double total = 0.0;
  double low = 0.0;
  for (std::size_t k = 0; k < s.height; ++k)
    for (std::size_t u = 0; u < s.width; ++u) {
      if (k == 0 && u == 0) continue;
      const double fk = static_cast<double>(std::min(k, s.height - k));
      const double fu = static_cast<double>(std::min(u, s.width - u));
      const double p = power[k * s.width + u];
      total += p;
      if (std::hypot(fk, fu) <= max_radius) low += p;
    }
  return total > 0.0 ? low / total : 0.0;
}

// ---------------------------------------------------------------------------
// Gradient checks

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t probes = 0;
};

/// Central differences on `coordinates` randomly chosen inputs per probe.
/// The relative error of a coordinate is |analytic - numeric| / max(|analytic|, |numeric|, scale),
/// where scale is 1e-3 times the gradient's largest entry so that vanishing
/// coordinates do not dominate.
inline GradientCheck check_gradient(const SurrogateModel& model, std::size_t target, std::size_t probes,
                                    std::size_t coordinates, Rng& rng, double step = 1e-5) {
  GradientCheck out;
  const ImageShape shape = model.shape();
  for (std::size_t p = 0; p < probes; ++p) {
    ImageTensor x(shape);
    for (auto& e : x.data()) e = uniform01(rng);
    const PerturbationVector g = model.objective_gradient(x, target);
    double gmax = 0.0;
    for (double e : g.data()) gmax = std::max(gmax, std::abs(e));
    const double scale = std::max(1e-3 * gmax, 1e-8);
    const std::size_t n = std::min(coordinates, x.size());
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t i = coordinates >= x.size() ? c : uniform_index(rng, x.size());
      ImageTensor plus = x;
      ImageTensor minus = x;
      plus[i] += step;
      minus[i] -= step;
      const double numeric = (model.objective(plus, target) - model.objective(minus, target)) / (2.0 * step);
      const double denom = std::max({std::abs(g[i]), std::abs(numeric), scale});
      out.max_relative_error = std::max(out.max_relative_error, std::abs(g[i] - numeric) / denom);
    }
    ++out.probes;
  }
  return out;
}

/// A random model of each shipped kind: binary and multi-class linear,
/// binary and multi-class MLP.
inline std::vector<std::pair<std::string, SurrogatePtr>> reference_surrogates(const ImageShape& shape, Rng& rng) {
  const std::size_t k = shape.size();
  auto normal = [&rng](std::size_t n, double sd) {
    std::vector<double> v(n);
    for (auto& e : v) e = sd * standard_normal(rng);
    return v;
  };
  const double in_sd = 1.0 / std::sqrt(static_cast<double>(k));
  std::vector<std::pair<std::string, SurrogatePtr>> out;
  out.emplace_back("linear-binary", std::make_shared<LinearSurrogate>(shape, normal(k, in_sd), normal(1, 0.1)));
  out.emplace_back("linear-multiclass", std::make_shared<LinearSurrogate>(shape, normal(3 * k, in_sd), normal(3, 0.1)));
  const std::size_t hidden = 8;
  out.emplace_back("mlp-binary", std::make_shared<MlpSurrogate>(shape, hidden, normal(hidden * k, in_sd),
                                                                normal(hidden, 0.1), normal(hidden, 0.5),
                                                                normal(1, 0.1)));
  out.emplace_back("mlp-multiclass", std::make_shared<MlpSurrogate>(shape, hidden, normal(hidden * k, in_sd),
                                                                    normal(hidden, 0.1), normal(3 * hidden, 0.5),
                                                                    normal(3, 0.1)));
  return out;
}

// ---------------------------------------------------------------------------
// Invariant suite

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline PerturbationVector random_direction(const ImageShape& shape, Rng& rng) {
  PerturbationVector v(shape);
  fill_standard_normal(v, rng);
  return v;
}

inline ImageTensor random_image(const ImageShape& shape, Rng& rng) {
  ImageTensor x(shape);
  for (auto& e : x.data()) e = uniform01(rng);
  return x;
}

inline std::string describe(const char* what, double value, const char* bound, double limit) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s %.3g (%s %.3g)", what, value, bound, limit);
  return buf;
}

}  // namespace detail

/// Projection, normalization and candidate geometry on random cases.
inline std::vector<CheckOutcome> check_geometry(std::size_t cases, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  double orth = 0.0, unit = 0.0, idem = 0.0, triangle = 0.0, cand_orth = 0.0, cand_len = 0.0;
  const std::vector<BiasConfig> grid = [] {
    std::vector<BiasConfig> g;
    for (int bits = 0; bits < 8; ++bits) {
      BiasConfig c;
      c.use_perlin = bits & 1;
      c.use_mask = bits & 2;
      c.use_gradient = bits & 4;
      g.push_back(c);
    }
    return g;
  }();
  for (std::size_t i = 0; i < cases; ++i) {
    const ImageShape shape{1 + uniform_index(rng, 12), 1 + uniform_index(rng, 12), 1 + uniform_index(rng, 3)};
    const PerturbationVector src = detail::random_direction(shape, rng);
    const PerturbationVector v = detail::random_direction(shape, rng);
    PerturbationVector p;
    try {
      p = project_orthogonal(v, src);
    } catch (const DegenerateSample&) {
      continue;  // one-element shapes leave nothing orthogonal
    }
    orth = std::max(orth, std::abs(dot(p, src)) / (norm(p) * norm(src)));
    const PerturbationVector u = renormalize(p, 1.0);
    unit = std::max(unit, std::abs(norm(u) - 1.0));
    const PerturbationVector pp = project_orthogonal(p, src);
    double diff = 0.0;
    for (std::size_t e = 0; e < p.size(); ++e) diff = std::max(diff, std::abs(pp[e] - p[e]));
    idem = std::max(idem, diff / std::max(1.0, norm(p)));
    const ImageTensor a = detail::random_image(shape, rng);
    const ImageTensor b = detail::random_image(shape, rng);
    const ImageTensor c = detail::random_image(shape, rng);
    triangle = std::max(triangle, l2_distance(a, c) - (l2_distance(a, b) + l2_distance(b, c)));

    if (shape.size() < 4) continue;
    const BiasConfig& cfg = grid[i % grid.size()];
    const PerturbationVector pg = renormalize(project_orthogonal(detail::random_direction(shape, rng), difference(b, a)), 1.0);
    const double length = 0.01 + uniform01(rng);
    try {
      const PerturbationVector cand = generate_candidate({a, b, length, &pg}, cfg, rng);
      const PerturbationVector source = difference(b, a);
      cand_orth = std::max(cand_orth, std::abs(dot(cand, source)) / (norm(cand) * norm(source)));
      cand_len = std::max(cand_len, std::abs(norm(cand) - length) / length);
    } catch (const SamplingExhausted&) {
      // tiny shapes can defeat the sampler; not a geometry failure
    }
  }
  return {
      {"orthogonality", orth <= 1e-6, detail::describe("max |cos|", orth, "<=", 1e-6)},
      {"unit-norm", unit <= 1e-9, detail::describe("max | |u| - 1 |", unit, "<=", 1e-9)},
      {"projection-idempotence", idem <= 1e-10, detail::describe("max deviation", idem, "<=", 1e-10)},
      {"triangle-inequality", triangle <= 1e-12, detail::describe("max violation", triangle, "<=", 1e-12)},
      {"candidate-orthogonality", cand_orth <= 1e-6, detail::describe("max |cos|", cand_orth, "<=", 1e-6)},
      {"candidate-length", cand_len <= 1e-9, detail::describe("max relative error", cand_len, "<=", 1e-9)},
  };
}

inline std::vector<CheckOutcome> check_gradients(std::size_t probes, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const ImageShape shape{6, 6, 2};
  std::vector<CheckOutcome> out;
  for (const auto& [name, model] : reference_surrogates(shape, rng)) {
    double worst = 0.0;
    for (std::size_t target = 0; target < model->class_count(); ++target)
      worst = std::max(worst, check_gradient(*model, target, probes, 8, rng).max_relative_error);
    out.push_back({"gradient-" + name, worst <= 1e-4, detail::describe("max relative error", worst, "<=", 1e-4)});
  }
  return out;
}

/// Perlin patterns put more non-DC energy below radial index 2f than
/// standard normal samples, on every seed.
inline std::vector<CheckOutcome> check_spectrum(std::size_t seeds, std::uint64_t seed) {
  const ImageShape shape{64, 64, 1};
  const double frequency = 5.0;
  double worst_margin = kInfinity;
  double worst_fraction = 1.0;
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng = make_rng(derive_seed(seed, s));
    const PerturbationVector perlin = draw_perlin(shape, frequency, rng);
    const PerturbationVector noise = detail::random_direction(shape, rng);
    const double pf = low_frequency_fraction(perlin, 2.0 * frequency);
    const double nf = low_frequency_fraction(noise, 2.0 * frequency);
    worst_margin = std::min(worst_margin, pf - nf);
    worst_fraction = std::min(worst_fraction, pf);
  }
  return {
      {"spectral-concentration", worst_fraction >= 0.9,
       detail::describe("min low-frequency fraction", worst_fraction, ">=", 0.9)},
      {"spectral-vs-normal", worst_margin > 0.0, detail::describe("min margin over normal", worst_margin, ">", 0.0)},
  };
}

/// Everything the `verify` subcommand runs.
inline std::vector<CheckOutcome> run_invariant_suite(std::uint64_t seed = 2024) {
  std::vector<CheckOutcome> out;
  for (auto& c : check_geometry(1000, seed)) out.push_back(std::move(c));
  for (auto& c : check_gradients(100, seed + 1)) out.push_back(std::move(c));
  for (auto& c : check_spectrum(100, seed + 2)) out.push_back(std::move(c));
  return out;
}

}  // namespace bba
