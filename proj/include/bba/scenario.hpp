#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bba/bias.hpp"
#include "bba/oracle.hpp"
#include "bba/rng.hpp"
#include "bba/surrogate.hpp"
#include "bba/tensor.hpp"

namespace bba {

/// Synthetic desk-scale attack problems built from the toy oracles. Every
/// toy oracle here is affine in the input, so the exact distance from an
/// image to the decision boundary is known.

enum class ToyOracleKind { kLinear, kLowpass, kRegion, kComposite };

enum class SurrogateKind {
  kNone,
  kExact,       // same decision function as the oracle
  kOrthogonal,  // gradient orthogonal to the oracle's normal: useless
  kUnfiltered,  // the inner linear model without the low-pass stage
  kPartial,     // normal with cosine `surrogate_fidelity` to the oracle's
};

struct ToyProblemSpec {
  ToyOracleKind oracle = ToyOracleKind::kLinear;
  ImageShape shape{32, 32, 1};
  std::uint64_t oracle_seed = 1;
  std::size_t blur_radius = 2;
  /// Region used by region/composite oracles; empty means the central
  /// rectangle covering a quarter of the image.
  Region region{};
  double margin = 1.0;       // distance from every original to the boundary
  double spread = 0.3;       // originals are uniform in 0.5 +- spread
  std::size_t pool_size = 3;
  double pool_margin = 1.0;  // target-class images lie this far past the boundary
  /// >= 0: target-class images copy the original outside the region, plus
  /// uniform noise of this amplitude. < 0: independent images.
  double background_noise = -1.0;
  SurrogateKind surrogate = SurrogateKind::kNone;
  double surrogate_fidelity = 0.7;
};

struct ToyProblem {
  ToyProblemSpec spec;
  OraclePtr oracle;
  PerturbationVector normal;  // effective weight vector w: score(x) = w.x + bias
  double bias = 0.0;
  SurrogatePtr surrogate;
  AdversarialCriterion criterion = AdversarialCriterion::exact_target("pos");
  std::size_t surrogate_target = 1;

  double score(const ImageTensor& x) const { return dot(normal, x) + bias; }
  double boundary_distance(const ImageTensor& x) const { return std::abs(score(x)) / norm(normal); }
};

struct ToyImage {
  ImageTensor original;
  std::vector<ImageTensor> pool;
};

/// Transpose of box_blur: the adjoint map used to pull weights back through
/// the low-pass stage.
inline PerturbationVector box_blur_transpose(const PerturbationVector& y, std::size_t radius) {
  const ImageShape& s = y.shape();
  const auto r = static_cast<std::ptrdiff_t>(radius);
  const auto h = static_cast<std::ptrdiff_t>(s.height);
  const auto w = static_cast<std::ptrdiff_t>(s.width);
  PerturbationVector vertical(s);
  for (std::size_t ch = 0; ch < s.channels; ++ch)
    for (std::ptrdiff_t col = 0; col < w; ++col)
      for (std::ptrdiff_t row = 0; row < h; ++row) {
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, row - r);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(h - 1, row + r);
        const double share = y.at(row, col, ch) / static_cast<double>(hi - lo + 1);
        for (std::ptrdiff_t k = lo; k <= hi; ++k) vertical.at(k, col, ch) += share;
      }
  PerturbationVector out(s);
  for (std::size_t ch = 0; ch < s.channels; ++ch)
    for (std::ptrdiff_t row = 0; row < h; ++row)
      for (std::ptrdiff_t col = 0; col < w; ++col) {
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, col - r);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(w - 1, col + r);
        const double share = vertical.at(row, col, ch) / static_cast<double>(hi - lo + 1);
        for (std::ptrdiff_t k = lo; k <= hi; ++k) out.at(row, k, ch) += share;
      }
  return out;
}

inline Region resolve_region(const ToyProblemSpec& spec) {
  if (spec.region.rows > 0 && spec.region.cols > 0) return spec.region;
  const std::size_t rows = std::max<std::size_t>(1, spec.shape.height / 2);
  const std::size_t cols = std::max<std::size_t>(1, spec.shape.width / 2);
  return {(spec.shape.height - rows) / 2, (spec.shape.width - cols) / 2, rows, cols};
}

inline PerturbationVector restrict_to(PerturbationVector v, const Region& region) {
  const ImageShape s = v.shape();
  for (std::size_t r = 0; r < s.height; ++r)
    for (std::size_t c = 0; c < s.width; ++c)
      if (!region.contains(r, c))
        for (std::size_t ch = 0; ch < s.channels; ++ch) v.at(r, c, ch) = 0.0;
  return v;
}

inline ToyProblem make_toy_problem(const ToyProblemSpec& spec) {
  require_valid(spec.shape);
  if (!(spec.margin > 0.0) || !(spec.pool_margin > 0.0)) throw ConfigError("margins must be positive");
  if (spec.pool_size == 0) throw ConfigError("pool size must be positive");
  Rng rng = make_rng(spec.oracle_seed);
  PerturbationVector weights(spec.shape);
  fill_standard_normal(weights, rng);
  weights = renormalize(std::move(weights), 1.0);

  const Region region = resolve_region(spec);
  const bool regional = spec.oracle == ToyOracleKind::kRegion || spec.oracle == ToyOracleKind::kComposite;
  const bool lowpass = spec.oracle == ToyOracleKind::kLowpass || spec.oracle == ToyOracleKind::kComposite;

  // Fix the bias so mid-gray sits exactly on the boundary.
  PerturbationVector inner_normal = regional ? restrict_to(weights, region) : weights;
  PerturbationVector normal = lowpass ? box_blur_transpose(inner_normal, spec.blur_radius) : inner_normal;
  double bias = 0.0;
  for (std::size_t i = 0; i < normal.size(); ++i) bias -= 0.5 * normal[i];

  ToyProblem problem;
  problem.spec = spec;
  OraclePtr oracle = linear_oracle(weights, bias);
  if (regional) oracle = region_oracle(oracle, region);
  if (lowpass) oracle = lowpass_oracle(oracle, spec.blur_radius);
  problem.oracle = std::move(oracle);
  problem.bias = bias;

  switch (spec.surrogate) {
    case SurrogateKind::kNone:
      break;
    case SurrogateKind::kExact:
      problem.surrogate = std::make_shared<LinearSurrogate>(LinearSurrogate::binary(normal, bias));
      break;
    case SurrogateKind::kOrthogonal: {
      PerturbationVector w(spec.shape);
      fill_standard_normal(w, rng);
      w = renormalize(project_orthogonal(std::move(w), normal), norm(normal));
      problem.surrogate = std::make_shared<LinearSurrogate>(LinearSurrogate::binary(w, 0.0));
      break;
    }
    case SurrogateKind::kPartial: {
      if (!(spec.surrogate_fidelity >= 0.0 && spec.surrogate_fidelity <= 1.0))
        throw ConfigError("surrogate fidelity must lie in [0, 1]");
      PerturbationVector noise(spec.shape);
      fill_standard_normal(noise, rng);
      noise = renormalize(project_orthogonal(std::move(noise), normal), 1.0);
      const double rho = spec.surrogate_fidelity;
      PerturbationVector w = axpy(scaled(normal, rho / norm(normal)), noise, std::sqrt(1.0 - rho * rho));
      w = scaled(std::move(w), norm(normal));
      double b = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) b -= 0.5 * w[i];
      problem.surrogate = std::make_shared<LinearSurrogate>(LinearSurrogate::binary(w, b));
      break;
    }
    case SurrogateKind::kUnfiltered: {
      double b = 0.0;
      for (std::size_t i = 0; i < inner_normal.size(); ++i) b -= 0.5 * inner_normal[i];
      problem.surrogate = std::make_shared<LinearSurrogate>(LinearSurrogate::binary(inner_normal, b));
      break;
    }
  }
  problem.normal = std::move(normal);
  return problem;
}

namespace detail {

/// Moves x along the normal so that its signed distance to the boundary is `signed_distance`.
inline ImageTensor place_at(const ToyProblem& problem, ImageTensor x, double signed_distance) {
  const double n = norm(problem.normal);
  const double shift = (signed_distance * n - problem.score(x)) / (n * n);
  return displaced(x, problem.normal, shift);
}

inline ImageTensor uniform_image(const ImageShape& shape, double spread, Rng& rng) {
  ImageTensor x(shape);
  for (auto& e : x.data()) e = 0.5 + spread * (2.0 * uniform01(rng) - 1.0);
  return x;
}

}  // namespace detail

/// One original (on the "neg" side, exactly `margin` from the boundary) and
/// its pool of target-class starting images.
inline ToyImage make_toy_image(const ToyProblem& problem, std::uint64_t image_seed) {
  const ToyProblemSpec& spec = problem.spec;
  Rng rng = make_rng(derive_seed(image_seed, 0x5EED));
  ToyImage out;
  out.original = detail::place_at(problem, detail::uniform_image(spec.shape, spec.spread, rng), -spec.margin);
  const Region region = resolve_region(spec);
  for (std::size_t i = 0; i < spec.pool_size; ++i) {
    ImageTensor p = detail::uniform_image(spec.shape, spec.spread, rng);
    if (spec.background_noise >= 0.0) {
      for (std::size_t r = 0; r < spec.shape.height; ++r)
        for (std::size_t c = 0; c < spec.shape.width; ++c)
          if (!region.contains(r, c))
            for (std::size_t ch = 0; ch < spec.shape.channels; ++ch)
              p.at(r, c, ch) = out.original.at(r, c, ch) + spec.background_noise * (2.0 * uniform01(rng) - 1.0);
    }
    out.pool.push_back(clip_to_valid(detail::place_at(problem, std::move(p), spec.pool_margin)));
  }
  return out;
}

inline std::string to_string(ToyOracleKind kind) {
  switch (kind) {
    case ToyOracleKind::kLinear: return "linear";
    case ToyOracleKind::kLowpass: return "lowpass";
    case ToyOracleKind::kRegion: return "region";
    case ToyOracleKind::kComposite: return "composite";
  }
  return "linear";
}

inline std::string to_string(SurrogateKind kind) {
  switch (kind) {
    case SurrogateKind::kNone: return "none";
    case SurrogateKind::kExact: return "exact";
    case SurrogateKind::kOrthogonal: return "orthogonal";
    case SurrogateKind::kUnfiltered: return "unfiltered";
    case SurrogateKind::kPartial: return "partial";
  }
  return "none";
}

inline ToyOracleKind parse_toy_oracle_kind(const std::string& s) {
  if (s == "linear") return ToyOracleKind::kLinear;
  if (s == "lowpass") return ToyOracleKind::kLowpass;
  if (s == "region") return ToyOracleKind::kRegion;
  if (s == "composite") return ToyOracleKind::kComposite;
  throw ConfigError("unknown toy oracle '" + s + "'");
}

inline SurrogateKind parse_surrogate_kind(const std::string& s) {
  if (s == "none") return SurrogateKind::kNone;
  if (s == "exact") return SurrogateKind::kExact;
  if (s == "orthogonal") return SurrogateKind::kOrthogonal;
  if (s == "unfiltered") return SurrogateKind::kUnfiltered;
  if (s == "partial") return SurrogateKind::kPartial;
  throw ConfigError("unknown surrogate kind '" + s + "'");
}

}  // namespace bba
