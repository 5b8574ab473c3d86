#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bba/errors.hpp"

namespace bba {

/// Norms at or below this value are treated as exact zeros.
inline constexpr double kDegenerateNorm = 1e-12;

struct ImageShape {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 1;

  constexpr std::size_t size() const noexcept { return height * width * channels; }
  constexpr bool valid() const noexcept { return height >= 1 && width >= 1 && channels >= 1; }

  /// Row-major flattening, channel innermost.
  constexpr std::size_t index(std::size_t row, std::size_t col, std::size_t ch) const noexcept {
    return (row * width + col) * channels + ch;
  }

  friend constexpr bool operator==(const ImageShape&, const ImageShape&) = default;

  std::string str() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }
};

inline void require_valid(const ImageShape& shape) {
  if (!shape.valid()) throw ContractViolation("invalid image shape " + shape.str());
}

inline void require_same_shape(const ImageShape& a, const ImageShape& b) {
  if (a != b) throw ContractViolation("shape mismatch: " + a.str() + " vs " + b.str());
}

/// Dense H x W x C array of doubles. The tag keeps pixel images and
/// perturbation directions from being mixed up by accident.
template <typename Tag>
class Field {
 public:
  Field() = default;

  explicit Field(ImageShape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {
    require_valid(shape_);
  }

  Field(ImageShape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    require_valid(shape_);
    if (data_.size() != shape_.size())
      throw ContractViolation("data length " + std::to_string(data_.size()) + " does not match shape " +
                              shape_.str());
  }

  const ImageShape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t row, std::size_t col, std::size_t ch = 0) { return data_[shape_.index(row, col, ch)]; }
  double at(std::size_t row, std::size_t col, std::size_t ch = 0) const {
    return data_[shape_.index(row, col, ch)];
  }

  friend bool operator==(const Field&, const Field&) = default;

 private:
  ImageShape shape_{};
  std::vector<double> data_;
};

struct ImageTag;
struct PerturbationTag;

/// Pixel intensities in [0,1] once clipped.
using ImageTensor = Field<ImageTag>;
/// Unbounded direction in the flattened input space.
using PerturbationVector = Field<PerturbationTag>;

template <typename A, typename B>
double dot(const Field<A>& a, const Field<B>& b) {
  require_same_shape(a.shape(), b.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
double norm(const Field<T>& v) {
  return std::sqrt(dot(v, v));
}

inline double l2_distance(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a.shape(), b.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

/// to - from, as a direction.
inline PerturbationVector difference(const ImageTensor& to, const ImageTensor& from) {
  require_same_shape(to.shape(), from.shape());
  PerturbationVector out(to.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = to[i] - from[i];
  return out;
}

/// x + scale * v, unclipped.
inline ImageTensor displaced(const ImageTensor& x, const PerturbationVector& v, double scale = 1.0) {
  require_same_shape(x.shape(), v.shape());
  ImageTensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * v[i];
  return out;
}

inline PerturbationVector scaled(PerturbationVector v, double factor) {
  for (auto& e : v.data()) e *= factor;
  return v;
}

/// a + factor * b
inline PerturbationVector axpy(PerturbationVector a, const PerturbationVector& b, double factor) {
  require_same_shape(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += factor * b[i];
  return a;
}

inline PerturbationVector renormalize(PerturbationVector v, double target_norm) {
  const double n = norm(v);
  if (!(n > kDegenerateNorm)) throw DegenerateSample("cannot renormalize a near-zero vector");
  return scaled(std::move(v), target_norm / n);
}

/// Removes the component of v along source_dir.
inline PerturbationVector project_orthogonal(PerturbationVector v, const PerturbationVector& source_dir) {
  require_same_shape(v.shape(), source_dir.shape());
  const double dn = norm(source_dir);
  if (!(dn > kDegenerateNorm)) throw DegenerateDirection("source direction has near-zero norm");
  const double scale = std::max(1.0, norm(v));
  const double coeff = dot(v, source_dir) / (dn * dn);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= coeff * source_dir[i];
  // Rounding leaves a residue proportional to |v| when v is parallel to the source.
  if (!(norm(v) > kDegenerateNorm * scale)) throw DegenerateSample("sample is parallel to the source direction");
  return v;
}

inline ImageTensor clip_to_valid(ImageTensor x) {
  for (auto& e : x.data()) e = std::clamp(e, 0.0, 1.0);
  return x;
}

inline double cosine_similarity(const PerturbationVector& a, const PerturbationVector& b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (!(na > kDegenerateNorm) || !(nb > kDegenerateNorm)) return 0.0;
  return dot(a, b) / (na * nb);
}

}  // namespace bba
