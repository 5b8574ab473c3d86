#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bba/criterion.hpp"
#include "bba/tensor.hpp"

namespace bba {

/// The black box: an image goes in, a ranked label list comes out. Scores
/// never cross this interface.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual ImageShape shape() const = 0;
  virtual LabelSet classify(const ImageTensor& x) const = 0;
  /// True if classify() may be called from several threads at once.
  virtual bool concurrency_safe() const { return true; }
};

using OraclePtr = std::shared_ptr<const Oracle>;

enum class QueryPhase { kInitialization, kAttack };

struct QueryRecord {
  std::size_t index = 0;  // 1-based position in the run
  double distance = 0.0;  // distance of the queried point to the original
  bool adversarial = false;
};

/// Exact count of successful oracle evaluations for one run.
class QueryLedger {
 public:
  explicit QueryLedger(bool keep_trace = true) : keep_trace_(keep_trace) {}

  std::size_t total_queries() const noexcept { return initialization_ + attack_; }
  std::size_t count(QueryPhase phase) const noexcept {
    return phase == QueryPhase::kInitialization ? initialization_ : attack_;
  }
  const std::vector<QueryRecord>& trace() const noexcept { return trace_; }

  /// Called once per completed evaluation. Returns the 1-based query index.
  std::size_t charge(QueryPhase phase) {
    (phase == QueryPhase::kInitialization ? initialization_ : attack_) += 1;
    return total_queries();
  }

  void annotate(std::size_t index, double distance, bool adversarial) {
    if (keep_trace_) trace_.push_back({index, distance, adversarial});
  }

 private:
  bool keep_trace_;
  std::size_t initialization_ = 0;
  std::size_t attack_ = 0;
  std::vector<QueryRecord> trace_;
};

/// Evaluates the oracle once and charges the ledger. Failed evaluations
/// (exceptions) are not charged.
inline LabelSet query(const Oracle& oracle, const ImageTensor& x, QueryLedger& ledger,
                      QueryPhase phase = QueryPhase::kAttack) {
  require_same_shape(oracle.shape(), x.shape());
  LabelSet labels = oracle.classify(x);
  ledger.charge(phase);
  return labels;
}

/// Binds an oracle, a criterion, the attacked image and a ledger for the
/// duration of one attack run.
class QuerySession {
 public:
  QuerySession(const Oracle& oracle, const AdversarialCriterion& criterion, const ImageTensor& original,
               QueryLedger& ledger, std::size_t budget)
      : oracle_(oracle), criterion_(criterion), original_(original), ledger_(ledger), budget_(budget) {
    require_same_shape(oracle.shape(), original.shape());
  }

  bool exhausted() const noexcept { return ledger_.total_queries() >= budget_; }
  std::size_t remaining() const noexcept { return exhausted() ? 0 : budget_ - ledger_.total_queries(); }
  std::size_t budget() const noexcept { return budget_; }
  const QueryLedger& ledger() const noexcept { return ledger_; }
  const ImageTensor& original() const noexcept { return original_; }
  const AdversarialCriterion& criterion() const noexcept { return criterion_; }

  /// One budgeted query reduced to the criterion's verdict.
  bool probe(const ImageTensor& x, QueryPhase phase) {
    const LabelSet labels = query(oracle_, x, ledger_, phase);
    const bool adversarial = is_adversarial(criterion_, labels);
    ledger_.annotate(ledger_.total_queries(), l2_distance(x, original_), adversarial);
    return adversarial;
  }

 private:
  const Oracle& oracle_;
  const AdversarialCriterion& criterion_;
  const ImageTensor& original_;
  QueryLedger& ledger_;
  std::size_t budget_;
};

// ---------------------------------------------------------------------------
// Toy oracles with analytically known geometry.

/// Labels "pos" where a.x + b > 0 and "neg" otherwise.
class LinearOracle final : public Oracle {
 public:
  LinearOracle(PerturbationVector weights, double bias, std::string positive = "pos", std::string negative = "neg")
      : weights_(std::move(weights)), bias_(bias), positive_(std::move(positive)), negative_(std::move(negative)) {
    if (!(norm(weights_) > kDegenerateNorm)) throw ContractViolation("linear oracle needs nonzero weights");
  }

  ImageShape shape() const override { return weights_.shape(); }

  LabelSet classify(const ImageTensor& x) const override {
    require_same_shape(shape(), x.shape());
    return LabelSet::single(score(x) > 0.0 ? positive_ : negative_);
  }

  double score(const ImageTensor& x) const { return dot(weights_, x) + bias_; }
  /// Euclidean distance from x to the decision hyperplane.
  double boundary_distance(const ImageTensor& x) const { return std::abs(score(x)) / norm(weights_); }

  const PerturbationVector& weights() const noexcept { return weights_; }
  double bias() const noexcept { return bias_; }
  const std::string& positive_label() const noexcept { return positive_; }
  const std::string& negative_label() const noexcept { return negative_; }

 private:
  PerturbationVector weights_;
  double bias_;
  std::string positive_;
  std::string negative_;
};

/// Per-channel box blur of the given radius; windows are clipped at the
/// image border and averaged over the pixels they cover.
template <typename T>
Field<T> box_blur(const Field<T>& x, std::size_t radius) {
  const ImageShape& s = x.shape();
  Field<T> horizontal(s);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  const auto h = static_cast<std::ptrdiff_t>(s.height);
  const auto w = static_cast<std::ptrdiff_t>(s.width);
  std::vector<double> prefix;
  for (std::size_t ch = 0; ch < s.channels; ++ch) {
    prefix.assign(static_cast<std::size_t>(w) + 1, 0.0);
    for (std::ptrdiff_t row = 0; row < h; ++row) {
      for (std::ptrdiff_t col = 0; col < w; ++col)
        prefix[col + 1] = prefix[col] + x.at(row, col, ch);
      for (std::ptrdiff_t col = 0; col < w; ++col) {
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, col - r);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(w - 1, col + r);
        horizontal.at(row, col, ch) = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
      }
    }
  }
  Field<T> out(s);
  for (std::size_t ch = 0; ch < s.channels; ++ch) {
    prefix.assign(static_cast<std::size_t>(h) + 1, 0.0);
    for (std::ptrdiff_t col = 0; col < w; ++col) {
      for (std::ptrdiff_t row = 0; row < h; ++row)
        prefix[row + 1] = prefix[row] + horizontal.at(row, col, ch);
      for (std::ptrdiff_t row = 0; row < h; ++row) {
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, row - r);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(h - 1, row + r);
        out.at(row, col, ch) = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
      }
    }
  }
  return out;
}

/// Blurs the input before delegating, so high-frequency perturbations are
/// largely filtered out.
class LowpassOracle final : public Oracle {
 public:
  LowpassOracle(OraclePtr inner, std::size_t radius) : inner_(std::move(inner)), radius_(radius) {
    if (!inner_) throw ContractViolation("lowpass oracle needs an inner oracle");
  }

  ImageShape shape() const override { return inner_->shape(); }
  LabelSet classify(const ImageTensor& x) const override {
    require_same_shape(shape(), x.shape());
    return inner_->classify(box_blur(x, radius_));
  }
  bool concurrency_safe() const override { return inner_->concurrency_safe(); }
  std::size_t radius() const noexcept { return radius_; }

 private:
  OraclePtr inner_;
  std::size_t radius_;
};

/// Axis-aligned pixel rectangle, all channels.
struct Region {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  bool contains(std::size_t r, std::size_t c) const noexcept {
    return r >= row && r < row + rows && c >= col && c < col + cols;
  }
};

/// Zeroes everything outside the region before delegating.
class RegionOracle final : public Oracle {
 public:
  RegionOracle(OraclePtr inner, Region region) : inner_(std::move(inner)), region_(region) {
    if (!inner_) throw ContractViolation("region oracle needs an inner oracle");
    const ImageShape s = inner_->shape();
    if (region_.rows == 0 || region_.cols == 0 || region_.row + region_.rows > s.height ||
        region_.col + region_.cols > s.width)
      throw ContractViolation("region does not fit inside " + s.str());
  }

  ImageShape shape() const override { return inner_->shape(); }
  LabelSet classify(const ImageTensor& x) const override {
    require_same_shape(shape(), x.shape());
    return inner_->classify(masked(x));
  }
  bool concurrency_safe() const override { return inner_->concurrency_safe(); }

  ImageTensor masked(const ImageTensor& x) const {
    ImageTensor out = x;
    const ImageShape& s = x.shape();
    for (std::size_t r = 0; r < s.height; ++r)
      for (std::size_t c = 0; c < s.width; ++c)
        if (!region_.contains(r, c))
          for (std::size_t ch = 0; ch < s.channels; ++ch) out.at(r, c, ch) = 0.0;
    return out;
  }
  const Region& region() const noexcept { return region_; }

 private:
  OraclePtr inner_;
  Region region_;
};

/// Forwards to another oracle and counts evaluations independently of any
/// ledger; used to audit accounting.
class CountingOracle final : public Oracle {
 public:
  explicit CountingOracle(OraclePtr inner) : inner_(std::move(inner)) {}
  ImageShape shape() const override { return inner_->shape(); }
  LabelSet classify(const ImageTensor& x) const override {
    ++calls_;
    return inner_->classify(x);
  }
  bool concurrency_safe() const override { return false; }
  std::size_t calls() const noexcept { return calls_; }

 private:
  OraclePtr inner_;
  mutable std::size_t calls_ = 0;
};

inline OraclePtr linear_oracle(PerturbationVector weights, double bias) {
  return std::make_shared<LinearOracle>(std::move(weights), bias);
}
inline OraclePtr lowpass_oracle(OraclePtr inner, std::size_t radius) {
  return std::make_shared<LowpassOracle>(std::move(inner), radius);
}
inline OraclePtr region_oracle(OraclePtr inner, Region region) {
  return std::make_shared<RegionOracle>(std::move(inner), region);
}

}  // namespace bba
