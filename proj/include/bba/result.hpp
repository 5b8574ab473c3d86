#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "bba/oracle.hpp"
#include "bba/tensor.hpp"

namespace bba {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct TracePoint {
  std::size_t query = 0;        // 1-based
  double best_distance = 0.0;   // best adversarial distance after this query (inf before the first)
  bool adversarial = false;     // verdict of this query
};

struct AttackResult {
  std::optional<ImageTensor> adversarial;  // best criterion-satisfying point, if any was found
  double distance = kInfinity;
  std::size_t queries = 0;
  std::size_t initialization_queries = 0;  // part of `queries`
  double threshold = kInfinity;
  bool success = false;  // distance <= threshold
  std::vector<TracePoint> trace;
};

/// Rebuilds the best-distance trace from a ledger. Only adversarial
/// queries that improve the running best count.
inline std::vector<TracePoint> best_distance_trace(const QueryLedger& ledger) {
  std::vector<TracePoint> out;
  out.reserve(ledger.trace().size());
  double best = kInfinity;
  for (const auto& rec : ledger.trace()) {
    if (rec.adversarial && rec.distance < best) best = rec.distance;
    out.push_back({rec.index, best, rec.adversarial});
  }
  return out;
}

/// First query index at which the trace is at or below `threshold`, if any.
inline std::optional<std::size_t> queries_to_threshold(const std::vector<TracePoint>& trace, double threshold) {
  for (const auto& p : trace)
    if (p.best_distance <= threshold) return p.query;
  return std::nullopt;
}

}  // namespace bba
