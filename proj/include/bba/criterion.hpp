#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "bba/errors.hpp"

namespace bba {

struct Label {
  std::string name;
  int rank = 1;

  friend bool operator==(const Label&, const Label&) = default;
};

/// Ranked labels as returned by a classifier, best first.
class LabelSet {
 public:
  explicit LabelSet(std::vector<Label> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) throw ContractViolation("label set must not be empty");
    int previous = 0;
    for (const auto& l : labels_) {
      if (l.rank <= previous) throw ContractViolation("label ranks must increase strictly from 1");
      previous = l.rank;
    }
    if (labels_.front().rank != 1) throw ContractViolation("label ranks must start at 1");
  }

  static LabelSet single(std::string name) { return LabelSet({Label{std::move(name), 1}}); }

  const std::string& top1() const noexcept { return labels_.front().name; }
  const std::vector<Label>& labels() const noexcept { return labels_; }

  friend bool operator==(const LabelSet&, const LabelSet&) = default;

 private:
  std::vector<Label> labels_;
};

/// A boolean function of the classifier's label output.
class AdversarialCriterion {
 public:
  enum class Kind { kExactTarget, kLabelInSet, kSubstringMatch, kAllOf, kAnyOf };

  /// top1 == target
  static AdversarialCriterion exact_target(std::string target) {
    AdversarialCriterion c(Kind::kExactTarget);
    c.strings_.push_back(std::move(target));
    return c;
  }

  /// top1 is one of `allowed`
  static AdversarialCriterion label_in_set(std::vector<std::string> allowed) {
    AdversarialCriterion c(Kind::kLabelInSet);
    c.strings_ = std::move(allowed);
    return c;
  }

  /// `required` occurs in top1 and no `forbidden` string occurs in any label.
  /// An empty `required` leaves only the exclusion list.
  static AdversarialCriterion substring_match(std::string required, std::vector<std::string> forbidden = {}) {
    AdversarialCriterion c(Kind::kSubstringMatch);
    c.strings_.push_back(std::move(required));
    c.forbidden_ = std::move(forbidden);
    return c;
  }

  static AdversarialCriterion all_of(std::vector<AdversarialCriterion> children) {
    AdversarialCriterion c(Kind::kAllOf);
    c.children_ = std::move(children);
    return c;
  }

  static AdversarialCriterion any_of(std::vector<AdversarialCriterion> children) {
    AdversarialCriterion c(Kind::kAnyOf);
    c.children_ = std::move(children);
    return c;
  }

  Kind kind() const noexcept { return kind_; }
  const std::vector<std::string>& strings() const noexcept { return strings_; }
  const std::vector<std::string>& forbidden() const noexcept { return forbidden_; }
  const std::vector<AdversarialCriterion>& children() const noexcept { return children_; }

  bool operator()(const LabelSet& labels) const {
    const std::string& top = labels.top1();
    switch (kind_) {
      case Kind::kExactTarget:
        return top == strings_.front();
      case Kind::kLabelInSet:
        return std::find(strings_.begin(), strings_.end(), top) != strings_.end();
      case Kind::kSubstringMatch: {
        if (top.find(strings_.front()) == std::string::npos) return false;
        for (const auto& label : labels.labels())
          for (const auto& bad : forbidden_)
            if (label.name.find(bad) != std::string::npos) return false;
        return true;
      }
      case Kind::kAllOf:
        return std::all_of(children_.begin(), children_.end(), [&](const auto& c) { return c(labels); });
      case Kind::kAnyOf:
        return std::any_of(children_.begin(), children_.end(), [&](const auto& c) { return c(labels); });
    }
    return false;
  }

 private:
  explicit AdversarialCriterion(Kind kind) : kind_(kind) {}

  Kind kind_;
  std::vector<std::string> strings_;
  std::vector<std::string> forbidden_;
  std::vector<AdversarialCriterion> children_;
};

inline bool is_adversarial(const AdversarialCriterion& criterion, const LabelSet& labels) {
  return criterion(labels);
}

/// Parses the compact command-line form:
///   exact:<label> | in:<a>,<b>,... | substring:<req>[!<forbidden>,...]
/// Criteria joined with '&' are combined with AND, with '|' with OR
/// (AND binds tighter).
inline AdversarialCriterion parse_criterion(const std::string& text) {
  auto split = [](const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = s.find(sep, start);
      parts.push_back(s.substr(start, pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    return parts;
  };
  auto leaf = [&](const std::string& s) -> AdversarialCriterion {
    const std::size_t colon = s.find(':');
    if (colon == std::string::npos) throw ConfigError("criterion '" + s + "' lacks a kind prefix");
    const std::string kind = s.substr(0, colon);
    const std::string body = s.substr(colon + 1);
    if (kind == "exact") {
      if (body.empty()) throw ConfigError("exact criterion needs a label");
      return AdversarialCriterion::exact_target(body);
    }
    if (kind == "in") return AdversarialCriterion::label_in_set(split(body, ','));
    if (kind == "substring") {
      const std::size_t bang = body.find('!');
      if (bang == std::string::npos) return AdversarialCriterion::substring_match(body);
      return AdversarialCriterion::substring_match(body.substr(0, bang), split(body.substr(bang + 1), ','));
    }
    throw ConfigError("unknown criterion kind '" + kind + "'");
  };
  std::vector<AdversarialCriterion> alternatives;
  for (const auto& alt : split(text, '|')) {
    std::vector<AdversarialCriterion> terms;
    for (const auto& term : split(alt, '&')) terms.push_back(leaf(term));
    alternatives.push_back(terms.size() == 1 ? std::move(terms.front())
                                             : AdversarialCriterion::all_of(std::move(terms)));
  }
  return alternatives.size() == 1 ? std::move(alternatives.front())
                                  : AdversarialCriterion::any_of(std::move(alternatives));
}

}  // namespace bba
