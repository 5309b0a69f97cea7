#pragma once

#include <cstddef>
#include <cstdlib>
#include <string>
#include <vector>

#include "b4/error.hpp"
#include "b4/ingest.hpp"

namespace b4 {

/// Temporal neighbourhood that counts as momentum-consistent.
struct MomentumSpan {
  enum class Kind { None, Forward, Backward, Symmetric };
  Kind kind = Kind::None;
  std::size_t k = 0;

  static MomentumSpan none() { return {}; }
  static MomentumSpan forward(std::size_t k) { return k ? MomentumSpan{Kind::Forward, k} : none(); }
  static MomentumSpan backward(std::size_t k) { return k ? MomentumSpan{Kind::Backward, k} : none(); }
  static MomentumSpan symmetric(std::size_t k) { return k ? MomentumSpan{Kind::Symmetric, k} : none(); }

  /// Whether j lies in the window around anchor i (the anchor itself never does).
  bool contains(std::size_t i, std::size_t j) const {
    switch (kind) {
      case Kind::None: return false;
      case Kind::Forward: return j > i && j - i <= k;
      case Kind::Backward: return j < i && i - j <= k;
      case Kind::Symmetric: return j != i && (j > i ? j - i : i - j) <= k;
    }
    return false;
  }

  /// "0", "1", "-2", "+-1" (also accepts "±1").
  std::string label() const {
    switch (kind) {
      case Kind::None: return "0";
      case Kind::Forward: return std::to_string(k);
      case Kind::Backward: return "-" + std::to_string(k);
      case Kind::Symmetric: return "+-" + std::to_string(k);
    }
    return "0";
  }

  static MomentumSpan parse(const std::string& text) {
    auto number = [&](const std::string& s) -> std::size_t {
      if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError("training.span: cannot parse '" + text + "'");
      }
      return static_cast<std::size_t>(std::stoul(s));
    };
    if (text.rfind("+-", 0) == 0) return symmetric(number(text.substr(2)));
    if (text.rfind("\xC2\xB1", 0) == 0) return symmetric(number(text.substr(2)));
    if (text.rfind('-', 0) == 0) return backward(number(text.substr(1)));
    if (text.rfind('+', 0) == 0) return forward(number(text.substr(1)));
    return forward(number(text));
  }

  friend bool operator==(const MomentumSpan&, const MomentumSpan&) = default;
};

/// The seven spans searched by default: −2, −1, 0, 1, 2, ±1, ±2.
inline std::vector<MomentumSpan> default_span_grid() {
  return {MomentumSpan::backward(2), MomentumSpan::backward(1), MomentumSpan::none(),      MomentumSpan::forward(1),
          MomentumSpan::forward(2),  MomentumSpan::symmetric(1), MomentumSpan::symmetric(2)};
}

struct AnchorPairs {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;

  /// A_i = P_i ∪ N_i, positives first.
  std::vector<std::size_t> all() const {
    std::vector<std::size_t> a(positives);
    a.insert(a.end(), negatives.begin(), negatives.end());
    return a;
  }
};

/// Per-anchor positive/negative sets for the anchors of one scope.
/// Indices are relative to the start of the scope.
struct PairSets {
  std::vector<AnchorPairs> anchors;

  std::size_t size() const { return anchors.size(); }
  const AnchorPairs& operator[](std::size_t i) const { return anchors[i]; }
};

/// P_i: same-label neighbours inside the span window. N_i: every other scope
/// member except i. With include_self the anchor joins its own P_i.
inline PairSets inertial_pairs(const std::vector<Trend>& labels, const MomentumSpan& span, bool include_self = false) {
  PairSets sets;
  const std::size_t n = labels.size();
  sets.anchors.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    AnchorPairs& a = sets.anchors[i];
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        if (include_self) a.positives.push_back(i);
        continue;
      }
      if (span.contains(i, j) && labels[j] == labels[i]) {
        a.positives.push_back(j);
      } else {
        a.negatives.push_back(j);
      }
    }
  }
  return sets;
}

}  // namespace b4
