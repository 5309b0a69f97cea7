#pragma once

// Dual-competition contrastive losses, the two-class cross-entropy and the
// weighted total. Every loss has a tape-free evaluator working on logits (the
// seam used by property tests) and a differentiable tape op that shares it.

#include <algorithm>
#include <cmath>
#include <vector>

#include "b4/autodiff.hpp"
#include "b4/model.hpp"
#include "b4/pairing.hpp"

namespace b4 {

struct LossConfig {
  double alpha = 0.5;
  double temperature = 0.1;
  std::size_t batch_size = 32;
  MomentumSpan span = MomentumSpan::symmetric(1);
  bool include_self = false;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("training.alpha must be in [0,1]");
    if (!(temperature > 0.0)) throw ConfigError("training.temperature must be > 0");
    if (batch_size == 0) throw ConfigError("training.batch_size must be >= 1");
  }
};

struct LossBreakdown {
  double comp = 0.0;
  double mar = 0.0;
  double ce = 0.0;
  double total = 0.0;
  /// Per-sample diagonal logits h*_Comp,i·h_Mar,i, h_BU,i·h_Mar,i, h_BE,i·h_Mar,i.
  std::vector<double> h_cm;
  std::vector<double> h_um;
  std::vector<double> h_em;
};

/// Which index of logits[a][i] = h*_Comp,a · h_Mar,i plays the anchor.
enum class ContrastOrientation {
  Competition,  ///< anchor i is the column: logits[p][i] against logits[a][i]
  Market,       ///< anchor i is the row:    logits[i][p] against logits[i][a]
};

inline double total_loss(double comp, double mar, double ce, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0,1]");
  return alpha * (comp + mar) + (1.0 - alpha) * ce;
}

inline double total_loss(const LossBreakdown& parts, double alpha) { return total_loss(parts.comp, parts.mar, parts.ce, alpha); }

namespace detail {

inline double logit_at(const Tensor& logits, std::size_t anchor, std::size_t other, ContrastOrientation o) {
  return o == ContrastOrientation::Competition ? logits.at(other, anchor) : logits.at(anchor, other);
}

inline std::size_t contributing_anchors(const PairSets& pairs) {
  return static_cast<std::size_t>(
      std::count_if(pairs.anchors.begin(), pairs.anchors.end(), [](const AnchorPairs& a) { return !a.positives.empty(); }));
}

}  // namespace detail

/// Σ over anchors with nonempty P_i of mean_p −log softmax_{A_i}(logit/τ)[p],
/// divided by the number of such anchors. Zero when no anchor has a positive.
inline double contrastive_from_logits(const Tensor& logits, const PairSets& pairs, double temperature,
                                      ContrastOrientation orientation) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (logits.rows() != pairs.size() || logits.cols() != pairs.size()) throw DimensionError("contrastive: logits must be N×N");
  const std::size_t contributing = detail::contributing_anchors(pairs);
  if (contributing == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const AnchorPairs& ap = pairs[i];
    if (ap.positives.empty()) continue;
    double mx = -INFINITY;
    for (std::size_t a : ap.all()) mx = std::max(mx, detail::logit_at(logits, i, a, orientation) / temperature);
    double z = 0.0;
    for (std::size_t a : ap.all()) z += std::exp(detail::logit_at(logits, i, a, orientation) / temperature - mx);
    const double lse = mx + std::log(z);
    double anchor_loss = 0.0;
    for (std::size_t p : ap.positives) anchor_loss += lse - detail::logit_at(logits, i, p, orientation) / temperature;
    total += anchor_loss / static_cast<double>(ap.positives.size());
  }
  return total / static_cast<double>(contributing);
}

/// −(1/N) Σ log softmax(up_i, down_i)[label_i].
inline double two_class_ce_from_logits(const std::vector<double>& up, const std::vector<double>& down,
                                       const std::vector<Trend>& labels) {
  if (up.size() != labels.size() || down.size() != labels.size() || labels.empty()) {
    throw DimensionError("cross-entropy: logits/labels length mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double mx = std::max(up[i], down[i]);
    const double lse = mx + std::log(std::exp(up[i] - mx) + std::exp(down[i] - mx));
    total += lse - (labels[i] == Trend::Bullish ? up[i] : down[i]);
  }
  return total / static_cast<double>(labels.size());
}

/// Row of h_Comp matching the label: [UP] for bullish, [DOWN] for bearish.
inline const std::vector<double>& label_selected_comp(const MarketHeads& h, Trend y) {
  return y == Trend::Bullish ? h.bu : h.be;
}

/// logits[a][i] = h*_Comp,a · h_Mar,i.
inline Tensor competition_logits(const std::vector<MarketHeads>& heads, const std::vector<Trend>& labels) {
  if (heads.size() != labels.size() || heads.empty()) throw DimensionError("heads/labels length mismatch");
  const std::size_t n = heads.size();
  Tensor s({n, n});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t i = 0; i < n; ++i) s.at(a, i) = dot(label_selected_comp(heads[a], labels[a]), heads[i].mar);
  return s;
}

inline double loss_comp(const std::vector<MarketHeads>& heads, const std::vector<Trend>& labels, const PairSets& pairs,
                        double temperature) {
  return contrastive_from_logits(competition_logits(heads, labels), pairs, temperature, ContrastOrientation::Competition);
}

inline double loss_mar(const std::vector<MarketHeads>& heads, const std::vector<Trend>& labels, const PairSets& pairs,
                       double temperature) {
  return contrastive_from_logits(competition_logits(heads, labels), pairs, temperature, ContrastOrientation::Market);
}

inline double loss_ce(const std::vector<MarketHeads>& heads, const std::vector<Trend>& labels) {
  if (heads.size() != labels.size()) throw DimensionError("heads/labels length mismatch");
  std::vector<double> up;
  std::vector<double> down;
  for (const MarketHeads& h : heads) {
    up.push_back(dot(h.bu, h.mar));
    down.push_back(dot(h.be, h.mar));
  }
  return two_class_ce_from_logits(up, down, labels);
}

inline LossBreakdown compute_losses(const std::vector<MarketHeads>& heads, const std::vector<Trend>& labels,
                                    const PairSets& pairs, const LossConfig& cfg) {
  cfg.validate();
  LossBreakdown out;
  const Tensor s = competition_logits(heads, labels);
  out.comp = contrastive_from_logits(s, pairs, cfg.temperature, ContrastOrientation::Competition);
  out.mar = contrastive_from_logits(s, pairs, cfg.temperature, ContrastOrientation::Market);
  for (std::size_t i = 0; i < heads.size(); ++i) {
    out.h_cm.push_back(s.at(i, i));
    out.h_um.push_back(dot(heads[i].bu, heads[i].mar));
    out.h_em.push_back(dot(heads[i].be, heads[i].mar));
  }
  out.ce = two_class_ce_from_logits(out.h_um, out.h_em, labels);
  out.total = total_loss(out.comp, out.mar, out.ce, cfg.alpha);
  return out;
}

namespace ad {

/// Differentiable contrastive_from_logits.
inline Var contrastive_loss(const Var& logits, PairSets pairs, double temperature, ContrastOrientation orientation) {
  const double value = contrastive_from_logits(logits.value(), pairs, temperature, orientation);
  return detail::tape_of(logits).record(
      Tensor({1, 1}, std::vector<double>{value}), {logits},
      [logits, pairs = std::move(pairs), temperature, orientation](Tape& t, const Tensor& g) {
        Tensor* gl = t.grad_buffer(logits);
        if (!gl) return;
        const std::size_t contributing = b4::detail::contributing_anchors(pairs);
        if (contributing == 0) return;
        const Tensor& s = logits.value();
        const double outer = g[0] / (static_cast<double>(contributing) * temperature);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          const AnchorPairs& ap = pairs[i];
          if (ap.positives.empty()) continue;
          const auto members = ap.all();
          double mx = -INFINITY;
          for (std::size_t a : members) mx = std::max(mx, b4::detail::logit_at(s, i, a, orientation) / temperature);
          double z = 0.0;
          std::vector<double> w(members.size());
          for (std::size_t k = 0; k < members.size(); ++k) {
            w[k] = std::exp(b4::detail::logit_at(s, i, members[k], orientation) / temperature - mx);
            z += w[k];
          }
          const double inv_pos = 1.0 / static_cast<double>(ap.positives.size());
          for (std::size_t k = 0; k < members.size(); ++k) {
            double coeff = w[k] / z;
            if (k < ap.positives.size()) coeff -= inv_pos;
            const std::size_t a = members[k];
            double& cell = orientation == ContrastOrientation::Competition ? gl->at(a, i) : gl->at(i, a);
            cell += outer * coeff;
          }
        }
      },
      "contrastive_loss");
}

/// Differentiable two_class_ce_from_logits on [N,1] logit columns.
inline Var two_class_ce(const Var& up, const Var& down, std::vector<Trend> labels) {
  auto column = [](const Var& v) { return std::vector<double>(v.value().data().begin(), v.value().data().end()); };
  const double value = two_class_ce_from_logits(column(up), column(down), labels);
  return detail::tape_of(up).record(
      Tensor({1, 1}, std::vector<double>{value}), {up, down},
      [up, down, labels = std::move(labels)](Tape& t, const Tensor& g) {
        Tensor* gu = t.grad_buffer(up);
        Tensor* gd = t.grad_buffer(down);
        const double scale_by = g[0] / static_cast<double>(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
          const double u = up.value()[i];
          const double d = down.value()[i];
          const double mx = std::max(u, d);
          const double pu = std::exp(u - mx) / (std::exp(u - mx) + std::exp(d - mx));
          const double yu = labels[i] == Trend::Bullish ? 1.0 : 0.0;
          if (gu) (*gu)[i] += scale_by * (pu - yu);
          if (gd) (*gd)[i] += scale_by * ((1.0 - pu) - (1.0 - yu));
        }
      },
      "two_class_ce");
}

}  // namespace ad

struct LossVars {
  Var comp;
  Var mar;
  Var ce;
  Var total;
  Var logits;  ///< N×N, logits[a][i] = h*_Comp,a · h_Mar,i
  Var up;      ///< N×1
  Var down;    ///< N×1
};

/// Full loss stack on the tape for one batch of heads.
inline LossVars batch_losses(const std::vector<HeadVars>& heads, const std::vector<Trend>& labels, const PairSets& pairs,
                             const LossConfig& cfg) {
  cfg.validate();
  if (heads.size() != labels.size() || heads.empty()) throw DimensionError("batch_losses: heads/labels mismatch");
  if (pairs.size() != labels.size()) throw DimensionError("batch_losses: pair sets do not match the batch");
  std::vector<Var> mar;
  std::vector<Var> star;
  std::vector<Var> bu;
  std::vector<Var> be;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    mar.push_back(heads[i].mar);
    star.push_back(labels[i] == Trend::Bullish ? heads[i].bu : heads[i].be);
    bu.push_back(heads[i].bu);
    be.push_back(heads[i].be);
  }
  Var market = ad::concat_rows(mar);
  LossVars out;
  out.logits = ad::matmul_nt(ad::concat_rows(star), market);
  out.comp = ad::contrastive_loss(out.logits, pairs, cfg.temperature, ContrastOrientation::Competition);
  out.mar = ad::contrastive_loss(out.logits, pairs, cfg.temperature, ContrastOrientation::Market);
  out.up = ad::row_dot(ad::concat_rows(bu), market);
  out.down = ad::row_dot(ad::concat_rows(be), market);
  out.ce = ad::two_class_ce(out.up, out.down, labels);
  out.total = ad::weighted_sum({out.comp, out.mar, out.ce}, {cfg.alpha, cfg.alpha, 1.0 - cfg.alpha});
  return out;
}

}  // namespace b4
