#pragma once

// Independent reference implementations used by the unit and acceptance
// suites: direct-formula losses, brute-force pair sets, the all-pairs
// drawdown scan and a finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "b4/b4.hpp"

namespace b4::testing {

// ---------------------------------------------------------------------------
// Pairing

/// Window membership written out case by case from the span definition.
inline bool in_window(const MomentumSpan& s, long i, long j) {
  const long k = static_cast<long>(s.k);
  switch (s.kind) {
    case MomentumSpan::Kind::None: return false;
    case MomentumSpan::Kind::Forward: return i < j && j <= i + k;
    case MomentumSpan::Kind::Backward: return i - k <= j && j < i;
    case MomentumSpan::Kind::Symmetric: return i - k <= j && j <= i + k && j != i;
  }
  return false;
}

struct BruteSets {
  std::set<std::size_t> positives;
  std::set<std::size_t> negatives;
};

inline std::vector<BruteSets> brute_force_pairs(const std::vector<Trend>& y, const MomentumSpan& span) {
  std::vector<BruteSets> out(y.size());
  for (long i = 0; i < static_cast<long>(y.size()); ++i) {
    for (long j = 0; j < static_cast<long>(y.size()); ++j) {
      if (j == i) continue;
      const bool pos = in_window(span, i, j) && y[static_cast<std::size_t>(j)] == y[static_cast<std::size_t>(i)];
      (pos ? out[static_cast<std::size_t>(i)].positives : out[static_cast<std::size_t>(i)].negatives)
          .insert(static_cast<std::size_t>(j));
    }
  }
  return out;
}

inline bool same_sets(const PairSets& got, const std::vector<BruteSets>& want) {
  if (got.size() != want.size()) return false;
  for (std::size_t i = 0; i < want.size(); ++i) {
    const std::set<std::size_t> p(got[i].positives.begin(), got[i].positives.end());
    const std::set<std::size_t> n(got[i].negatives.begin(), got[i].negatives.end());
    if (p.size() != got[i].positives.size() || n.size() != got[i].negatives.size()) return false;
    if (p != want[i].positives || n != want[i].negatives) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Losses

inline std::vector<double> random_vector(std::size_t d, std::mt19937_64& rng, double sd = 0.5) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(d);
  for (double& x : v) x = g(rng);
  return v;
}

inline std::vector<MarketHeads> random_heads(std::size_t n, std::size_t d, std::mt19937_64& rng, double sd = 0.5) {
  std::vector<MarketHeads> h;
  for (std::size_t i = 0; i < n; ++i) h.push_back({random_vector(d, rng, sd), random_vector(d, rng, sd), random_vector(d, rng, sd)});
  return h;
}

inline std::vector<Trend> random_labels(std::size_t n, std::mt19937_64& rng) {
  std::vector<Trend> y;
  for (std::size_t i = 0; i < n; ++i) y.push_back(rng() % 2 ? Trend::Bullish : Trend::Bearish);
  return y;
}

inline long double ldot(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return s;
}

inline const std::vector<double>& star(const MarketHeads& h, Trend y) { return y == Trend::Bullish ? h.bu : h.be; }

/// Competition direction: anchor i's market vector scored against every
/// candidate's label-selected competition vector.
inline double direct_loss_comp(const std::vector<MarketHeads>& h, const std::vector<Trend>& y, const PairSets& pairs, double tau) {
  long double total = 0;
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (pairs[i].positives.empty()) continue;
    ++anchors;
    long double denom = 0;
    for (std::size_t a : pairs[i].all()) denom += std::exp(ldot(star(h[a], y[a]), h[i].mar) / tau);
    long double anchor = 0;
    for (std::size_t p : pairs[i].positives) anchor += -std::log(std::exp(ldot(star(h[p], y[p]), h[i].mar) / tau) / denom);
    total += anchor / pairs[i].positives.size();
  }
  return anchors ? static_cast<double>(total / anchors) : 0.0;
}

/// Market direction: anchor i's competition vector scored against every
/// candidate's market vector.
inline double direct_loss_mar(const std::vector<MarketHeads>& h, const std::vector<Trend>& y, const PairSets& pairs, double tau) {
  long double total = 0;
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (pairs[i].positives.empty()) continue;
    ++anchors;
    long double denom = 0;
    for (std::size_t a : pairs[i].all()) denom += std::exp(ldot(star(h[i], y[i]), h[a].mar) / tau);
    long double anchor = 0;
    for (std::size_t p : pairs[i].positives) anchor += -std::log(std::exp(ldot(star(h[i], y[i]), h[p].mar) / tau) / denom);
    total += anchor / pairs[i].positives.size();
  }
  return anchors ? static_cast<double>(total / anchors) : 0.0;
}

inline double direct_loss_ce(const std::vector<MarketHeads>& h, const std::vector<Trend>& y) {
  long double total = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const long double up = std::exp(ldot(h[i].bu, h[i].mar));
    const long double down = std::exp(ldot(h[i].be, h[i].mar));
    total += -std::log((y[i] == Trend::Bullish ? up : down) / (up + down));
  }
  return static_cast<double>(total / h.size());
}

// ---------------------------------------------------------------------------
// Backtest

inline double all_pairs_drawdown(const std::vector<double>& v) {
  double worst = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i; j < v.size(); ++j) worst = std::max(worst, (v[i] - v[j]) / v[i]);
  return worst;
}

// ---------------------------------------------------------------------------
// Analytics

/// Random panel: each (stock, window, topic) cell present with probability
/// 0.7, bull and bear drawn independently; occasional exact zeros.
inline AttentionPanel random_panel(const std::vector<std::string>& stocks, std::size_t windows, std::size_t topics,
                                   std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AttentionPanel panel;
  for (const auto& s : stocks) {
    for (std::size_t w = 0; w < windows; ++w) {
      for (std::size_t z = 0; z < topics; ++z) {
        if (u(rng) > 0.7) continue;
        const std::string topic = "Z" + std::to_string(z + 1);
        panel.set(s, w, topic, Perspective::Bull, u(rng) < 0.05 ? 0.0 : 10.0 * u(rng));
        panel.set(s, w, topic, Perspective::Bear, u(rng) < 0.05 ? 0.0 : 10.0 * u(rng));
      }
    }
  }
  return panel;
}

/// Largest |Σ_{z'} AM(s,τ→τ',z→z') − AS(s,τ,z)| over transitions with positive destination mass.
inline double conservation_gap(const AttentionPanel& panel, const MigrationMatrix& m,
                               const std::vector<std::pair<std::size_t, std::size_t>>& transitions) {
  double worst = 0.0;
  for (const std::string& s : panel.stocks()) {
    for (Perspective p : {Perspective::Bull, Perspective::Bear}) {
      for (const auto& [from, to] : transitions) {
        double mass = 0.0;
        for (const auto& z2 : panel.topics(s, to, p)) mass += panel.value_or_zero(s, to, z2, p);
        if (!(mass > 0.0)) continue;
        for (const auto& z : panel.topics(s, from, p)) {
          double flow = 0.0;
          for (const auto& z2 : panel.topics(s, to, p)) flow += m.am.at({s, from, to, z, z2, p});
          worst = std::max(worst, std::fabs(flow - panel.value_or_zero(s, from, z, p)));
        }
      }
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Finite differences

inline double relative_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
}

/// Small model for gradient checks.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.width = 8;
  c.key_width = 4;
  c.prototypes = 4;
  c.layers = 2;
  c.max_tokens = 12;
  c.vocab_size = 64;
  c.lookback = 3;
  c.ffn_width = 12;
  c.init_std = 0.3;
  return c;
}

/// L_Total of one batch without touching gradients.
inline double batch_total(B4Model& model, const std::vector<AlignedSample>& batch, const LossConfig& cfg) {
  Tape tape;
  const auto bound = model.bind(tape);
  std::vector<HeadVars> heads;
  std::vector<Trend> labels;
  for (const auto& s : batch) {
    heads.push_back(model.forward(bound, s).heads);
    labels.push_back(s.label);
  }
  const PairSets pairs = inertial_pairs(labels, cfg.span, cfg.include_self);
  return batch_losses(heads, labels, pairs, cfg).total.value()[0];
}

struct GradCheckReport {
  std::size_t checked = 0;
  double worst = 0.0;
  std::string worst_at;
  std::set<std::string> parameters;
};

/// Compares tape gradients of L_Total with central differences on `per_param`
/// random coordinates of every parameter (token-table rows drawn from ids
/// actually used by the batch, plus one arbitrary row).
inline GradCheckReport gradcheck_batch(B4Model& model, const std::vector<AlignedSample>& batch, const LossConfig& cfg,
                                       std::mt19937_64& rng, std::size_t per_param = 3, double step = 1e-5) {
  TrainingConfig tc;
  tc.loss = cfg;
  tc.adam.learning_rate = 0.0;
  Trainer trainer(model, tc);
  trainer.batch_step(batch, 0);

  std::vector<std::size_t> used;
  for (const auto& s : batch) {
    const auto seq = tokenize_augment(s.news, model.vocabulary(), model.config().max_tokens, model.config().layout);
    used.insert(used.end(), seq.ids.begin(), seq.ids.end());
  }

  GradCheckReport rep;
  for (Parameter& p : model.params().all()) {
    rep.parameters.insert(p.name);
    const Tensor analytic = p.grad;
    for (std::size_t c = 0; c < per_param; ++c) {
      std::size_t idx = rng() % p.value.size();
      if (p.name == "token_embedding" && c + 1 < per_param) {
        idx = used[rng() % used.size()] * p.value.cols() + rng() % p.value.cols();
      }
      const double saved = p.value[idx];
      p.value[idx] = saved + step;
      const double plus = batch_total(model, batch, cfg);
      p.value[idx] = saved - step;
      const double minus = batch_total(model, batch, cfg);
      p.value[idx] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double err = relative_error(analytic[idx], numeric);
      ++rep.checked;
      if (err > rep.worst) {
        rep.worst = err;
        rep.worst_at = p.name + "[" + std::to_string(idx) + "] analytic " + std::to_string(analytic[idx]) + " numeric " +
                       std::to_string(numeric);
      }
    }
  }
  return rep;
}

/// Random samples for the tiny model: short headlines over a small word list.
inline std::vector<AlignedSample> random_batch(std::size_t n, const ModelConfig& cfg, std::mt19937_64& rng) {
  static const std::vector<std::string> words = {"rise", "fall", "profit", "loss", "merger", "probe", "dividend", "recall"};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<AlignedSample> out;
  Date day{std::chrono::year{2021} / 3 / 1};
  for (std::size_t i = 0; i < n; ++i) {
    AlignedSample s;
    s.index = i;
    s.day = i;
    s.date = day + std::chrono::days{i};
    Tensor w({cfg.lookback, 4});
    double close = 50.0 + 10.0 * u(rng);
    for (std::size_t r = 0; r < cfg.lookback; ++r) {
      close *= 1.0 + 0.04 * (u(rng) - 0.5);
      w.at(r, 0) = close * (1.0 + 0.01 * (u(rng) - 0.5));
      w.at(r, 1) = close;
      w.at(r, 2) = close * 0.99;
      w.at(r, 3) = close * 1.01;
    }
    s.window = PriceWindow{s.date, std::move(w)};
    const std::size_t docs = rng() % 3;  // some days carry no news
    for (std::size_t d = 0; d < docs; ++d) {
      std::string text;
      const std::size_t len = 1 + rng() % 4;
      for (std::size_t k = 0; k < len; ++k) text += (k ? " " : "") + words[rng() % words.size()];
      s.news.push_back(NewsDoc{s.date, "TST", text, {"Z1"}});
    }
    s.label = u(rng) < 0.5 ? Trend::Bullish : Trend::Bearish;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace b4::testing
