#pragma once

// Mini-batch training over contiguous temporal blocks, evaluation on a split
// and the α × Δ grid search.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "b4/adam.hpp"
#include "b4/backtest.hpp"
#include "b4/loss.hpp"
#include "b4/model.hpp"
#include "b4/pairing.hpp"

namespace b4 {

struct TrainingConfig {
  LossConfig loss;
  AdamConfig adam;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;

  void validate() const {
    loss.validate();
    if (!(adam.learning_rate >= 0.0) || !std::isfinite(adam.learning_rate)) {
      throw ConfigError("training.learning_rate must be finite and >= 0");
    }
    if (adam.learning_rate > 0.0) Adam::validate(adam);
  }
};

/// Contiguous [begin, end) blocks of at most `batch_size` samples, in order.
inline std::vector<std::pair<std::size_t, std::size_t>> temporal_batches(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("training.batch_size must be >= 1");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size) out.emplace_back(b, std::min(n, b + batch_size));
  return out;
}

/// Owns the optimizer state for one model; a learning rate of 0 freezes it.
class Trainer {
 public:
  Trainer(B4Model& model, TrainingConfig cfg) : model_(model), cfg_(std::move(cfg)), adam_(frozen_safe(cfg_.adam)) {
    cfg_.validate();
  }

  const TrainingConfig& config() const noexcept { return cfg_; }
  std::size_t epochs_run() const noexcept { return epochs_run_; }

  /// Loss stack on one batch, with gradients accumulated into the parameters.
  LossBreakdown batch_step(const std::vector<AlignedSample>& batch, std::size_t batch_index) {
    if (batch.empty()) throw DataError("training batch " + std::to_string(batch_index) + " is empty");
    LossBreakdown out;
    try {
      Tape tape;
      const B4Model::Bound bound = model_.bind(tape);
      std::vector<HeadVars> heads;
      std::vector<Trend> labels;
      heads.reserve(batch.size());
      for (const AlignedSample& s : batch) {
        heads.push_back(model_.forward(bound, s).heads);
        labels.push_back(s.label);
      }
      const PairSets pairs = inertial_pairs(labels, cfg_.loss.span, cfg_.loss.include_self);
      LossVars loss = batch_losses(heads, labels, pairs, cfg_.loss);
      out.comp = loss.comp.value()[0];
      out.mar = loss.mar.value()[0];
      out.ce = loss.ce.value()[0];
      out.total = loss.total.value()[0];
      for (std::size_t i = 0; i < batch.size(); ++i) {
        out.h_cm.push_back(loss.logits.value().at(i, i));
        out.h_um.push_back(loss.up.value()[i]);
        out.h_em.push_back(loss.down.value()[i]);
      }
      if (!std::isfinite(out.total)) throw NumericError("non-finite loss");
      model_.params().zero_grad();
      tape.backward(loss.total);
    } catch (const NumericError& e) {
      throw TrainingError("training diverged at batch " + std::to_string(batch_index) + ": " + e.what());
    }
    return out;
  }

  /// One pass over `data` in temporal order; returns the per-batch losses.
  std::vector<LossBreakdown> train_epoch(const std::vector<AlignedSample>& data) {
    if (data.empty()) throw DataError("training data is empty");
    std::vector<LossBreakdown> losses;
    std::size_t index = 0;
    for (const auto& [begin, end] : temporal_batches(data.size(), cfg_.loss.batch_size)) {
      const std::vector<AlignedSample> batch(data.begin() + static_cast<std::ptrdiff_t>(begin),
                                             data.begin() + static_cast<std::ptrdiff_t>(end));
      losses.push_back(batch_step(batch, index++));
      if (cfg_.adam.learning_rate > 0.0) adam_.step(model_.params());
    }
    ++epochs_run_;
    return losses;
  }

  /// All configured epochs; losses are concatenated epoch after epoch.
  std::vector<LossBreakdown> fit(const std::vector<AlignedSample>& data) {
    std::vector<LossBreakdown> all;
    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
      auto losses = train_epoch(data);
      all.insert(all.end(), std::make_move_iterator(losses.begin()), std::make_move_iterator(losses.end()));
    }
    return all;
  }

 private:
  static AdamConfig frozen_safe(AdamConfig c) {
    if (!(c.learning_rate > 0.0)) c.learning_rate = 1.0;  // never stepped
    return c;
  }

  B4Model& model_;
  TrainingConfig cfg_;
  Adam adam_;
  std::size_t epochs_run_ = 0;
};

/// Signals for the samples, one per trading day from the first sample to the
/// last; days without a sample (dropped ties) are held flat.
inline std::vector<Signal> signals_for(const std::vector<AlignedSample>& samples, const std::vector<int>& positions,
                                       const std::vector<PriceBar>& bars) {
  if (samples.size() != positions.size() || samples.empty()) throw DimensionError("signals_for: length mismatch");
  std::vector<Signal> out;
  std::size_t k = 0;
  for (std::size_t day = samples.front().day; day <= samples.back().day; ++day) {
    if (day >= bars.size()) throw DataError("sample day outside the price series");
    int position = 0;
    if (k < samples.size() && samples[k].day == day) position = positions[k++];
    out.push_back({bars[day].date, position});
  }
  if (k != samples.size()) throw DataError("samples are not in trading-day order");
  return out;
}

struct Evaluation {
  std::vector<int> positions;
  EquityCurve curve;
  Metrics metrics;
  double accuracy = 0.0;
};

/// Predicts every sample, backtests the resulting signals and scores them.
inline Evaluation evaluate(const B4Model& model, const std::vector<AlignedSample>& samples, const std::vector<PriceBar>& bars,
                           TradeMode mode = TradeMode::LongFlat, MetricConvention convention = MetricConvention::Standard,
                           const PeakValleyInputs& literal = {}) {
  if (samples.empty()) throw DataError("evaluation split is empty");
  Evaluation ev;
  std::vector<Trend> labels;
  for (const auto& inf : model.infer(samples)) ev.positions.push_back(predict_direction(inf.heads, mode));
  for (const AlignedSample& s : samples) labels.push_back(s.label);
  ev.accuracy = directional_accuracy(ev.positions, labels);
  ev.curve = run_backtest(signals_for(samples, ev.positions, bars), bars, mode);
  ev.metrics = compute_metrics(ev.curve, convention, literal);
  return ev;
}

/// Buy-and-hold over the same days as `samples`.
inline Metrics always_long_metrics(const std::vector<AlignedSample>& samples, const std::vector<PriceBar>& bars,
                                   MetricConvention convention = MetricConvention::Standard) {
  const std::vector<int> longs(samples.size(), 1);
  return compute_metrics(run_backtest(signals_for(samples, longs, bars), bars, TradeMode::LongFlat), convention);
}

struct GridResult {
  double alpha = 0.0;
  MomentumSpan span;
  Metrics validation;
  double validation_accuracy = 0.0;
  std::optional<Metrics> test;
  double test_accuracy = 0.0;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
  std::size_t rank = 0;  ///< 0 = best by validation cumulative return
  bool best() const { return rank == 0; }
};

struct GridData {
  const std::vector<AlignedSample>* train = nullptr;
  const std::vector<AlignedSample>* validate = nullptr;
  const std::vector<AlignedSample>* test = nullptr;  ///< optional hold-out
  const std::vector<PriceBar>* bars = nullptr;
};

/// Trains a fresh model per candidate and ranks by validation cumulative
/// return (ties keep candidate order). Results stay in candidate order.
inline std::vector<GridResult> rank_configurations(const std::vector<TrainingConfig>& candidates, const ModelConfig& model_cfg,
                                                   const GridData& data, TradeMode mode = TradeMode::LongFlat,
                                                   MetricConvention convention = MetricConvention::Standard) {
  if (candidates.empty()) throw ConfigError("grid: no configurations to run");
  if (!data.train || !data.validate || !data.bars) throw ConfigError("grid: train, validation and bars are required");
  std::vector<GridResult> results;
  for (const TrainingConfig& cfg : candidates) {
    B4Model model(model_cfg, cfg.seed);
    Trainer trainer(model, cfg);
    const auto losses = trainer.fit(*data.train);
    GridResult r;
    r.alpha = cfg.loss.alpha;
    r.span = cfg.loss.span;
    r.seed = cfg.seed;
    r.final_loss = losses.empty() ? NAN : losses.back().total;
    const Evaluation val = evaluate(model, *data.validate, *data.bars, mode, convention);
    r.validation = val.metrics;
    r.validation_accuracy = val.accuracy;
    if (data.test && !data.test->empty()) {
      const Evaluation test = evaluate(model, *data.test, *data.bars, mode, convention);
      r.test = test.metrics;
      r.test_accuracy = test.accuracy;
    }
    results.push_back(r);
  }
  std::vector<std::size_t> order(results.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return results[a].validation.cumulative_returns > results[b].validation.cumulative_returns;
  });
  for (std::size_t k = 0; k < order.size(); ++k) results[order[k]].rank = k;
  return results;
}

inline std::vector<double> default_alpha_grid() { return {0.1, 0.3, 0.5, 0.7, 0.9}; }

/// Every (α, Δ) combination over `base`, α-major.
inline std::vector<GridResult> grid_search(const std::vector<double>& alphas, const std::vector<MomentumSpan>& spans,
                                           const TrainingConfig& base, const ModelConfig& model_cfg, const GridData& data,
                                           TradeMode mode = TradeMode::LongFlat,
                                           MetricConvention convention = MetricConvention::Standard) {
  if (alphas.empty()) throw ConfigError("grid.alphas is empty");
  if (spans.empty()) throw ConfigError("grid.spans is empty");
  std::vector<TrainingConfig> candidates;
  for (double a : alphas) {
    for (const MomentumSpan& s : spans) {
      TrainingConfig c = base;
      c.loss.alpha = a;
      c.loss.span = s;
      c.validate();
      candidates.push_back(c);
    }
  }
  return rank_configurations(candidates, model_cfg, data, mode, convention);
}

/// Index of the best-ranked result.
inline std::size_t best_index(const std::vector<GridResult>& results) {
  for (std::size_t i = 0; i < results.size(); ++i)
    if (results[i].best()) return i;
  throw InternalError("grid: no best result");
}

}  // namespace b4
