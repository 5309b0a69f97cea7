#pragma once

// Signals from market heads, close-to-close equity simulation and the four
// return/risk metrics.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "b4/error.hpp"
#include "b4/ingest.hpp"
#include "b4/model.hpp"

namespace b4 {

enum class TradeMode { LongFlat, LongShort };

/// Standard: compounded annualisation and peak-relative drawdown.
/// PeakValley: (R/n)^(1/t) − 1 and max(P_peak/P_valley − 1).
enum class MetricConvention { Standard, PeakValley };

inline std::string to_string(TradeMode m) { return m == TradeMode::LongFlat ? "long-flat" : "long-short"; }
inline std::string to_string(MetricConvention c) { return c == MetricConvention::Standard ? "standard" : "peak-valley"; }

inline TradeMode parse_trade_mode(const std::string& s) {
  if (s == "long-flat") return TradeMode::LongFlat;
  if (s == "long-short") return TradeMode::LongShort;
  throw ConfigError("backtest.mode must be long-flat or long-short, got '" + s + "'");
}

inline MetricConvention parse_convention(const std::string& s) {
  if (s == "standard") return MetricConvention::Standard;
  if (s == "peak-valley") return MetricConvention::PeakValley;
  throw ConfigError("backtest.convention must be standard or peak-valley, got '" + s + "'");
}

struct Signal {
  Date date;
  int position = 0;  ///< 1 long, 0 flat, −1 short
};

struct EquityCurve {
  std::vector<Date> dates;
  std::vector<double> values;
  std::vector<int> positions;  ///< position held from each date; 0 on the final point
  std::vector<double> closes;

  std::size_t size() const { return values.size(); }
};

struct Metrics {
  double cumulative_returns = 0.0;
  double annual_return = 0.0;
  double max_drawdown = 0.0;
  std::optional<double> calmar_ratio;
  MetricConvention convention = MetricConvention::Standard;
};

/// Explicit R, n, t for the peak-valley annual return. Unset fields default to
/// R = V_T/V_0, n = 1, t = calendar span in years.
struct PeakValleyInputs {
  std::optional<double> total_return;
  std::optional<double> sub_periods;
  std::optional<double> years;
};

/// Long when the bullish logit h_BU·h_Mar beats the bearish one; ties are flat.
inline int predict_direction(const MarketHeads& heads, TradeMode mode = TradeMode::LongFlat) {
  const double bull = dot(heads.bu, heads.mar);
  const double bear = dot(heads.be, heads.mar);
  if (!std::isfinite(bull) || !std::isfinite(bear)) throw NumericError("predict_direction: non-finite heads");
  if (bull > bear) return 1;
  if (bull < bear && mode == TradeMode::LongShort) return -1;
  return 0;
}

/// V_{t+1} = V_t · (1 + position_t · r_{t+1}), V_0 = 1. Signals must sit on
/// consecutive trading days; a signal on the final bar has no realised return
/// and is ignored.
inline EquityCurve run_backtest(const std::vector<Signal>& signals, const std::vector<PriceBar>& bars, TradeMode mode) {
  if (signals.empty()) throw DataError("backtest: no signals");
  std::map<Date, std::size_t> day_of;
  for (std::size_t i = 0; i < bars.size(); ++i) day_of.emplace(bars[i].date, i);
  std::vector<std::size_t> days;
  for (const Signal& s : signals) {
    auto it = day_of.find(s.date);
    if (it == day_of.end()) throw DataError("backtest: signal dated " + format_date(s.date) + " has no price bar");
    if (s.position < -1 || s.position > 1) throw DataError("backtest: position must be -1, 0 or 1");
    if (s.position == -1 && mode != TradeMode::LongShort) {
      throw DataError("backtest: short signal on " + format_date(s.date) + " outside long-short mode");
    }
    if (!days.empty() && it->second != days.back() + 1) {
      throw DataError("backtest: signals must cover consecutive trading days (gap before " + format_date(s.date) + ")");
    }
    days.push_back(it->second);
  }
  EquityCurve curve;
  double value = 1.0;
  curve.dates.push_back(bars[days.front()].date);
  curve.values.push_back(value);
  curve.closes.push_back(bars[days.front()].close);
  for (std::size_t k = 0; k < days.size(); ++k) {
    const std::size_t t = days[k];
    if (t + 1 >= bars.size()) break;
    const double r = bars[t + 1].close / bars[t].close - 1.0;
    value *= 1.0 + static_cast<double>(signals[k].position) * r;
    if (!(value > 0.0)) throw NumericError("backtest: portfolio value fell to zero or below");
    curve.positions.push_back(signals[k].position);
    curve.dates.push_back(bars[t + 1].date);
    curve.values.push_back(value);
    curve.closes.push_back(bars[t + 1].close);
  }
  curve.positions.push_back(0);
  return curve;
}

/// Largest fractional decline from a running peak, (peak − V)/peak.
inline double max_drawdown_standard(const std::vector<double>& values) {
  double peak = -INFINITY;
  double worst = 0.0;
  for (double v : values) {
    peak = std::max(peak, v);
    worst = std::max(worst, (peak - v) / peak);
  }
  return worst;
}

/// Largest peak/valley − 1 over valleys following their peak.
inline double max_drawdown_peak_valley(const std::vector<double>& values) {
  double peak = -INFINITY;
  double worst = 0.0;
  for (double v : values) {
    peak = std::max(peak, v);
    worst = std::max(worst, peak / v - 1.0);
  }
  return worst;
}

inline std::optional<double> calmar(double annual_return, double max_drawdown) {
  if (!(max_drawdown > 0.0)) return std::nullopt;
  return annual_return / max_drawdown;
}

inline Metrics compute_metrics(const EquityCurve& curve, MetricConvention convention = MetricConvention::Standard,
                               const PeakValleyInputs& literal = {}) {
  if (curve.size() < 2) throw InsufficientDataError("metrics need at least 2 curve points");
  for (std::size_t i = 1; i < curve.dates.size(); ++i) {
    if (!(curve.dates[i - 1] < curve.dates[i])) throw DataError("equity curve dates must be strictly increasing");
  }
  for (double v : curve.values) {
    if (!(v > 0.0) || !std::isfinite(v)) throw DataError("equity curve values must be positive and finite");
  }
  Metrics m;
  m.convention = convention;
  const double gross = curve.values.back() / curve.values.front();
  m.cumulative_returns = gross - 1.0;
  const double span_days = static_cast<double>((curve.dates.back() - curve.dates.front()).count());
  const double years = span_days / 365.0;
  if (convention == MetricConvention::Standard) {
    m.annual_return = std::pow(gross, 1.0 / years) - 1.0;
    m.max_drawdown = max_drawdown_standard(curve.values);
  } else {
    const double r = literal.total_return.value_or(gross);
    const double n = literal.sub_periods.value_or(1.0);
    const double t = literal.years.value_or(years);
    if (!(n > 0.0) || !(t > 0.0)) throw ConfigError("peak-valley annual return needs n > 0 and t > 0");
    m.annual_return = std::pow(r / n, 1.0 / t) - 1.0;
    m.max_drawdown = max_drawdown_peak_valley(curve.values);
  }
  m.calmar_ratio = calmar(m.annual_return, m.max_drawdown);
  return m;
}

/// Fraction of predictions whose direction (long vs not long) matches the label.
inline double directional_accuracy(const std::vector<int>& positions, const std::vector<Trend>& labels) {
  if (positions.size() != labels.size() || labels.empty()) throw DimensionError("accuracy: length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += (positions[i] > 0) == (labels[i] == Trend::Bullish);
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace b4
