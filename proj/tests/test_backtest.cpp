#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "b4/b4.hpp"
#include "support/oracles.hpp"

using namespace b4;
using Catch::Approx;

namespace {

Date day0() { return Date{std::chrono::year{2022} / 1 / 3}; }

std::vector<PriceBar> bars_from(const std::vector<double>& closes) {
  std::vector<PriceBar> bars;
  Date d = day0();
  for (double c : closes) {
    bars.push_back(PriceBar{d, c, c, c, c, std::nullopt});
    d += std::chrono::days{1};
  }
  return bars;
}

std::vector<double> random_closes(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 0.02);
  std::vector<double> c{100.0};
  while (c.size() < n) c.push_back(c.back() * std::exp(g(rng)));
  return c;
}

std::vector<Signal> signals(const std::vector<PriceBar>& bars, const std::vector<int>& pos) {
  std::vector<Signal> s;
  for (std::size_t i = 0; i < pos.size(); ++i) s.push_back({bars[i].date, pos[i]});
  return s;
}

EquityCurve curve_of(const std::vector<double>& values) {
  EquityCurve c;
  Date d = day0();
  for (double v : values) {
    c.dates.push_back(d);
    c.values.push_back(v);
    d += std::chrono::days{1};
  }
  return c;
}

}  // namespace

TEST_CASE("predict_direction compares the two logits", "[backtest]") {
  MarketHeads tie{{1, 2}, {0.5, 0.5}, {0.5, 0.5}};
  CHECK(predict_direction(tie) == 0);
  CHECK(predict_direction(tie, TradeMode::LongShort) == 0);
  MarketHeads bull{{1, 0}, {1, 0}, {0, 1}};
  CHECK(predict_direction(bull) == 1);
  MarketHeads bear{{0, 1}, {1, 0}, {0, 1}};
  CHECK(predict_direction(bear) == 0);
  CHECK(predict_direction(bear, TradeMode::LongShort) == -1);
  std::mt19937_64 rng(31);
  for (int k = 0; k < 100; ++k) {
    MarketHeads h{testing::random_vector(5, rng), testing::random_vector(5, rng), testing::random_vector(5, rng)};
    const long double diff = testing::ldot(h.bu, h.mar) - testing::ldot(h.be, h.mar);
    CHECK(predict_direction(h, TradeMode::LongShort) == (diff > 0 ? 1 : diff < 0 ? -1 : 0));
    CHECK(predict_direction(h) == (diff > 0 ? 1 : 0));
  }
  MarketHeads bad{{NAN, 0}, {1, 0}, {0, 1}};
  CHECK_THROWS_AS(predict_direction(bad), NumericError);
}

TEST_CASE("run_backtest equity identities", "[backtest]") {
  std::mt19937_64 rng(32);
  const auto closes = random_closes(40, rng);
  const auto bars = bars_from(closes);
  SECTION("all flat") {
    const auto c = run_backtest(signals(bars, std::vector<int>(40, 0)), bars, TradeMode::LongFlat);
    REQUIRE(c.size() == 40);
    for (double v : c.values) CHECK(v == 1.0);
  }
  SECTION("always long") {
    const auto c = run_backtest(signals(bars, std::vector<int>(40, 1)), bars, TradeMode::LongFlat);
    for (std::size_t t = 0; t < c.size(); ++t) CHECK(c.values[t] == Approx(closes[t] / closes[0]).epsilon(1e-13));
    const auto m = compute_metrics(c);
    CHECK(m.cumulative_returns == Approx(closes.back() / closes.front() - 1.0).margin(1e-13));
  }
  SECTION("alternating against a product oracle") {
    std::vector<int> pos;
    for (int i = 0; i < 40; ++i) pos.push_back(i % 3 == 0 ? 0 : 1);
    const auto c = run_backtest(signals(bars, pos), bars, TradeMode::LongFlat);
    long double v = 1.0L;
    for (std::size_t t = 0; t + 1 < 40; ++t) {
      v *= 1.0L + pos[t] * (static_cast<long double>(closes[t + 1]) / closes[t] - 1.0L);
      CHECK(std::fabs(c.values[t + 1] - static_cast<double>(v)) < 1e-12);
    }
  }
  SECTION("long-short mirror") {
    std::vector<int> pos;
    for (int i = 0; i < 40; ++i) pos.push_back(rng() % 2 ? 1 : -1);
    std::vector<int> neg;
    for (int p : pos) neg.push_back(-p);
    const auto a = run_backtest(signals(bars, pos), bars, TradeMode::LongShort);
    const auto b = run_backtest(signals(bars, neg), bars, TradeMode::LongShort);
    for (std::size_t t = 0; t + 1 < a.size(); ++t) {
      const double r = closes[t + 1] / closes[t] - 1.0;
      const double ga = a.values[t + 1] / a.values[t], gb = b.values[t + 1] / b.values[t];
      CHECK(ga * gb == Approx(1.0 - r * r).epsilon(1e-12));
    }
  }
  SECTION("signal on the last bar is ignored") {
    const auto c = run_backtest(signals(bars, std::vector<int>(40, 1)), bars, TradeMode::LongFlat);
    CHECK(c.dates.back() == bars.back().date);
    CHECK(c.positions.back() == 0);
  }
}

TEST_CASE("run_backtest rejects misaligned signals", "[backtest]") {
  const auto bars = bars_from({10, 11, 12, 13});
  CHECK_THROWS_AS(run_backtest({}, bars, TradeMode::LongFlat), DataError);
  CHECK_THROWS_AS(run_backtest({{day0() + std::chrono::days{30}, 1}}, bars, TradeMode::LongFlat), DataError);
  CHECK_THROWS_AS(run_backtest({{bars[0].date, -1}}, bars, TradeMode::LongFlat), DataError);
  CHECK_THROWS_AS(run_backtest({{bars[0].date, 1}, {bars[2].date, 1}}, bars, TradeMode::LongFlat), DataError);
  CHECK_THROWS_AS(run_backtest({{bars[0].date, 2}}, bars, TradeMode::LongShort), DataError);
}

TEST_CASE("drawdown conventions", "[backtest]") {
  const std::vector<double> v{1.00, 1.20, 0.90, 1.10};
  CHECK(max_drawdown_standard(v) == Approx(0.25).epsilon(1e-14));
  CHECK(max_drawdown_peak_valley(v) == Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(compute_metrics(curve_of(v), MetricConvention::PeakValley).max_drawdown == Approx(1.0 / 3.0).epsilon(1e-14));

  std::mt19937_64 rng(33);
  std::normal_distribution<double> g(0.0, 0.05);
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> curve{1.0};
    const std::size_t n = 2 + rng() % 60;
    while (curve.size() < n) curve.push_back(curve.back() * std::exp(g(rng)));
    CHECK(std::fabs(max_drawdown_standard(curve) - testing::all_pairs_drawdown(curve)) < 1e-12);
  }
}

TEST_CASE("metrics and the calmar ratio", "[backtest]") {
  REQUIRE(calmar(0.270, 0.063));
  CHECK(*calmar(0.270, 0.063) == Approx(4.290).epsilon(0.005));
  CHECK(*calmar(0.388, 0.023) == Approx(16.932).epsilon(0.005));
  CHECK_FALSE(calmar(0.1, 0.0));

  const auto up = compute_metrics(curve_of({1.0, 1.1, 1.2, 1.3}));
  CHECK(up.max_drawdown == 0.0);
  CHECK_FALSE(up.calmar_ratio);

  std::mt19937_64 rng(34);
  for (int k = 0; k < 50; ++k) {
    auto bars = bars_from(random_closes(30, rng));
    const auto c = run_backtest(signals(bars, std::vector<int>(30, 1)), bars, TradeMode::LongFlat);
    for (auto conv : {MetricConvention::Standard, MetricConvention::PeakValley}) {
      const auto m = compute_metrics(c, conv);
      CHECK(m.max_drawdown >= 0.0);
      if (m.max_drawdown > 0.0) {
        REQUIRE(m.calmar_ratio);
        CHECK(std::fabs(*m.calmar_ratio * m.max_drawdown - m.annual_return) < 1e-12);
      }
    }
  }
}

TEST_CASE("annual return conventions", "[backtest]") {
  EquityCurve c;
  c.dates = {day0(), day0() + std::chrono::days{730}};
  c.values = {1.0, 1.21};
  const auto standard = compute_metrics(c);
  CHECK(standard.annual_return == Approx(0.1).epsilon(1e-12));
  CHECK(standard.cumulative_returns == Approx(0.21).epsilon(1e-12));
  PeakValleyInputs in;
  in.total_return = 1.44;
  in.sub_periods = 1.0;
  in.years = 2.0;
  CHECK(compute_metrics(c, MetricConvention::PeakValley, in).annual_return == Approx(0.2).epsilon(1e-12));
  CHECK(compute_metrics(c, MetricConvention::PeakValley).annual_return == Approx(0.1).epsilon(1e-12));
  in.sub_periods = 0.0;
  CHECK_THROWS_AS(compute_metrics(c, MetricConvention::PeakValley, in), ConfigError);
}

TEST_CASE("compute_metrics validates the curve", "[backtest]") {
  CHECK_THROWS_AS(compute_metrics(curve_of({1.0})), InsufficientDataError);
  CHECK_THROWS_AS(compute_metrics(curve_of({1.0, -0.5})), DataError);
  EquityCurve c = curve_of({1.0, 1.1});
  c.dates[1] = c.dates[0];
  CHECK_THROWS_AS(compute_metrics(c), DataError);
}

TEST_CASE("signals_for fills skipped days with flat positions", "[backtest]") {
  const auto bars = bars_from({10, 11, 12, 13, 14, 15});
  std::vector<AlignedSample> samples(3);
  samples[0].day = 1;
  samples[1].day = 2;
  samples[2].day = 4;
  const auto s = signals_for(samples, {1, 1, 1}, bars);
  REQUIRE(s.size() == 4);
  CHECK(s[2].position == 0);
  CHECK(s[3].date == bars[4].date);
  CHECK(directional_accuracy({1, 0, 1}, {Trend::Bullish, Trend::Bullish, Trend::Bearish}) == Approx(1.0 / 3.0));
  CHECK_THROWS_AS(signals_for(samples, {1, 1}, bars), DimensionError);
}
