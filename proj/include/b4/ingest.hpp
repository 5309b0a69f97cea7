#pragma once

// Price and news ingestion, trend labelling, look-back windows and the
// chronological train/test split.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "b4/error.hpp"
#include "b4/tensor.hpp"

namespace b4 {

using Date = std::chrono::sys_days;

inline std::optional<Date> parse_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  auto num = [&](std::size_t pos, std::size_t len, auto& out) {
    auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, out);
    return ec == std::errc{} && p == s.data() + pos + len;
  };
  if (!num(0, 4, y) || !num(5, 2, m) || !num(8, 2, d)) return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return Date{ymd};
}

inline std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

struct PriceBar {
  Date date;
  double open = 0.0;
  double high = 0.0;
  double low = 0.0;
  double close = 0.0;
  std::optional<double> volume;
};

struct NewsDoc {
  Date date;
  std::string stock;
  std::string text;
  std::vector<std::string> topics;
};

enum class Trend : int { Bearish = 0, Bullish = 1 };

inline int as_int(Trend t) { return static_cast<int>(t); }

/// How equal consecutive closes are labelled.
enum class TieRule { Bearish, Drop };

/// δ×4 look-back matrix; columns are open, close, low, high.
struct PriceWindow {
  Date end_date;
  Tensor matrix;

  std::size_t length() const { return matrix.rows(); }
};

struct AlignedSample {
  std::size_t index = 0;  ///< position in the sample sequence, 0..N-1
  std::size_t day = 0;    ///< trading-day index t into the bar series
  Date date;
  PriceWindow window;
  std::vector<NewsDoc> news;
  Trend label = Trend::Bearish;
};

struct DatasetSplit {
  std::vector<AlignedSample> train;
  std::vector<AlignedSample> test;
  double ratio = 0.7;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

}  // namespace detail

/// Reads `date,open,high,low,close[,volume]`. Bars come back sorted by date.
inline std::vector<PriceBar> load_prices(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  const std::string source = path.string();
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(source, 1, "missing header");
  ++lineno;
  const std::string_view header = detail::trim(line);
  bool has_volume = false;
  if (header == "date,open,high,low,close,volume") {
    has_volume = true;
  } else if (header != "date,open,high,low,close") {
    throw ParseError(source, lineno, "expected header date,open,high,low,close[,volume]");
  }
  std::vector<PriceBar> bars;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != (has_volume ? 6u : 5u)) {
      throw ParseError(source, lineno, "expected " + std::to_string(has_volume ? 6 : 5) + " fields, got " +
                                           std::to_string(fields.size()));
    }
    PriceBar bar;
    auto date = parse_date(fields[0]);
    if (!date) throw ParseError(source, lineno, "bad date '" + std::string(fields[0]) + "'");
    bar.date = *date;
    double* slots[4] = {&bar.open, &bar.high, &bar.low, &bar.close};
    static constexpr const char* kNames[4] = {"open", "high", "low", "close"};
    for (int k = 0; k < 4; ++k) {
      auto v = detail::parse_double(fields[1 + k]);
      if (!v) throw ParseError(source, lineno, std::string("bad ") + kNames[k] + " value '" + std::string(fields[1 + k]) + "'");
      *slots[k] = *v;
    }
    if (has_volume && !fields[5].empty()) {
      auto v = detail::parse_double(fields[5]);
      if (!v) throw ParseError(source, lineno, "bad volume value");
      bar.volume = *v;
    }
    const std::string when = format_date(bar.date);
    if (bar.open <= 0 || bar.high <= 0 || bar.low <= 0 || bar.close <= 0) {
      throw DataError(source + ": non-positive price on " + when);
    }
    if (!(bar.low <= std::min(bar.open, bar.close) && std::max(bar.open, bar.close) <= bar.high)) {
      throw DataError(source + ": OHLC ordering violated on " + when);
    }
    bars.push_back(bar);
  }
  std::stable_sort(bars.begin(), bars.end(), [](const PriceBar& a, const PriceBar& b) { return a.date < b.date; });
  for (std::size_t i = 1; i < bars.size(); ++i) {
    if (bars[i].date == bars[i - 1].date) throw DataError(source + ": duplicate bar for " + format_date(bars[i].date));
  }
  return bars;
}

/// Declared topic ids; empty means "accept any".
using TopicUniverse = std::set<std::string>;

/// News documents with a (stock, date) index.
class NewsCorpus {
 public:
  NewsCorpus() = default;
  explicit NewsCorpus(std::vector<NewsDoc> docs) : docs_(std::move(docs)) { reindex(); }

  const std::vector<NewsDoc>& docs() const noexcept { return docs_; }

  std::vector<NewsDoc> for_day(const std::string& stock, Date date) const {
    std::vector<NewsDoc> out;
    auto it = index_.find({stock, date});
    if (it == index_.end()) return out;
    for (std::size_t i : it->second) out.push_back(docs_[i]);
    return out;
  }

  std::map<std::string, std::size_t> count_by_stock() const {
    std::map<std::string, std::size_t> counts;
    for (const NewsDoc& d : docs_) ++counts[d.stock];
    return counts;
  }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < docs_.size(); ++i) index_[{docs_[i].stock, docs_[i].date}].push_back(i);
  }

  std::vector<NewsDoc> docs_;
  std::map<std::pair<std::string, Date>, std::vector<std::size_t>> index_;
};

/// Reads JSONL records with keys date, stock, text, topics.
inline NewsCorpus load_news(const std::filesystem::path& path, const TopicUniverse& universe = {}) {
  auto in = detail::open_input(path);
  const std::string source = path.string();
  std::vector<NewsDoc> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(source, lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(source, lineno, "expected a JSON object");
    for (const char* key : {"date", "stock", "text", "topics"}) {
      if (!obj.contains(key)) throw ParseError(source, lineno, std::string("missing key \"") + key + "\"");
    }
    if (!obj["date"].is_string() || !obj["stock"].is_string() || !obj["text"].is_string() || !obj["topics"].is_array()) {
      throw ParseError(source, lineno, "wrong value type (date/stock/text are strings, topics an array)");
    }
    NewsDoc doc;
    auto date = parse_date(obj["date"].get<std::string>());
    if (!date) throw ParseError(source, lineno, "bad date");
    doc.date = *date;
    doc.stock = obj["stock"].get<std::string>();
    doc.text = obj["text"].get<std::string>();
    if (doc.text.empty()) throw DataError(source + ":" + std::to_string(lineno) + ": empty text");
    for (const auto& t : obj["topics"]) {
      if (!t.is_string()) throw ParseError(source, lineno, "topic ids must be strings");
      std::string topic = t.get<std::string>();
      if (!universe.empty() && !universe.count(topic)) {
        throw DataError(source + ":" + std::to_string(lineno) + ": unknown topic id " + topic);
      }
      doc.topics.push_back(std::move(topic));
    }
    docs.push_back(std::move(doc));
  }
  return NewsCorpus(std::move(docs));
}

/// Reads a `topic,explanation` table into a topic universe.
inline TopicUniverse load_topics(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::string line;
  std::size_t lineno = 0;
  TopicUniverse topics;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    if (fields.empty() || fields[0].empty()) throw ParseError(path.string(), lineno, "missing topic id");
    topics.emplace(fields[0]);
  }
  return topics;
}

/// Industry id → member stocks. Stock sets are disjoint.
class IndustryMap {
 public:
  void add(const std::string& industry, const std::string& stock) {
    auto [it, inserted] = industry_of_.emplace(stock, industry);
    if (!inserted && it->second != industry) {
      throw DataError("stock " + stock + " mapped to both " + it->second + " and " + industry);
    }
    members_[industry].insert(stock);
  }

  std::optional<std::string> industry_of(const std::string& stock) const {
    auto it = industry_of_.find(stock);
    if (it == industry_of_.end()) return std::nullopt;
    return it->second;
  }

  const std::map<std::string, std::set<std::string>>& industries() const noexcept { return members_; }

 private:
  std::map<std::string, std::set<std::string>> members_;
  std::map<std::string, std::string> industry_of_;
};

inline IndustryMap load_industry_map(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line) || detail::trim(line) != "industry,stock") {
    throw ParseError(path.string(), 1, "expected header industry,stock");
  }
  ++lineno;
  IndustryMap map;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw ParseError(path.string(), lineno, "expected industry,stock");
    }
    map.add(std::string(fields[0]), std::string(fields[1]));
  }
  return map;
}

/// label[t] compares close[t+1] with close[t]; the last bar has no label.
/// Equal closes are bearish, or absent under TieRule::Drop.
inline std::vector<std::optional<Trend>> label_trends(const std::vector<PriceBar>& bars, TieRule ties = TieRule::Bearish) {
  if (bars.size() < 2) throw InsufficientDataError("trend labelling needs at least 2 bars, got " + std::to_string(bars.size()));
  std::vector<std::optional<Trend>> labels(bars.size() - 1);
  for (std::size_t t = 0; t + 1 < bars.size(); ++t) {
    const double now = bars[t].close;
    const double next = bars[t + 1].close;
    if (next > now) {
      labels[t] = Trend::Bullish;
    } else if (next < now || ties == TieRule::Bearish) {
      labels[t] = Trend::Bearish;
    }
  }
  return labels;
}

/// δ bars ending at day t as a δ×4 matrix (open, close, low, high).
inline PriceWindow make_window(const std::vector<PriceBar>& bars, std::size_t t, std::size_t lookback) {
  if (lookback == 0 || t + 1 < lookback || t >= bars.size()) throw InsufficientDataError("window out of range");
  Tensor m({lookback, 4});
  for (std::size_t r = 0; r < lookback; ++r) {
    const PriceBar& b = bars[t + 1 - lookback + r];
    m.at(r, 0) = b.open;
    m.at(r, 1) = b.close;
    m.at(r, 2) = b.low;
    m.at(r, 3) = b.high;
  }
  return PriceWindow{bars[t].date, std::move(m)};
}

/// One sample per labelled day t ≥ δ−1. Days without news keep an empty list.
inline std::vector<AlignedSample> build_samples(const std::vector<PriceBar>& bars, const NewsCorpus& news,
                                                const std::string& stock, std::size_t lookback,
                                                TieRule ties = TieRule::Bearish) {
  if (lookback < 1) throw ConfigError("model.lookback must be >= 1");
  if (bars.size() < lookback + 1) {
    throw InsufficientDataError("look-back " + std::to_string(lookback) + " needs at least " +
                                std::to_string(lookback + 1) + " bars, got " + std::to_string(bars.size()));
  }
  const auto labels = label_trends(bars, ties);
  std::vector<AlignedSample> samples;
  for (std::size_t t = lookback - 1; t < labels.size(); ++t) {
    if (!labels[t]) continue;
    AlignedSample s;
    s.index = samples.size();
    s.day = t;
    s.date = bars[t].date;
    s.window = make_window(bars, t, lookback);
    s.news = news.for_day(stock, bars[t].date);
    s.label = *labels[t];
    samples.push_back(std::move(s));
  }
  return samples;
}

/// First floor(ratio·N) samples train, the rest test. No shuffling.
inline DatasetSplit split_chronological(std::vector<AlignedSample> samples, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must be in (0,1)");
  const auto cut = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(samples.size()) + 1e-9));
  if (cut == 0 || cut >= samples.size()) {
    throw ConfigError("split ratio " + std::to_string(ratio) + " leaves an empty side for " +
                      std::to_string(samples.size()) + " samples");
  }
  DatasetSplit split;
  split.ratio = ratio;
  split.test.assign(std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(cut)),
                    std::make_move_iterator(samples.end()));
  samples.resize(cut);
  split.train = std::move(samples);
  return split;
}

}  // namespace b4
