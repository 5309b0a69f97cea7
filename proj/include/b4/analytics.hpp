#pragma once

// Attention and bias analytics over topic-tagged attention maps: attention
// scores per (stock, window, topic, perspective), industry aggregation, bias,
// attention/bias migration between windows and the industry propensities.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "b4/error.hpp"
#include "b4/ingest.hpp"
#include "b4/model.hpp"
#include "b4/tokenizer.hpp"

namespace b4 {

enum class Perspective { Bull, Bear };

inline const char* to_string(Perspective p) { return p == Perspective::Bull ? "bull" : "bear"; }

/// How one (window, topic) cell collapses the |A| values of its tokens.
enum class Aggregation { Mean, Sum };

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "mean") return Aggregation::Mean;
  if (s == "sum") return Aggregation::Sum;
  throw ConfigError("analytics.aggregation must be mean or sum, got '" + s + "'");
}

/// Inclusive calendar-date ranges; consecutive windows must abut.
struct WindowPartition {
  struct Range {
    Date first;
    Date last;
  };
  std::vector<Range> windows;

  void validate() const {
    if (windows.empty()) throw ConfigError("analytics: window partition is empty");
    for (std::size_t k = 0; k < windows.size(); ++k) {
      if (windows[k].last < windows[k].first) throw ConfigError("analytics: window " + std::to_string(k) + " ends before it starts");
      if (k > 0 && windows[k].first != windows[k - 1].last + std::chrono::days{1}) {
        throw ConfigError("analytics: gap or overlap between windows " + std::to_string(k - 1) + " and " + std::to_string(k));
      }
    }
  }

  std::optional<std::size_t> window_of(Date d) const {
    for (std::size_t k = 0; k < windows.size(); ++k)
      if (windows[k].first <= d && d <= windows[k].last) return k;
    return std::nullopt;
  }

  std::size_t size() const { return windows.size(); }
};

/// Splits [first, last] into `count` calendar spans of (near) equal length.
inline WindowPartition equal_partition(Date first, Date last, std::size_t count) {
  if (count == 0) throw ConfigError("analytics.windows must be >= 1");
  if (last < first) throw ConfigError("analytics: empty date range");
  const auto total = (last - first).count() + 1;
  if (static_cast<long long>(count) > total) throw ConfigError("analytics.windows exceeds the number of days in range");
  WindowPartition p;
  for (std::size_t k = 0; k < count; ++k) {
    const auto lo = static_cast<long long>(k) * total / static_cast<long long>(count);
    const auto hi = static_cast<long long>(k + 1) * total / static_cast<long long>(count) - 1;
    p.windows.push_back({first + std::chrono::days{lo}, first + std::chrono::days{hi}});
  }
  return p;
}

/// Attention maps of one sample with the data needed to attribute positions.
struct SampleAttention {
  Date date;
  TokenSequence tokens;
  std::vector<NewsDoc> news;
  AttentionMaps maps;
};

/// AS ≥ 0 keyed by (stock, window, topic, perspective).
class AttentionPanel {
 public:
  using Key = std::tuple<std::string, std::size_t, std::string, Perspective>;

  void set(const std::string& stock, std::size_t window, const std::string& topic, Perspective p, double as) {
    if (!(as >= 0.0) || !std::isfinite(as)) throw DataError("attention score must be finite and >= 0");
    entries_[{stock, window, topic, p}] = as;
  }

  std::optional<double> get(const std::string& stock, std::size_t window, const std::string& topic, Perspective p) const {
    auto it = entries_.find({stock, window, topic, p});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  double value_or_zero(const std::string& stock, std::size_t window, const std::string& topic, Perspective p) const {
    return get(stock, window, topic, p).value_or(0.0);
  }

  /// Z_τ for one stock and perspective.
  std::vector<std::string> topics(const std::string& stock, std::size_t window, Perspective p) const {
    std::vector<std::string> out;
    for (const auto& [key, v] : entries_) {
      const auto& [s, w, z, q] = key;
      if (s == stock && w == window && q == p) out.push_back(z);
    }
    return out;
  }

  std::set<std::string> stocks() const {
    std::set<std::string> out;
    for (const auto& [key, v] : entries_) out.insert(std::get<0>(key));
    return out;
  }

  std::set<std::size_t> windows(const std::string& stock) const {
    std::set<std::size_t> out;
    for (const auto& [key, v] : entries_)
      if (std::get<0>(key) == stock) out.insert(std::get<1>(key));
    return out;
  }

  std::set<std::string> all_topics() const {
    std::set<std::string> out;
    for (const auto& [key, v] : entries_) out.insert(std::get<2>(key));
    return out;
  }

  const std::map<Key, double>& entries() const noexcept { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  std::map<Key, double> entries_;
};

/// AS(s,τ,z,·) = 1000 · mean (or sum) of |A| over text positions whose source
/// document is tagged z, across the samples of window τ. Price rows and
/// special/padding tokens carry no topic.
inline AttentionPanel build_panel(const std::map<std::string, std::vector<SampleAttention>>& per_stock,
                                  const WindowPartition& windows, Aggregation mode = Aggregation::Mean) {
  windows.validate();
  AttentionPanel panel;
  for (const auto& [stock, samples] : per_stock) {
    // (window, topic) -> (sum |A_BU|, sum |A_BE|, count)
    std::map<std::pair<std::size_t, std::string>, std::tuple<double, double, std::size_t>> acc;
    for (const SampleAttention& s : samples) {
      auto w = windows.window_of(s.date);
      if (!w) throw ConfigError("analytics: sample dated " + format_date(s.date) + " falls outside every window");
      if (s.maps.bull.size() != s.maps.bear.size() || s.maps.bull.size() < s.tokens.length()) {
        throw DimensionError("analytics: attention map shorter than the token sequence");
      }
      for (std::size_t pos = 0; pos < s.tokens.length(); ++pos) {
        const int doc = s.tokens.source_doc[pos];
        if (doc < 0) continue;
        if (static_cast<std::size_t>(doc) >= s.news.size()) throw InternalError("token attributed to a missing document");
        for (const std::string& z : s.news[static_cast<std::size_t>(doc)].topics) {
          auto& [bull, bear, n] = acc[{*w, z}];
          bull += std::fabs(s.maps.bull[pos]);
          bear += std::fabs(s.maps.bear[pos]);
          ++n;
        }
      }
    }
    for (const auto& [cell, sums] : acc) {
      const auto& [bull, bear, n] = sums;
      const double denom = mode == Aggregation::Mean ? static_cast<double>(n) : 1.0;
      panel.set(stock, cell.first, cell.second, Perspective::Bull, 1000.0 * bull / denom);
      panel.set(stock, cell.first, cell.second, Perspective::Bear, 1000.0 * bear / denom);
    }
  }
  return panel;
}

/// IAS keyed by (industry, window, topic, perspective).
using IndustryScores = std::map<std::tuple<std::string, std::size_t, std::string, Perspective>, double>;

inline const std::string& industry_or_throw(const IndustryMap& map, const std::string& stock, std::string& scratch) {
  auto ind = map.industry_of(stock);
  if (!ind) throw DataError("stock " + stock + " is not covered by the industry map");
  scratch = *ind;
  return scratch;
}

/// IAS(I,τ,z) = Σ_{s∈I} AS(s,τ,z), per perspective.
inline IndustryScores industry_attention(const AttentionPanel& panel, const IndustryMap& map) {
  IndustryScores out;
  std::string scratch;
  for (const auto& [key, as] : panel.entries()) {
    const auto& [stock, w, z, p] = key;
    out[{industry_or_throw(map, stock, scratch), w, z, p}] += as;
  }
  return out;
}

struct BiasEntry {
  double bull = 0.0;
  double bear = 0.0;
  double bias = 0.0;  ///< bull − bear, signed
  double abs_bias() const { return std::fabs(bias); }
};

struct BiasScores {
  /// (stock, window, topic)
  std::map<std::tuple<std::string, std::size_t, std::string>, BiasEntry> stock;
  /// (industry, window, topic): IBias as Σ_s Bias
  std::map<std::tuple<std::string, std::size_t, std::string>, double> industry;
  /// (industry, window, topic): IBias as IAS_bull − IAS_bear
  std::map<std::tuple<std::string, std::size_t, std::string>, double> industry_via_ias;
};

inline constexpr double kIdentityTolerance = 1e-9;

/// Bias = AS_bull − AS_bear per cell; IBias computed both ways and checked equal.
inline BiasScores bias_scores(const AttentionPanel& panel, const IndustryMap& map) {
  BiasScores out;
  for (const auto& [key, as] : panel.entries()) {
    const auto& [stock, w, z, p] = key;
    const Perspective other = p == Perspective::Bull ? Perspective::Bear : Perspective::Bull;
    if (!panel.get(stock, w, z, other)) {
      throw DataError("bias: " + stock + " window " + std::to_string(w) + " topic " + z + " lacks the " +
                      to_string(other) + " entry");
    }
    BiasEntry& e = out.stock[{stock, w, z}];
    (p == Perspective::Bull ? e.bull : e.bear) = as;
    e.bias = e.bull - e.bear;
  }
  std::string scratch;
  for (const auto& [key, e] : out.stock) {
    const auto& [stock, w, z] = key;
    out.industry[{industry_or_throw(map, stock, scratch), w, z}] += e.bias;
  }
  const IndustryScores ias = industry_attention(panel, map);
  for (const auto& [key, v] : ias) {
    const auto& [ind, w, z, p] = key;
    out.industry_via_ias[{ind, w, z}] += p == Perspective::Bull ? v : -v;
  }
  for (const auto& [key, v] : out.industry) {
    const double other = out.industry_via_ias.at(key);
    if (std::fabs(v - other) > kIdentityTolerance * std::max(1.0, std::fabs(v))) {
      throw InternalError("IBias identity violated for industry " + std::get<0>(key));
    }
  }
  return out;
}

/// AM keyed by (stock, from window, to window, from topic, to topic, perspective).
struct MigrationMatrix {
  using Key = std::tuple<std::string, std::size_t, std::size_t, std::string, std::string, Perspective>;
  std::map<Key, double> am;
  /// Transitions whose destination window has no attention mass (AM set to 0).
  std::vector<std::tuple<std::string, std::size_t, std::size_t, Perspective>> zero_mass;

  /// BM = AM_bull − AM_bear; a missing side counts as 0.
  double bm(const std::string& s, std::size_t from, std::size_t to, const std::string& z, const std::string& z2) const {
    auto get = [&](Perspective p) {
      auto it = am.find({s, from, to, z, z2, p});
      return it == am.end() ? 0.0 : it->second;
    };
    return get(Perspective::Bull) - get(Perspective::Bear);
  }
};

/// Consecutive (τ, τ+1) pairs over `count` windows.
inline std::vector<std::pair<std::size_t, std::size_t>> consecutive_pairs(std::size_t count) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t k = 0; k + 1 < count; ++k) out.emplace_back(k, k + 1);
  return out;
}

/// Every (τ, τ') with τ < τ' over `count` windows.
inline std::vector<std::pair<std::size_t, std::size_t>> all_window_pairs(std::size_t count) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t a = 0; a < count; ++a)
    for (std::size_t b = a + 1; b < count; ++b) out.emplace_back(a, b);
  return out;
}

/// AM(s,τ→τ',z→z') = AS(s,τ,z) · AS(s,τ',z') / Σ_{z''∈Z_τ'} AS(s,τ',z'').
inline MigrationMatrix migration(const AttentionPanel& panel, const std::vector<std::pair<std::size_t, std::size_t>>& transitions) {
  MigrationMatrix out;
  for (const std::string& stock : panel.stocks()) {
    for (Perspective p : {Perspective::Bull, Perspective::Bear}) {
      for (const auto& [from, to] : transitions) {
        const auto sources = panel.topics(stock, from, p);
        const auto dests = panel.topics(stock, to, p);
        if (sources.empty() || dests.empty()) continue;
        double mass = 0.0;
        for (const std::string& z2 : dests) mass += *panel.get(stock, to, z2, p);
        if (!(mass > 0.0)) {
          out.zero_mass.emplace_back(stock, from, to, p);
          for (const std::string& z : sources)
            for (const std::string& z2 : dests) out.am[{stock, from, to, z, z2, p}] = 0.0;
          continue;
        }
        for (const std::string& z : sources) {
          const double src = *panel.get(stock, from, z, p);
          for (const std::string& z2 : dests) out.am[{stock, from, to, z, z2, p}] = src * *panel.get(stock, to, z2, p) / mass;
        }
      }
    }
  }
  return out;
}

struct IndustryMigration {
  /// (industry, destination topic, perspective)
  std::map<std::tuple<std::string, std::string, Perspective>, double> iam;
  std::map<std::tuple<std::string, std::string, Perspective>, std::optional<double>> amp;
  /// Propensity of the pooled bull+bear flow, keyed by (industry, topic).
  std::map<std::pair<std::string, std::string>, std::optional<double>> amp_pooled;
};

namespace detail {
template <class Key>
std::map<Key, std::optional<double>> normalize_rows(const std::map<Key, double>& values, bool absolute) {
  // Row = every key sharing the first tuple element (the industry) and, when
  // present, the trailing perspective.
  auto row_of = [](const Key& k) {
    if constexpr (std::tuple_size_v<Key> == 3) {
      return std::make_pair(std::get<0>(k), static_cast<int>(std::get<2>(k)));
    } else {
      return std::make_pair(std::get<0>(k), 0);
    }
  };
  std::map<std::pair<std::string, int>, double> totals;
  for (const auto& [k, v] : values) totals[row_of(k)] += absolute ? std::fabs(v) : v;
  std::map<Key, std::optional<double>> out;
  for (const auto& [k, v] : values) {
    const double t = totals[row_of(k)];
    out[k] = t != 0.0 ? std::optional<double>(v / t) : std::nullopt;
  }
  return out;
}
}  // namespace detail

/// IAM(I,z') = Σ_{s∈I} Σ_{τ→τ'} Σ_z AM; AMP = IAM / Σ_{z''} IAM (absent on an all-zero row).
inline IndustryMigration industry_migration(const MigrationMatrix& m, const IndustryMap& map) {
  IndustryMigration out;
  std::map<std::pair<std::string, std::string>, double> pooled;
  std::string scratch;
  for (const auto& [key, v] : m.am) {
    const auto& [stock, from, to, z, z2, p] = key;
    const std::string& ind = industry_or_throw(map, stock, scratch);
    out.iam[{ind, z2, p}] += v;
    pooled[{ind, z2}] += v;
  }
  out.amp = detail::normalize_rows(out.iam, false);
  out.amp_pooled = detail::normalize_rows(pooled, false);
  return out;
}

struct IndustryBiasMigration {
  std::map<std::pair<std::string, std::string>, double> ibm;
  std::map<std::pair<std::string, std::string>, std::optional<double>> bmp;
};

/// IBM(I,z') = Σ_{s∈I} Σ_{τ→τ'} Σ_z (AM_bull − AM_bear); BMP = IBM / Σ_{z''} |IBM|.
inline IndustryBiasMigration industry_bias_migration(const MigrationMatrix& m, const IndustryMap& map) {
  IndustryBiasMigration out;
  std::string scratch;
  for (const auto& [key, v] : m.am) {
    const auto& [stock, from, to, z, z2, p] = key;
    const std::string& ind = industry_or_throw(map, stock, scratch);
    out.ibm[{ind, z2}] += p == Perspective::Bull ? v : -v;
  }
  out.bmp = detail::normalize_rows(out.ibm, true);
  return out;
}

// ---------------------------------------------------------------------------
// Report files

/// Shortest text that round-trips the double exactly.
inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_optional(const std::optional<double>& v) { return v ? format_number(*v) : std::string{}; }

struct ReportPaths {
  std::filesystem::path attention_panel;
  std::filesystem::path bias;
  std::filesystem::path migration;
  std::filesystem::path industry_heatmap;
  std::filesystem::path industry_bias;
  std::filesystem::path industry_migration;

  std::vector<std::filesystem::path> all() const {
    return {attention_panel, bias, migration, industry_heatmap, industry_bias, industry_migration};
  }
};

namespace detail {
inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}
inline void close_checked(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) throw IoError("write failed for " + path.string());
}
}  // namespace detail

/// Writes the panel, bias, migration and industry tables as CSV under out_dir.
inline ReportPaths emit_reports(const AttentionPanel& panel, const IndustryMap& map, const std::filesystem::path& out_dir,
                                const std::vector<std::pair<std::size_t, std::size_t>>& transitions) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  ReportPaths paths{out_dir / "attention_panel.csv", out_dir / "bias.csv",          out_dir / "migration.csv",
                    out_dir / "industry_heatmap.csv", out_dir / "industry_bias.csv", out_dir / "industry_migration.csv"};

  const BiasScores bias = bias_scores(panel, map);
  const MigrationMatrix mig = migration(panel, transitions);
  const IndustryMigration iam = industry_migration(mig, map);
  const IndustryBiasMigration ibm = industry_bias_migration(mig, map);

  {
    auto out = detail::open_output(paths.attention_panel);
    out << "stock,window,topic,perspective,AS\n";
    for (const auto& [key, as] : panel.entries()) {
      const auto& [s, w, z, p] = key;
      out << s << ',' << w << ',' << z << ',' << to_string(p) << ',' << format_number(as) << '\n';
    }
    detail::close_checked(out, paths.attention_panel);
  }
  {
    auto out = detail::open_output(paths.bias);
    out << "stock,window,topic,AS_bull,AS_bear,bias,abs_bias\n";
    for (const auto& [key, e] : bias.stock) {
      const auto& [s, w, z] = key;
      out << s << ',' << w << ',' << z << ',' << format_number(e.bull) << ',' << format_number(e.bear) << ','
          << format_number(e.bias) << ',' << format_number(e.abs_bias()) << '\n';
    }
    detail::close_checked(out, paths.bias);
  }
  {
    auto out = detail::open_output(paths.migration);
    out << "stock,from_window,to_window,from_topic,to_topic,perspective,AM\n";
    for (const auto& [key, v] : mig.am) {
      const auto& [s, from, to, z, z2, p] = key;
      out << s << ',' << from << ',' << to << ',' << z << ',' << z2 << ',' << to_string(p) << ',' << format_number(v)
          << '\n';
    }
    detail::close_checked(out, paths.migration);
  }
  {
    // One row per (industry with panel stocks) × (topic present in the panel).
    std::set<std::string> industries;
    std::string scratch;
    for (const std::string& s : panel.stocks()) industries.insert(industry_or_throw(map, s, scratch));
    const std::set<std::string> topics = panel.all_topics();
    auto out = detail::open_output(paths.industry_heatmap);
    out << "industry,topic,AMP,BMP\n";
    for (const std::string& ind : industries) {
      bool has_flow = false;
      bool has_bias = false;
      for (const auto& [k, v] : iam.amp_pooled) has_flow = has_flow || (k.first == ind && v.has_value());
      for (const auto& [k, v] : ibm.bmp) has_bias = has_bias || (k.first == ind && v.has_value());
      for (const std::string& z : topics) {
        std::optional<double> amp;
        std::optional<double> bmp;
        if (auto it = iam.amp_pooled.find({ind, z}); it != iam.amp_pooled.end()) amp = it->second;
        else if (has_flow) amp = 0.0;
        if (auto it = ibm.bmp.find({ind, z}); it != ibm.bmp.end()) bmp = it->second;
        else if (has_bias) bmp = 0.0;
        out << ind << ',' << z << ',' << format_optional(amp) << ',' << format_optional(bmp) << '\n';
      }
    }
    detail::close_checked(out, paths.industry_heatmap);
  }
  {
    auto out = detail::open_output(paths.industry_bias);
    out << "industry,window,topic,IAS_bull,IAS_bear,IBias\n";
    const IndustryScores ias = industry_attention(panel, map);
    for (const auto& [key, v] : bias.industry) {
      const auto& [ind, w, z] = key;
      out << ind << ',' << w << ',' << z << ',' << format_number(ias.at({ind, w, z, Perspective::Bull})) << ','
          << format_number(ias.at({ind, w, z, Perspective::Bear})) << ',' << format_number(v) << '\n';
    }
    detail::close_checked(out, paths.industry_bias);
  }
  {
    auto out = detail::open_output(paths.industry_migration);
    out << "industry,topic,IAM_bull,IAM_bear,IBM\n";
    for (const auto& [key, v] : ibm.ibm) {
      const auto& [ind, z] = key;
      auto get = [&](Perspective p) {
        auto it = iam.iam.find({ind, z, p});
        return it == iam.iam.end() ? 0.0 : it->second;
      };
      out << ind << ',' << z << ',' << format_number(get(Perspective::Bull)) << ',' << format_number(get(Perspective::Bear))
          << ',' << format_number(v) << '\n';
    }
    detail::close_checked(out, paths.industry_migration);
  }
  return paths;
}

}  // namespace b4
