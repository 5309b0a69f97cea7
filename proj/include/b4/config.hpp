#pragma once

// Run configuration: a JSON file of flat sections (stocks, paths, model,
// training, backtest, analytics, grid). Command-line flags are applied on top
// of the file afterwards, so flags win.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "b4/analytics.hpp"
#include "b4/backtest.hpp"
#include "b4/error.hpp"
#include "b4/ingest.hpp"
#include "b4/model.hpp"
#include "b4/train.hpp"

namespace b4 {

struct PathsConfig {
  std::string prices;  ///< may contain "{stock}"
  std::string news;
  std::string topics;
  std::string industry_map;
  std::string out = "out";

  std::filesystem::path prices_for(const std::string& stock) const {
    std::string p = prices;
    for (auto pos = p.find("{stock}"); pos != std::string::npos; pos = p.find("{stock}")) p.replace(pos, 7, stock);
    return p;
  }
};

struct BacktestConfig {
  TradeMode mode = TradeMode::LongFlat;
  MetricConvention convention = MetricConvention::Standard;
  PeakValleyInputs literal;
};

struct AnalyticsConfig {
  std::size_t windows = 4;
  Aggregation aggregation = Aggregation::Mean;
  bool all_pairs = false;  ///< every τ < τ' instead of consecutive windows
};

struct GridConfig {
  std::vector<double> alphas = default_alpha_grid();
  std::vector<MomentumSpan> spans = default_span_grid();
  double validation_ratio = 0.2;  ///< tail of the training split held out for ranking
};

struct RunConfig {
  std::vector<std::string> stocks;
  PathsConfig paths;
  ModelConfig model;
  TrainingConfig training;
  std::optional<std::uint64_t> seed;
  double split_ratio = 0.7;
  TieRule ties = TieRule::Bearish;
  BacktestConfig backtest;
  AnalyticsConfig analytics;
  GridConfig grid;

  void validate() const {
    if (stocks.empty()) throw ConfigError("stocks: at least one stock is required");
    std::set<std::string> seen;
    for (const auto& s : stocks) {
      if (s.empty() || s.find_first_of("/\\ ") != std::string::npos) throw ConfigError("stocks: invalid ticker '" + s + "'");
      if (!seen.insert(s).second) throw ConfigError("stocks: duplicate ticker " + s);
    }
    if (paths.prices.empty()) throw ConfigError("paths.prices is required");
    if (paths.news.empty()) throw ConfigError("paths.news is required");
    if (!seed) throw ConfigError("training.seed is required");
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("training.split_ratio must be in (0,1)");
    model.validate();
    training.validate();
    if (analytics.windows == 0) throw ConfigError("analytics.windows must be >= 1");
    if (grid.alphas.empty()) throw ConfigError("grid.alphas is empty");
    if (grid.spans.empty()) throw ConfigError("grid.spans is empty");
    for (double a : grid.alphas)
      if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("grid.alphas entries must be in [0,1]");
    if (!(grid.validation_ratio > 0.0 && grid.validation_ratio < 1.0)) throw ConfigError("grid.validation_ratio must be in (0,1)");
  }
};

inline std::string to_string(TieRule t) { return t == TieRule::Bearish ? "bearish" : "drop"; }
inline std::string to_string(Aggregation a) { return a == Aggregation::Mean ? "mean" : "sum"; }

inline std::string layout_name(const MarkerLayout& l) {
  if (l.order == MarkerLayout::canonical().order) return "canonical";
  if (l.order == MarkerLayout::markers_first().order) return "markers-first";
  throw ConfigError("model.layout: unnamed marker layout");
}

namespace config_detail {

using nlohmann::json;

inline void reject_unknown(const json& section, const std::string& name, std::initializer_list<const char*> keys) {
  if (!section.is_object()) throw ConfigError(name + " must be an object");
  for (const auto& [k, v] : section.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ConfigError(name + "." + k + " is not a recognised key");
  }
}

template <class T>
void read(const json& section, const std::string& section_name, const char* key, T& out) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(section_name + "." + key + " has the wrong type");
  }
}

inline void read_size(const json& section, const std::string& section_name, const char* key, std::size_t& out) {
  if (!section.contains(key)) return;
  const json& v = section.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(section_name + "." + key + " must be a nonnegative integer");
  out = v.get<std::size_t>();
}

inline void read_optional(const json& section, const std::string& section_name, const char* key, std::optional<double>& out) {
  if (!section.contains(key) || section.at(key).is_null()) return;
  if (!section.at(key).is_number()) throw ConfigError(section_name + "." + key + " must be a number");
  out = section.at(key).get<double>();
}

inline MarkerLayout parse_layout(const std::string& s) {
  if (s == "canonical") return MarkerLayout::canonical();
  if (s == "markers-first") return MarkerLayout::markers_first();
  throw ConfigError("model.layout must be canonical or markers-first, got '" + s + "'");
}

inline TieRule parse_ties(const std::string& s) {
  if (s == "bearish") return TieRule::Bearish;
  if (s == "drop") return TieRule::Drop;
  throw ConfigError("training.ties must be bearish or drop, got '" + s + "'");
}

inline std::string resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

}  // namespace config_detail

/// Parses a config document; relative paths resolve against `base_dir`.
inline RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
  using namespace config_detail;
  RunConfig cfg;
  reject_unknown(doc, "config", {"stocks", "paths", "model", "training", "backtest", "analytics", "grid"});
  if (doc.contains("stocks")) {
    if (!doc["stocks"].is_array()) throw ConfigError("stocks must be a list of tickers");
    for (const auto& s : doc["stocks"]) {
      if (!s.is_string()) throw ConfigError("stocks entries must be strings");
      cfg.stocks.push_back(s.get<std::string>());
    }
  }
  if (doc.contains("paths")) {
    const json& p = doc["paths"];
    reject_unknown(p, "paths", {"prices", "news", "topics", "industry_map", "out"});
    read(p, "paths", "prices", cfg.paths.prices);
    read(p, "paths", "news", cfg.paths.news);
    read(p, "paths", "topics", cfg.paths.topics);
    read(p, "paths", "industry_map", cfg.paths.industry_map);
    read(p, "paths", "out", cfg.paths.out);
    cfg.paths.prices = resolve(cfg.paths.prices, base_dir);
    cfg.paths.news = resolve(cfg.paths.news, base_dir);
    cfg.paths.topics = resolve(cfg.paths.topics, base_dir);
    cfg.paths.industry_map = resolve(cfg.paths.industry_map, base_dir);
  }
  if (doc.contains("model")) {
    const json& m = doc["model"];
    reject_unknown(m, "model", {"width", "key_width", "prototypes", "layers", "max_tokens", "vocab_size", "lookback",
                                "ffn_width", "init_std", "hash_seed", "layout", "mask_padding"});
    read_size(m, "model", "width", cfg.model.width);
    read_size(m, "model", "key_width", cfg.model.key_width);
    read_size(m, "model", "prototypes", cfg.model.prototypes);
    read_size(m, "model", "layers", cfg.model.layers);
    read_size(m, "model", "max_tokens", cfg.model.max_tokens);
    read_size(m, "model", "vocab_size", cfg.model.vocab_size);
    read_size(m, "model", "lookback", cfg.model.lookback);
    read_size(m, "model", "ffn_width", cfg.model.ffn_width);
    read(m, "model", "init_std", cfg.model.init_std);
    read(m, "model", "hash_seed", cfg.model.hash_seed);
    read(m, "model", "mask_padding", cfg.model.mask_padding);
    if (m.contains("layout")) {
      std::string layout;
      read(m, "model", "layout", layout);
      cfg.model.layout = parse_layout(layout);
    }
  }
  if (doc.contains("training")) {
    const json& t = doc["training"];
    reject_unknown(t, "training", {"alpha", "span", "temperature", "learning_rate", "beta1", "beta2", "epsilon", "epochs",
                                   "batch_size", "seed", "include_self", "split_ratio", "ties"});
    read(t, "training", "alpha", cfg.training.loss.alpha);
    read(t, "training", "temperature", cfg.training.loss.temperature);
    read(t, "training", "learning_rate", cfg.training.adam.learning_rate);
    read(t, "training", "beta1", cfg.training.adam.beta1);
    read(t, "training", "beta2", cfg.training.adam.beta2);
    read(t, "training", "epsilon", cfg.training.adam.epsilon);
    read_size(t, "training", "epochs", cfg.training.epochs);
    read_size(t, "training", "batch_size", cfg.training.loss.batch_size);
    read(t, "training", "include_self", cfg.training.loss.include_self);
    read(t, "training", "split_ratio", cfg.split_ratio);
    if (t.contains("span")) {
      std::string span;
      read(t, "training", "span", span);
      cfg.training.loss.span = MomentumSpan::parse(span);
    }
    if (t.contains("seed") && !t["seed"].is_null()) {
      const json& s = t["seed"];
      if (!s.is_number_integer() || (!s.is_number_unsigned() && s.get<long long>() < 0)) {
        throw ConfigError("training.seed must be a nonnegative integer");
      }
      cfg.seed = s.get<std::uint64_t>();
    }
    if (t.contains("ties")) {
      std::string ties;
      read(t, "training", "ties", ties);
      cfg.ties = parse_ties(ties);
    }
  }
  if (doc.contains("backtest")) {
    const json& b = doc["backtest"];
    reject_unknown(b, "backtest", {"mode", "convention", "total_return", "sub_periods", "years"});
    if (b.contains("mode")) {
      std::string s;
      read(b, "backtest", "mode", s);
      cfg.backtest.mode = parse_trade_mode(s);
    }
    if (b.contains("convention")) {
      std::string s;
      read(b, "backtest", "convention", s);
      cfg.backtest.convention = parse_convention(s);
    }
    read_optional(b, "backtest", "total_return", cfg.backtest.literal.total_return);
    read_optional(b, "backtest", "sub_periods", cfg.backtest.literal.sub_periods);
    read_optional(b, "backtest", "years", cfg.backtest.literal.years);
  }
  if (doc.contains("analytics")) {
    const json& a = doc["analytics"];
    reject_unknown(a, "analytics", {"windows", "aggregation", "pairs"});
    read_size(a, "analytics", "windows", cfg.analytics.windows);
    if (a.contains("aggregation")) {
      std::string s;
      read(a, "analytics", "aggregation", s);
      cfg.analytics.aggregation = parse_aggregation(s);
    }
    if (a.contains("pairs")) {
      std::string s;
      read(a, "analytics", "pairs", s);
      if (s != "consecutive" && s != "all") throw ConfigError("analytics.pairs must be consecutive or all, got '" + s + "'");
      cfg.analytics.all_pairs = s == "all";
    }
  }
  if (doc.contains("grid")) {
    const json& g = doc["grid"];
    reject_unknown(g, "grid", {"alphas", "spans", "validation_ratio"});
    read(g, "grid", "alphas", cfg.grid.alphas);
    if (g.contains("spans")) {
      std::vector<std::string> spans;
      read(g, "grid", "spans", spans);
      cfg.grid.spans.clear();
      for (const auto& s : spans) cfg.grid.spans.push_back(MomentumSpan::parse(s));
    }
    read(g, "grid", "validation_ratio", cfg.grid.validation_ratio);
  }
  if (cfg.seed) cfg.training.seed = *cfg.seed;
  return cfg;
}

/// Reads and parses a config file without validating it.
inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(doc, path.parent_path());
}

/// Full echo of the effective configuration.
inline nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& s : cfg.grid.spans) spans.push_back(s.label());
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {
      {"stocks", cfg.stocks},
      {"paths",
       {{"prices", cfg.paths.prices},
        {"news", cfg.paths.news},
        {"topics", cfg.paths.topics},
        {"industry_map", cfg.paths.industry_map},
        {"out", cfg.paths.out}}},
      {"model",
       {{"width", cfg.model.width},
        {"key_width", cfg.model.key_width},
        {"prototypes", cfg.model.prototypes},
        {"layers", cfg.model.layers},
        {"max_tokens", cfg.model.max_tokens},
        {"vocab_size", cfg.model.vocab_size},
        {"lookback", cfg.model.lookback},
        {"ffn_width", cfg.model.ffn_width},
        {"init_std", cfg.model.init_std},
        {"hash_seed", cfg.model.hash_seed},
        {"layout", layout_name(cfg.model.layout)},
        {"mask_padding", cfg.model.mask_padding}}},
      {"training",
       {{"alpha", cfg.training.loss.alpha},
        {"span", cfg.training.loss.span.label()},
        {"temperature", cfg.training.loss.temperature},
        {"learning_rate", cfg.training.adam.learning_rate},
        {"beta1", cfg.training.adam.beta1},
        {"beta2", cfg.training.adam.beta2},
        {"epsilon", cfg.training.adam.epsilon},
        {"epochs", cfg.training.epochs},
        {"batch_size", cfg.training.loss.batch_size},
        {"seed", cfg.seed ? nlohmann::json(*cfg.seed) : nlohmann::json(nullptr)},
        {"include_self", cfg.training.loss.include_self},
        {"split_ratio", cfg.split_ratio},
        {"ties", to_string(cfg.ties)}}},
      {"backtest",
       {{"mode", to_string(cfg.backtest.mode)},
        {"convention", to_string(cfg.backtest.convention)},
        {"total_return", opt(cfg.backtest.literal.total_return)},
        {"sub_periods", opt(cfg.backtest.literal.sub_periods)},
        {"years", opt(cfg.backtest.literal.years)}}},
      {"analytics",
       {{"windows", cfg.analytics.windows},
        {"aggregation", to_string(cfg.analytics.aggregation)},
        {"pairs", cfg.analytics.all_pairs ? "all" : "consecutive"}}},
      {"grid", {{"alphas", cfg.grid.alphas}, {"spans", spans}, {"validation_ratio", cfg.grid.validation_ratio}}},
  };
}

}  // namespace b4
