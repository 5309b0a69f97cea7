#pragma once

// The train / backtest / analyze / grid commands as library calls, their
// report writers and the run manifest.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <openssl/opensslv.h>
#include <spdlog/spdlog.h>
#include <spdlog/version.h>

#include "b4/analytics.hpp"
#include "b4/backtest.hpp"
#include "b4/checkpoint.hpp"
#include "b4/config.hpp"
#include "b4/ingest.hpp"
#include "b4/model.hpp"
#include "b4/train.hpp"

namespace b4 {

inline constexpr const char* kVersion = "0.1.0";

/// Lowercase hex SHA-256 of a file's bytes.
inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string() + " for checksum");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw InternalError("sha256 init failed");
  }
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

/// Config echo, versions, timestamps, per-stock results and output checksums.
class RunManifest {
 public:
  RunManifest(std::string command, const RunConfig& cfg) : command_(std::move(command)), started_(utc_timestamp()) {
    config_ = b4::to_json(cfg);
  }

  void add_file(const std::filesystem::path& root, const std::filesystem::path& file) {
    files_[std::filesystem::relative(file, root).generic_string()] = sha256_file(file);
  }
  nlohmann::json& results() { return results_; }
  void add_error(const std::string& message) { errors_.push_back(message); }
  bool ok() const { return errors_.empty(); }

  nlohmann::json to_json() const {
    return {{"command", command_},
            {"config", config_},
            {"versions",
             {{"b4", kVersion},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                                    "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
              {"spdlog", std::to_string(SPDLOG_VER_MAJOR) + "." + std::to_string(SPDLOG_VER_MINOR) + "." +
                             std::to_string(SPDLOG_VER_PATCH)},
              {"openssl", OPENSSL_VERSION_TEXT}}},
            {"started_at", started_},
            {"finished_at", finished_},
            {"results", results_},
            {"files", files_},
            {"errors", errors_}};
  }

  /// Stamps the end time and writes `<out>/manifest_<command>.json` atomically.
  std::filesystem::path write(const std::filesystem::path& out_dir) {
    finished_ = utc_timestamp();
    ensure_dir(out_dir);
    const auto path = out_dir / ("manifest_" + command_ + ".json");
    write_text_atomic(path, to_json().dump(2) + "\n");
    return path;
  }

 private:
  std::string command_;
  std::string started_;
  std::string finished_;
  nlohmann::json config_;
  nlohmann::json results_ = nlohmann::json::object();
  std::map<std::string, std::string> files_;
  std::vector<std::string> errors_;
};

// ---------------------------------------------------------------------------
// Report writers

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<LossBreakdown>& losses, std::size_t batches_per_epoch) {
  std::ostringstream out;
  out << "epoch,batch,l_comp,l_mar,l_ce,l_total\n";
  for (std::size_t k = 0; k < losses.size(); ++k) {
    const LossBreakdown& l = losses[k];
    out << k / batches_per_epoch << ',' << k % batches_per_epoch << ',' << format_number(l.comp) << ','
        << format_number(l.mar) << ',' << format_number(l.ce) << ',' << format_number(l.total) << '\n';
  }
  write_text_atomic(path, out.str());
}

inline void write_equity_csv(const std::filesystem::path& path, const EquityCurve& curve) {
  std::ostringstream out;
  out << "date,position,close,portfolio_value\n";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out << format_date(curve.dates[i]) << ',' << curve.positions[i] << ',' << format_number(curve.closes[i]) << ','
        << format_number(curve.values[i]) << '\n';
  }
  write_text_atomic(path, out.str());
}

inline nlohmann::json metrics_json(const Metrics& m, TradeMode mode) {
  return {{"cumulative_returns", m.cumulative_returns},
          {"annual_return", m.annual_return},
          {"max_drawdown", m.max_drawdown},
          {"calmar_ratio", m.calmar_ratio ? nlohmann::json(*m.calmar_ratio) : nlohmann::json(nullptr)},
          {"convention", to_string(m.convention)},
          {"mode", to_string(mode)}};
}

inline void write_grid_csv(const std::filesystem::path& path, const std::vector<GridResult>& rows) {
  std::ostringstream out;
  out << "alpha,span,cumulative_return,annual_return,max_drawdown,calmar,final_loss,seed,"
         "validation_accuracy,test_cumulative_return,test_accuracy,best\n";
  for (const GridResult& r : rows) {
    out << format_number(r.alpha) << ',' << r.span.label() << ',' << format_number(r.validation.cumulative_returns) << ','
        << format_number(r.validation.annual_return) << ',' << format_number(r.validation.max_drawdown) << ','
        << format_optional(r.validation.calmar_ratio) << ',' << format_number(r.final_loss) << ',' << r.seed << ','
        << format_number(r.validation_accuracy) << ','
        << (r.test ? format_number(r.test->cumulative_returns) : std::string{}) << ','
        << (r.test ? format_number(r.test_accuracy) : std::string{}) << ',' << (r.best() ? 1 : 0) << '\n';
  }
  write_text_atomic(path, out.str());
}

// ---------------------------------------------------------------------------
// Data plumbing

struct StockData {
  std::string stock;
  std::vector<PriceBar> bars;
  std::vector<AlignedSample> samples;
  DatasetSplit split;
};

inline TopicUniverse topics_for(const RunConfig& cfg) {
  return cfg.paths.topics.empty() ? TopicUniverse{} : load_topics(cfg.paths.topics);
}

inline StockData load_stock(const RunConfig& cfg, const std::string& stock, const NewsCorpus& news) {
  StockData d;
  d.stock = stock;
  d.bars = load_prices(cfg.paths.prices_for(stock));
  d.samples = build_samples(d.bars, news, stock, cfg.model.lookback, cfg.ties);
  d.split = split_chronological(d.samples, cfg.split_ratio);
  return d;
}

inline std::filesystem::path stock_dir(const std::filesystem::path& out, const std::string& stock) { return out / stock; }

inline std::filesystem::path default_checkpoint(const std::filesystem::path& out, const std::string& stock) {
  return stock_dir(out, stock) / "checkpoint.json";
}

/// Outcome of a command: where the manifest went and whether it recorded errors.
struct CommandResult {
  std::filesystem::path manifest;
  bool ok = true;
  nlohmann::json results;
};

namespace detail {
template <class Body>
CommandResult run_command(const std::string& name, const RunConfig& cfg, Body&& body) {
  cfg.validate();
  const std::filesystem::path out = cfg.paths.out;
  ensure_dir(out);
  RunManifest manifest(name, cfg);
  try {
    body(manifest, out);
  } catch (const Error& e) {
    spdlog::error("{}: {}", name, e.what());
    manifest.add_error(e.what());
  }
  CommandResult r;
  r.manifest = manifest.write(out);
  r.ok = manifest.ok();
  r.results = manifest.results();
  return r;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

/// Trains one model per stock; writes checkpoint.json and loss_trajectory.csv.
inline CommandResult cmd_train(const RunConfig& cfg) {
  return detail::run_command("train", cfg, [&](RunManifest& manifest, const std::filesystem::path& out) {
    const NewsCorpus news = load_news(cfg.paths.news, topics_for(cfg));
    for (const std::string& stock : cfg.stocks) {
      const StockData data = load_stock(cfg, stock, news);
      const auto dir = stock_dir(out, stock);
      ensure_dir(dir);
      B4Model model(cfg.model, cfg.training.seed);
      Trainer trainer(model, cfg.training);
      std::vector<LossBreakdown> losses;
      const std::size_t per_epoch = temporal_batches(data.split.train.size(), cfg.training.loss.batch_size).size();
      for (std::size_t e = 0; e < cfg.training.epochs; ++e) {
        auto epoch = trainer.train_epoch(data.split.train);
        double mean = 0.0;
        for (const auto& l : epoch) mean += l.total / static_cast<double>(epoch.size());
        spdlog::info("{} epoch {}/{} mean loss {:.6f}", stock, e + 1, cfg.training.epochs, mean);
        losses.insert(losses.end(), epoch.begin(), epoch.end());
      }
      save_checkpoint(dir / "checkpoint.json", model, to_json(cfg));
      write_loss_csv(dir / "loss_trajectory.csv", losses, per_epoch);
      manifest.add_file(out, dir / "checkpoint.json");
      manifest.add_file(out, dir / "loss_trajectory.csv");
      nlohmann::json r = {{"train_samples", data.split.train.size()},
                          {"test_samples", data.split.test.size()},
                          {"epochs", cfg.training.epochs},
                          {"batches", losses.size()}};
      if (!losses.empty()) {
        r["initial_loss"] = losses.front().total;
        r["final_loss"] = losses.back().total;
      }
      manifest.results()[stock] = r;
    }
  });
}

struct BacktestOptions {
  std::optional<std::filesystem::path> checkpoint;  ///< single-stock override of <out>/<stock>/checkpoint.json
  bool flat_signals = false;                        ///< hold flat every day regardless of the model
};

/// Backtests the test split of each stock; writes equity.csv and metrics.json.
inline CommandResult cmd_backtest(const RunConfig& cfg, const BacktestOptions& opts = {}) {
  return detail::run_command("backtest", cfg, [&](RunManifest& manifest, const std::filesystem::path& out) {
    if (opts.checkpoint && cfg.stocks.size() != 1) throw ConfigError("--checkpoint needs exactly one stock");
    const NewsCorpus news = load_news(cfg.paths.news, topics_for(cfg));
    for (const std::string& stock : cfg.stocks) {
      const StockData data = load_stock(cfg, stock, news);
      const auto dir = stock_dir(out, stock);
      ensure_dir(dir);
      const B4Model model = load_checkpoint(opts.checkpoint.value_or(default_checkpoint(out, stock)), cfg.model);
      Evaluation ev = evaluate(model, data.split.test, data.bars, cfg.backtest.mode, cfg.backtest.convention,
                               cfg.backtest.literal);
      if (opts.flat_signals) {
        const std::vector<int> flat(data.split.test.size(), 0);
        ev.positions = flat;
        ev.curve = run_backtest(signals_for(data.split.test, flat, data.bars), data.bars, cfg.backtest.mode);
        ev.metrics = compute_metrics(ev.curve, cfg.backtest.convention, cfg.backtest.literal);
      }
      const Metrics baseline = always_long_metrics(data.split.test, data.bars, cfg.backtest.convention);
      write_equity_csv(dir / "equity.csv", ev.curve);
      write_text_atomic(dir / "metrics.json", metrics_json(ev.metrics, cfg.backtest.mode).dump(2) + "\n");
      manifest.add_file(out, dir / "equity.csv");
      manifest.add_file(out, dir / "metrics.json");
      std::vector<Trend> labels;
      for (const auto& s : data.split.test) labels.push_back(s.label);
      manifest.results()[stock] = {{"metrics", metrics_json(ev.metrics, cfg.backtest.mode)},
                                   {"accuracy", directional_accuracy(ev.positions, labels)},
                                   {"always_long_cumulative_returns", baseline.cumulative_returns},
                                   {"flat_override", opts.flat_signals}};
      spdlog::info("{} cumulative {:.6f} (always-long {:.6f})", stock, ev.metrics.cumulative_returns,
                   baseline.cumulative_returns);
    }
  });
}

/// Runs every stock's model over all its samples and writes the analytics
/// tables under <out>/analytics.
inline CommandResult cmd_analyze(const RunConfig& cfg) {
  return detail::run_command("analyze", cfg, [&](RunManifest& manifest, const std::filesystem::path& out) {
    if (cfg.paths.industry_map.empty()) throw ConfigError("paths.industry_map is required for analyze");
    const IndustryMap industries = load_industry_map(cfg.paths.industry_map);
    const NewsCorpus news = load_news(cfg.paths.news, topics_for(cfg));
    std::map<std::string, std::vector<SampleAttention>> per_stock;
    std::optional<Date> first;
    std::optional<Date> last;
    for (const std::string& stock : cfg.stocks) {
      if (!industries.industry_of(stock)) throw DataError("stock " + stock + " is not covered by the industry map");
      const StockData data = load_stock(cfg, stock, news);
      const B4Model model = load_checkpoint(default_checkpoint(out, stock), cfg.model);
      const auto inferred = model.infer(data.samples);
      auto& rows = per_stock[stock];
      for (std::size_t i = 0; i < data.samples.size(); ++i) {
        rows.push_back({data.samples[i].date, inferred[i].tokens, data.samples[i].news, inferred[i].maps});
      }
      if (!first || data.samples.front().date < *first) first = data.samples.front().date;
      if (!last || data.samples.back().date > *last) last = data.samples.back().date;
    }
    const WindowPartition windows = equal_partition(*first, *last, cfg.analytics.windows);
    const AttentionPanel panel = build_panel(per_stock, windows, cfg.analytics.aggregation);
    const auto transitions = cfg.analytics.all_pairs ? all_window_pairs(windows.size()) : consecutive_pairs(windows.size());
    const auto dir = out / "analytics";
    const ReportPaths paths = emit_reports(panel, industries, dir, transitions);
    for (const auto& p : paths.all()) manifest.add_file(out, p);
    manifest.results()["panel_entries"] = panel.entries().size();
    manifest.results()["windows"] = windows.size();
  });
}

/// Grid search per stock: trains on the head of the training split, ranks on
/// its tail and scores every configuration on the test split.
inline CommandResult cmd_grid(const RunConfig& cfg) {
  return detail::run_command("grid", cfg, [&](RunManifest& manifest, const std::filesystem::path& out) {
    const NewsCorpus news = load_news(cfg.paths.news, topics_for(cfg));
    for (const std::string& stock : cfg.stocks) {
      const StockData data = load_stock(cfg, stock, news);
      const DatasetSplit inner = split_chronological(data.split.train, 1.0 - cfg.grid.validation_ratio);
      GridData gd{&inner.train, &inner.test, &data.split.test, &data.bars};
      const auto rows = grid_search(cfg.grid.alphas, cfg.grid.spans, cfg.training, cfg.model, gd, cfg.backtest.mode,
                                    cfg.backtest.convention);
      const auto dir = stock_dir(out, stock);
      ensure_dir(dir);
      write_grid_csv(dir / "grid.csv", rows);
      manifest.add_file(out, dir / "grid.csv");
      const GridResult& best = rows[best_index(rows)];
      manifest.results()[stock] = {{"runs", rows.size()},
                                   {"best_alpha", best.alpha},
                                   {"best_span", best.span.label()},
                                   {"best_validation_cumulative_return", best.validation.cumulative_returns}};
    }
  });
}

}  // namespace b4
