// b4 command-line entry point: train, backtest, analyze, grid.
//
// Precedence: built-in defaults < --config file < command-line flags.
// Log verbosity comes from SPDLOG_LEVEL (e.g. SPDLOG_LEVEL=debug).

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "b4/b4.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> stock;
  std::optional<std::size_t> epochs;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Run configuration (JSON)")->required();
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_option("--stock", f.stock, "Restrict the run to one ticker");
}

b4::RunConfig effective_config(const CommonFlags& f) {
  b4::RunConfig cfg = b4::load_run_config(f.config);
  if (f.out) cfg.paths.out = *f.out;
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.training.seed = *f.seed;
  }
  if (f.epochs) cfg.training.epochs = *f.epochs;
  if (f.stock) cfg.stocks = {*f.stock};
  cfg.validate();
  return cfg;
}

int report(const b4::CommandResult& r) {
  if (!r.ok) {
    std::cerr << "b4: finished with errors, see " << r.manifest.string() << "\n";
    return 1;
  }
  std::cout << r.manifest.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("b4"));
  spdlog::cfg::load_env_levels();

  CLI::App app{"Bias-aware market representation: training, backtesting and attention analytics"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  CLI::App* train = app.add_subcommand("train", "Train one model per stock");
  add_common(train, train_flags);
  train->add_option("--epochs", train_flags.epochs, "Override training.epochs");

  CommonFlags backtest_flags;
  std::optional<std::string> checkpoint;
  bool flat = false;
  CLI::App* backtest = app.add_subcommand("backtest", "Backtest trained models on the test split");
  add_common(backtest, backtest_flags);
  backtest->add_option("--checkpoint", checkpoint, "Checkpoint to use instead of <out>/<stock>/checkpoint.json");
  backtest->add_flag("--flat", flat, "Hold flat every day (null strategy)");

  CommonFlags analyze_flags;
  CLI::App* analyze = app.add_subcommand("analyze", "Attention and bias analytics");
  add_common(analyze, analyze_flags);

  CommonFlags grid_flags;
  CLI::App* grid = app.add_subcommand("grid", "Grid search over alpha and momentum span");
  add_common(grid, grid_flags);
  grid->add_option("--epochs", grid_flags.epochs, "Override training.epochs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return report(b4::cmd_train(effective_config(train_flags)));
    if (backtest->parsed()) {
      b4::BacktestOptions opts;
      if (checkpoint) opts.checkpoint = *checkpoint;
      opts.flat_signals = flat;
      return report(b4::cmd_backtest(effective_config(backtest_flags), opts));
    }
    if (analyze->parsed()) return report(b4::cmd_analyze(effective_config(analyze_flags)));
    if (grid->parsed()) return report(b4::cmd_grid(effective_config(grid_flags)));
  } catch (const b4::Error& e) {
    std::cerr << "b4: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "b4: unexpected failure: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
