#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "b4/b4.hpp"
#include "support/oracles.hpp"
#include "support/planted.hpp"

using namespace b4;
using Catch::Approx;

namespace {

std::vector<Trend> bits(unsigned mask, std::size_t n) {
  std::vector<Trend> y;
  for (std::size_t i = 0; i < n; ++i) y.push_back((mask >> i) & 1u ? Trend::Bullish : Trend::Bearish);
  return y;
}

std::vector<std::size_t> sorted(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  return v;
}

/// Small model and planted samples shared by the training tests.
ModelConfig small_model() {
  ModelConfig c;
  c.width = 16;
  c.key_width = 8;
  c.prototypes = 8;
  c.layers = 1;
  c.max_tokens = 16;
  c.vocab_size = 512;
  c.lookback = 3;
  c.ffn_width = 32;
  return c;
}

std::vector<AlignedSample> planted_samples(std::size_t days, const ModelConfig& cfg, std::vector<PriceBar>* bars = nullptr) {
  testing::PlantedOptions o;
  o.days = days;
  const auto market = testing::make_planted(o);
  if (bars) *bars = market.bars;
  return build_samples(market.bars, NewsCorpus(market.docs), o.stock, cfg.lookback);
}

std::vector<double> snapshot(const B4Model& m) {
  std::vector<double> out;
  for (const Parameter& p : m.params().all()) out.insert(out.end(), p.value.storage().begin(), p.value.storage().end());
  return out;
}

}  // namespace

TEST_CASE("span windows, labels and parsing", "[pairing]") {
  CHECK(MomentumSpan::parse("+-1") == MomentumSpan::symmetric(1));
  CHECK(MomentumSpan::parse("\xC2\xB1" "2") == MomentumSpan::symmetric(2));
  CHECK(MomentumSpan::parse("-2") == MomentumSpan::backward(2));
  CHECK(MomentumSpan::parse("1") == MomentumSpan::forward(1));
  CHECK(MomentumSpan::parse("0") == MomentumSpan::none());
  CHECK_THROWS_AS(MomentumSpan::parse("x"), ConfigError);
  CHECK_THROWS_AS(MomentumSpan::parse("+-"), ConfigError);
  for (const auto& s : default_span_grid()) CHECK(MomentumSpan::parse(s.label()) == s);
  CHECK(default_span_grid().size() == 7);
  CHECK(MomentumSpan::forward(2).contains(3, 5));
  CHECK_FALSE(MomentumSpan::forward(2).contains(3, 2));
  CHECK(MomentumSpan::backward(1).contains(3, 2));
  CHECK_FALSE(MomentumSpan::symmetric(1).contains(3, 3));
}

TEST_CASE("inertial pairs on the worked examples", "[pairing]") {
  const std::vector<Trend> y{Trend::Bullish, Trend::Bullish, Trend::Bearish, Trend::Bullish};
  const auto p = inertial_pairs(y, MomentumSpan::symmetric(1));
  CHECK(p[0].positives == std::vector<std::size_t>{1});
  CHECK(sorted(p[0].negatives) == std::vector<std::size_t>{2, 3});
  CHECK(p[2].positives.empty());
  CHECK(sorted(p[2].negatives) == std::vector<std::size_t>{0, 1, 3});

  for (const auto& a : inertial_pairs(y, MomentumSpan::none()).anchors) CHECK(a.positives.empty());

  const std::vector<Trend> same(6, Trend::Bullish);
  const auto h = inertial_pairs(same, MomentumSpan::symmetric(2));
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j : h[i].positives) CHECK((j != i && (j > i ? j - i : i - j) <= 2));
    for (std::size_t j : h[i].negatives) CHECK((j > i ? j - i : i - j) > 2);
    CHECK(h[i].positives.size() + h[i].negatives.size() == 5);
  }

  const auto with_self = inertial_pairs(y, MomentumSpan::symmetric(1), true);
  CHECK(sorted(with_self[0].positives) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("inertial pairs equal brute force on every length-8 sequence", "[pairing]") {
  std::size_t cases = 0;
  for (unsigned mask = 0; mask < 256; ++mask) {
    const auto y = bits(mask, 8);
    for (const auto& span : default_span_grid()) {
      const auto got = inertial_pairs(y, span);
      CHECK(testing::same_sets(got, testing::brute_force_pairs(y, span)));
      for (const auto& a : got.anchors) {
        for (std::size_t p : a.positives) CHECK(std::find(a.negatives.begin(), a.negatives.end(), p) == a.negatives.end());
      }
      ++cases;
    }
  }
  CHECK(cases == 1792);
}

TEST_CASE("contrastive losses on uniform and saturated logits", "[loss]") {
  const std::vector<Trend> y{Trend::Bullish, Trend::Bullish, Trend::Bearish, Trend::Bullish, Trend::Bullish};
  const auto pairs = inertial_pairs(y, MomentumSpan::symmetric(1));
  const Tensor flat({5, 5}, 0.7);
  for (auto o : {ContrastOrientation::Competition, ContrastOrientation::Market})
    CHECK(contrastive_from_logits(flat, pairs, 0.1, o) == Approx(std::log(4.0)).epsilon(1e-14));

  const std::vector<Trend> two{Trend::Bullish, Trend::Bullish};
  const auto p2 = inertial_pairs(two, MomentumSpan::forward(1));
  Tensor sat({2, 2}, 0.0);
  sat.at(1, 0) = 50.0;  // competition orientation: candidate 1 scored against anchor 0
  CHECK(contrastive_from_logits(sat, p2, 0.1, ContrastOrientation::Competition) < 1e-12);
  CHECK_THROWS_AS(contrastive_from_logits(flat, pairs, 0.0, ContrastOrientation::Market), ConfigError);
  CHECK(contrastive_from_logits(flat, inertial_pairs(y, MomentumSpan::none()), 0.1, ContrastOrientation::Market) == 0.0);
}

TEST_CASE("loss stack matches direct formulas", "[loss]") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng() % 10;
    const auto heads = testing::random_heads(n, 6, rng);
    const auto y = testing::random_labels(n, rng);
    const auto span = default_span_grid()[rng() % 7];
    const auto pairs = inertial_pairs(y, span);
    LossConfig cfg;
    cfg.temperature = 0.5;
    cfg.span = span;
    const auto parts = compute_losses(heads, y, pairs, cfg);
    CHECK(std::fabs(parts.comp - testing::direct_loss_comp(heads, y, pairs, 0.5)) < 1e-10);
    CHECK(std::fabs(parts.mar - testing::direct_loss_mar(heads, y, pairs, 0.5)) < 1e-10);
    CHECK(std::fabs(parts.ce - testing::direct_loss_ce(heads, y)) < 1e-12);
    CHECK(std::fabs(parts.total - total_loss(parts, cfg.alpha)) < 1e-12);

    Tape tape;
    std::vector<HeadVars> hv;
    for (const auto& h : heads) {
      HeadVars v{tape.constant(Tensor({1, 6}, h.mar)), {}, tape.constant(Tensor({1, 6}, h.bu)), tape.constant(Tensor({1, 6}, h.be))};
      hv.push_back(v);
    }
    const auto vars = batch_losses(hv, y, pairs, cfg);
    CHECK(vars.total.value()[0] == Approx(parts.total).margin(1e-12));
  }
}

TEST_CASE("symmetric heads make the two contrastive terms equal", "[loss]") {
  std::mt19937_64 rng(22);
  auto heads = testing::random_heads(7, 5, rng);
  const auto y = testing::random_labels(7, rng);
  for (std::size_t i = 0; i < heads.size(); ++i) (y[i] == Trend::Bullish ? heads[i].bu : heads[i].be) = heads[i].mar;
  const auto pairs = inertial_pairs(y, MomentumSpan::symmetric(2));
  CHECK(loss_mar(heads, y, pairs, 0.3) == loss_comp(heads, y, pairs, 0.3));
}

TEST_CASE("cross-entropy examples", "[loss]") {
  std::mt19937_64 rng(23);
  auto heads = testing::random_heads(8, 4, rng);
  const auto y = testing::random_labels(8, rng);
  auto equal = heads;
  for (auto& h : equal) h.be = h.bu;
  CHECK(loss_ce(equal, y) == Approx(std::log(2.0)).epsilon(1e-14));
  std::vector<double> up(8), down(8);
  for (std::size_t i = 0; i < 8; ++i) {
    up[i] = y[i] == Trend::Bullish ? 60.0 : 0.0;
    down[i] = y[i] == Trend::Bullish ? 0.0 : 60.0;
  }
  CHECK(two_class_ce_from_logits(up, down, y) < 1e-20);
  long double oracle = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    const long double u = testing::ldot(heads[i].bu, heads[i].mar), e = testing::ldot(heads[i].be, heads[i].mar);
    const long double pick = y[i] == Trend::Bullish ? u : e;
    oracle += -(pick - std::log(std::exp(u) + std::exp(e)));
  }
  CHECK(std::fabs(loss_ce(heads, y) - static_cast<double>(oracle / 8)) < 1e-12);
}

TEST_CASE("losses are invariant to a shared logit shift", "[loss]") {
  std::mt19937_64 rng(24);
  const std::size_t n = 9;
  const auto y = testing::random_labels(n, rng);
  const auto pairs = inertial_pairs(y, MomentumSpan::symmetric(2));
  Tensor logits = normal_tensor({n, n}, 1.0, rng);
  std::vector<double> up = testing::random_vector(n, rng, 1.0), down = testing::random_vector(n, rng, 1.0);
  for (double c : {-7.5, 0.3, 12.0}) {
    Tensor shifted = logits;
    for (double& v : shifted.data()) v += c;
    for (auto o : {ContrastOrientation::Competition, ContrastOrientation::Market})
      CHECK(std::fabs(contrastive_from_logits(shifted, pairs, 1.0, o) - contrastive_from_logits(logits, pairs, 1.0, o)) < 1e-9);
    std::vector<double> u2 = up, d2 = down;
    for (auto& v : u2) v += c;
    for (auto& v : d2) v += c;
    CHECK(std::fabs(two_class_ce_from_logits(u2, d2, y) - two_class_ce_from_logits(up, down, y)) < 1e-9);
  }
}

TEST_CASE("total loss endpoints and affinity", "[loss]") {
  CHECK(total_loss(0.2, 0.4, 0.6, 0.5) == Approx(0.6).epsilon(1e-15));
  CHECK(total_loss(0.2, 0.4, 0.6, 1.0) == 0.2 + 0.4);
  CHECK(total_loss(0.2, 0.4, 0.6, 0.0) == 0.6);
  CHECK_THROWS_AS(total_loss(0.2, 0.4, 0.6, 1.5), ConfigError);
  std::mt19937_64 rng(25);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int k = 0; k < 50; ++k) {
    const double c = u(rng), m = u(rng), e = u(rng);
    for (double a : {0.0, 0.25, 0.6, 1.0}) CHECK(std::fabs(total_loss(c, m, e, a) - (a * (c + m - e) + e)) < 1e-12);
  }
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged", "[train]") {
  const ModelConfig mc = testing::tiny_model_config();
  B4Model model(mc, 3);
  std::mt19937_64 rng(3);
  const auto data = testing::random_batch(20, mc, rng);
  TrainingConfig tc;
  tc.adam.learning_rate = 0.0;
  tc.loss.batch_size = 8;
  const auto before = snapshot(model);
  Trainer trainer(model, tc);
  const auto losses = trainer.train_epoch(data);
  CHECK(losses.size() == 3);
  CHECK(snapshot(model) == before);
  CHECK(temporal_batches(20, 8) == std::vector<std::pair<std::size_t, std::size_t>>{{0, 8}, {8, 16}, {16, 20}});
  tc.adam.learning_rate = -1.0;
  CHECK_THROWS_AS(Trainer(model, tc), ConfigError);
}

TEST_CASE("a single planted batch trains with strictly decreasing loss", "[train]") {
  const ModelConfig mc = small_model();
  auto samples = planted_samples(40, mc);
  samples.resize(8);
  B4Model model(mc, 5);
  TrainingConfig tc;
  tc.adam.learning_rate = 1e-3;
  tc.epochs = 10;
  const auto losses = Trainer(model, tc).fit(samples);
  REQUIRE(losses.size() == 10);
  for (std::size_t e = 1; e < losses.size(); ++e) CHECK(losses[e].total < losses[e - 1].total);
}

TEST_CASE("training is deterministic for a fixed seed", "[train]") {
  const ModelConfig mc = testing::tiny_model_config();
  std::mt19937_64 rng(4);
  const auto data = testing::random_batch(24, mc, rng);
  auto run = [&] {
    B4Model model(mc, 17);
    TrainingConfig tc;
    tc.epochs = 3;
    tc.loss.batch_size = 8;
    std::vector<double> totals;
    for (const auto& l : Trainer(model, tc).fit(data)) totals.push_back(l.total);
    return std::make_pair(totals, snapshot(model));
  };
  CHECK(run() == run());
}

TEST_CASE("divergence names the batch", "[train]") {
  const ModelConfig mc = testing::tiny_model_config();
  B4Model model(mc, 6);
  std::mt19937_64 rng(6);
  const auto data = testing::random_batch(16, mc, rng);
  model.params().get("layer1.ffn.out_bias").value[0] = NAN;
  TrainingConfig tc;
  tc.loss.batch_size = 8;
  try {
    Trainer(model, tc).train_epoch(data);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("batch 0") != std::string::npos);
  }
}

TEST_CASE("grid search covers the grid and ranks by validation return", "[grid]") {
  const ModelConfig mc = testing::tiny_model_config();
  std::vector<PriceBar> bars;
  const auto samples = planted_samples(60, mc, &bars);
  const std::vector<AlignedSample> train(samples.begin(), samples.begin() + 40);
  const std::vector<AlignedSample> val(samples.begin() + 40, samples.end());
  const GridData data{&train, &val, nullptr, &bars};
  TrainingConfig base;
  base.epochs = 1;
  base.loss.batch_size = 16;
  base.seed = 2;

  SECTION("default grid has 35 runs") {
    const auto results = grid_search(default_alpha_grid(), default_span_grid(), base, mc, data);
    REQUIRE(results.size() == 35);
    std::set<std::size_t> ranks;
    for (const auto& r : results) {
      ranks.insert(r.rank);
      CHECK(std::isfinite(r.validation.cumulative_returns));
      CHECK(std::isfinite(r.final_loss));
    }
    CHECK(ranks.size() == 35);
    const auto& best = results[best_index(results)];
    for (const auto& r : results) CHECK(best.validation.cumulative_returns >= r.validation.cumulative_returns);
    CHECK(results[0].alpha == 0.1);
    CHECK(results[0].span == MomentumSpan::backward(2));
  }
  SECTION("single point") {
    const auto results = grid_search({0.5}, {MomentumSpan::symmetric(1)}, base, mc, data);
    REQUIRE(results.size() == 1);
    CHECK(results[0].best());
  }
  SECTION("empty grids") {
    CHECK_THROWS_AS(grid_search({}, default_span_grid(), base, mc, data), ConfigError);
    CHECK_THROWS_AS(grid_search({0.5}, {}, base, mc, data), ConfigError);
  }
}

TEST_CASE("a frozen configuration ranks below a trained one on planted data", "[grid]") {
  const ModelConfig mc = small_model();
  std::vector<PriceBar> bars;
  const auto samples = planted_samples(300, mc, &bars);
  const std::vector<AlignedSample> train(samples.begin(), samples.begin() + 220);
  const std::vector<AlignedSample> val(samples.begin() + 220, samples.end());
  TrainingConfig trained;
  trained.epochs = 8;
  trained.adam.learning_rate = 3e-3;
  trained.seed = 8;
  TrainingConfig frozen = trained;
  frozen.adam.learning_rate = 0.0;
  const auto results = rank_configurations({frozen, trained}, mc, GridData{&train, &val, nullptr, &bars});
  INFO("frozen " << results[0].validation.cumulative_returns << " trained " << results[1].validation.cumulative_returns);
  CHECK(results[1].best());
  CHECK(results[1].validation_accuracy > results[0].validation_accuracy);
}
