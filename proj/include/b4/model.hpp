#pragma once

// Bias-aware representation stack: text prototypes, price-to-concept
// cross-attention, marker-augmented text embedding, fusion, the encoder, head
// extraction and the bull/bear attention maps.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "b4/adam.hpp"
#include "b4/autodiff.hpp"
#include "b4/ingest.hpp"
#include "b4/tokenizer.hpp"

namespace b4 {

struct ModelConfig {
  std::size_t width = 32;        ///< d
  std::size_t key_width = 16;    ///< d_k of the price-to-concept attention
  std::size_t prototypes = 16;   ///< m
  std::size_t layers = 2;
  std::size_t max_tokens = 64;   ///< L
  std::size_t vocab_size = 4096; ///< V
  std::size_t lookback = 5;      ///< δ
  std::size_t ffn_width = 64;
  double init_std = 0.1;
  std::uint64_t hash_seed = 0;
  MarkerLayout layout{};
  bool mask_padding = true;

  void validate() const {
    if (width == 0) throw ConfigError("model.width must be >= 1");
    if (key_width == 0) throw ConfigError("model.key_width must be >= 1");
    if (prototypes == 0) throw ConfigError("model.prototypes must be >= 1");
    if (ffn_width == 0) throw ConfigError("model.ffn_width must be >= 1");
    if (max_tokens < 4) throw ConfigError("model.max_tokens must be >= 4");
    if (vocab_size <= kSpecialCount) throw ConfigError("model.vocab_size must be > 4");
    if (vocab_size < prototypes) throw ConfigError("model.vocab_size must be >= model.prototypes");
    if (lookback == 0) throw ConfigError("model.lookback must be >= 1");
    if (!(init_std > 0.0)) throw ConfigError("model.init_std must be > 0");
    layout.validate();
  }

  Vocabulary vocabulary() const { return Vocabulary{vocab_size, hash_seed}; }
};

/// h_Mar, h_BU, h_BE as plain vectors; h_Comp is the 2×d stack of h_BU, h_BE.
struct MarketHeads {
  std::vector<double> mar;
  std::vector<double> bu;
  std::vector<double> be;

  Tensor comp() const {
    std::vector<double> data(bu);
    data.insert(data.end(), be.begin(), be.end());
    return Tensor({2, bu.size()}, std::move(data));
  }
  std::size_t width() const { return mar.size(); }
};

/// Bull and bear attention over the fused sequence, plus their difference.
struct AttentionMaps {
  std::vector<double> bull;
  std::vector<double> bear;
  std::vector<double> bias;
};

/// x / close₀ − 1 for every entry of the window, close₀ being the first close.
inline Tensor normalize_window(const PriceWindow& window) {
  const Tensor& m = window.matrix;
  if (!m.all_finite()) throw DataError("price window for " + format_date(window.end_date) + " has non-finite values");
  const double base = m.at(0, 1);
  if (!(base > 0.0)) throw DataError("price window for " + format_date(window.end_date) + " has non-positive close");
  Tensor out = m;
  for (double& v : out.data()) v = v / base - 1.0;
  return out;
}

/// H' = P·H with P of shape m×V and H of shape V×d.
inline Var text_prototypes(const Var& base_embeddings, const Var& projection) {
  if (projection.cols() != base_embeddings.rows()) throw DimensionError("text_prototypes: projection width must equal V");
  if (projection.rows() > base_embeddings.rows()) throw DimensionError("text_prototypes: requires V >= m");
  return ad::matmul(projection, base_embeddings);
}

/// softmax(X·W_q (H'·W_k)ᵀ / √d_k) · H'. Each output row is a convex mix of prototype rows.
inline Var price_to_concept(const Tensor& normalized_window, const Var& prototypes, const Var& query_proj,
                            const Var& key_proj) {
  if (!normalized_window.all_finite()) throw DataError("price_to_concept: non-finite window");
  if (normalized_window.cols() != query_proj.rows()) throw DimensionError("price_to_concept: window width vs W_q");
  if (prototypes.cols() != key_proj.rows()) throw DimensionError("price_to_concept: prototype width vs W_k");
  Tape& tape = *prototypes.tape();
  Var window = tape.constant(normalized_window);
  Var queries = ad::matmul(window, query_proj);
  Var keys = ad::matmul(prototypes, key_proj);
  return ad::scaled_dot_attention(queries, keys, prototypes, std::sqrt(static_cast<double>(key_proj.cols())));
}

/// Row i = token_table[ids[i]] + positions[i].
inline Var embed_text(const TokenSequence& tokens, const Var& token_table, const std::optional<Var>& positions) {
  for (std::size_t id : tokens.ids) {
    if (id >= token_table.rows()) throw InternalError("token id " + std::to_string(id) + " out of vocabulary range");
  }
  Var rows = ad::gather_rows(token_table, tokens.ids);
  if (!positions) return rows;
  if (positions->rows() < tokens.length()) throw DimensionError("embed_text: positional table shorter than sequence");
  return ad::add(rows, ad::slice_rows(*positions, 0, tokens.length()));
}

/// Fused sequence E with text rows first, then price rows.
struct Fused {
  Var rows;
  std::size_t text_rows = 0;
  std::size_t price_rows = 0;

  bool is_price_row(std::size_t r) const { return r >= text_rows; }
};

inline Fused fuse(const Var& text, const std::optional<Var>& price) {
  if (!price) return Fused{text, text.rows(), 0};
  if (text.cols() != price->cols()) {
    throw DimensionError("fuse: text width " + std::to_string(text.cols()) + " vs price width " +
                         std::to_string(price->cols()));
  }
  return Fused{ad::concat_rows({text, *price}), text.rows(), price->rows()};
}

/// Bound variables of one pre-norm encoder block.
struct EncoderLayer {
  Var norm1_gain, norm1_bias;
  Var query, key, value, output;
  Var norm2_gain, norm2_bias;
  Var ffn_in, ffn_in_bias, ffn_out, ffn_out_bias;
};

/// x ← x + Attn(LN(x)); x ← x + FFN(LN(x)) for each layer. Keys with
/// key_mask=false (padding) receive no attention.
inline Var encode(const Var& fused, const std::vector<EncoderLayer>& layers, const std::vector<bool>& key_mask = {}) {
  if (fused.rows() < 3) throw DimensionError("encode: fused sequence needs at least 3 rows");
  Var x = fused;
  const double scale_by = std::sqrt(static_cast<double>(fused.cols()));
  for (const EncoderLayer& layer : layers) {
    Var y = ad::layer_norm_rows(x, layer.norm1_gain, layer.norm1_bias);
    Var attended = ad::scaled_dot_attention(ad::matmul(y, layer.query), ad::matmul(y, layer.key),
                                            ad::matmul(y, layer.value), scale_by, key_mask);
    x = ad::add(x, ad::matmul(attended, layer.output));
    Var z = ad::layer_norm_rows(x, layer.norm2_gain, layer.norm2_bias);
    Var hidden = ad::gelu(ad::add_row_bias(ad::matmul(z, layer.ffn_in), layer.ffn_in_bias));
    x = ad::add(x, ad::add_row_bias(ad::matmul(hidden, layer.ffn_out), layer.ffn_out_bias));
  }
  return x;
}

struct HeadVars {
  Var mar;   ///< 1×d, row at [CLS]
  Var comp;  ///< 2×d, rows at [UP], [DOWN]
  Var bu;    ///< 1×d
  Var be;    ///< 1×d
};

/// Rows of h at the stored special-token positions.
inline HeadVars extract_heads(const Var& h, const TokenSequence& tokens) {
  for (std::size_t pos : {tokens.cls_pos, tokens.up_pos, tokens.down_pos}) {
    if (pos >= h.rows() || pos >= tokens.length()) throw InternalError("special-token position outside the sequence");
  }
  if (tokens.ids[tokens.cls_pos] != token_id(SpecialToken::Cls) ||
      tokens.ids[tokens.up_pos] != token_id(SpecialToken::Up) ||
      tokens.ids[tokens.down_pos] != token_id(SpecialToken::Down)) {
    throw InternalError("special-token positions do not hold [CLS]/[UP]/[DOWN]");
  }
  HeadVars heads;
  heads.mar = ad::slice_rows(h, tokens.cls_pos, 1);
  heads.bu = ad::slice_rows(h, tokens.up_pos, 1);
  heads.be = ad::slice_rows(h, tokens.down_pos, 1);
  heads.comp = ad::concat_rows({heads.bu, heads.be});
  return heads;
}

struct AttentionMapVars {
  Var bull;  ///< 1×|E|
  Var bear;  ///< 1×|E|
};

/// A = h_head · hᵀ / √d for both heads.
inline AttentionMapVars bias_attention(const HeadVars& heads, const Var& h) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(h.cols()));
  return {ad::scale(ad::matmul_nt(heads.bu, h), inv), ad::scale(ad::matmul_nt(heads.be, h), inv)};
}

/// Tape-free attention maps from plain heads.
inline AttentionMaps bias_attention(const MarketHeads& heads, const Tensor& h) {
  if (heads.width() == 0 || h.cols() != heads.width()) throw DimensionError("bias_attention: width mismatch");
  const double inv = 1.0 / std::sqrt(static_cast<double>(h.cols()));
  AttentionMaps maps;
  for (std::size_t r = 0; r < h.rows(); ++r) {
    const double bull = dot(heads.bu, h.row(r)) * inv;
    const double bear = dot(heads.be, h.row(r)) * inv;
    maps.bull.push_back(bull);
    maps.bear.push_back(bear);
    maps.bias.push_back(bull - bear);
  }
  return maps;
}

inline MarketHeads to_plain(const HeadVars& heads) {
  auto vec = [](const Var& v) { return std::vector<double>(v.value().data().begin(), v.value().data().end()); };
  return MarketHeads{vec(heads.mar), vec(heads.bu), vec(heads.be)};
}

/// The full representation model with its trainable parameters.
///
/// Parameter keys (also the checkpoint keys):
///   token_embedding [V,d], position_embedding [L,d], prototype_projection [m,V],
///   price_query [4,d_k], prototype_key [d,d_k], and per layer n:
///   layer<n>.norm1.gain/.bias [d], layer<n>.attn.query/.key/.value/.output [d,d],
///   layer<n>.norm2.gain/.bias [d], layer<n>.ffn.in [d,f], layer<n>.ffn.in_bias [f],
///   layer<n>.ffn.out [f,d], layer<n>.ffn.out_bias [d].
class B4Model {
 public:
  struct Bound {
    Var token_table;
    Var positions;
    Var prototype_projection;
    Var price_query;
    Var prototype_key;
    Var prototypes;  ///< H'
    std::vector<EncoderLayer> layers;
  };

  struct SampleOutput {
    TokenSequence tokens;
    Fused fused;
    Var h;
    HeadVars heads;
  };

  /// Plain inference result for one sample.
  struct Inference {
    TokenSequence tokens;
    std::size_t text_rows = 0;
    Tensor h;
    MarketHeads heads;
    AttentionMaps maps;
  };

  B4Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const double s = cfg_.init_std;
    const std::size_t d = cfg_.width;
    params_.add("token_embedding", normal_tensor({cfg_.vocab_size, d}, s, rng));
    params_.add("position_embedding", normal_tensor({cfg_.max_tokens, d}, s, rng));
    params_.add("prototype_projection", normal_tensor({cfg_.prototypes, cfg_.vocab_size}, s, rng));
    params_.add("price_query", normal_tensor({4, cfg_.key_width}, s, rng));
    params_.add("prototype_key", normal_tensor({d, cfg_.key_width}, s, rng));
    for (std::size_t n = 0; n < cfg_.layers; ++n) {
      const std::string p = "layer" + std::to_string(n) + ".";
      params_.add(p + "norm1.gain", Tensor({d}, 1.0));
      params_.add(p + "norm1.bias", Tensor({d}, 0.0));
      params_.add(p + "attn.query", normal_tensor({d, d}, s, rng));
      params_.add(p + "attn.key", normal_tensor({d, d}, s, rng));
      params_.add(p + "attn.value", normal_tensor({d, d}, s, rng));
      params_.add(p + "attn.output", normal_tensor({d, d}, s, rng));
      params_.add(p + "norm2.gain", Tensor({d}, 1.0));
      params_.add(p + "norm2.bias", Tensor({d}, 0.0));
      params_.add(p + "ffn.in", normal_tensor({d, cfg_.ffn_width}, s, rng));
      params_.add(p + "ffn.in_bias", Tensor({cfg_.ffn_width}, 0.0));
      params_.add(p + "ffn.out", normal_tensor({cfg_.ffn_width, d}, s, rng));
      params_.add(p + "ffn.out_bias", Tensor({d}, 0.0));
    }
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }
  Vocabulary vocabulary() const { return cfg_.vocabulary(); }

  /// Registers all parameters on the tape and computes the prototypes once.
  Bound bind(Tape& tape) {
    Bound b;
    b.token_table = tape.param(params_.get("token_embedding"));
    b.positions = tape.param(params_.get("position_embedding"));
    b.prototype_projection = tape.param(params_.get("prototype_projection"));
    b.price_query = tape.param(params_.get("price_query"));
    b.prototype_key = tape.param(params_.get("prototype_key"));
    b.prototypes = text_prototypes(b.token_table, b.prototype_projection);
    for (std::size_t n = 0; n < cfg_.layers; ++n) {
      const std::string p = "layer" + std::to_string(n) + ".";
      auto v = [&](const char* name) { return tape.param(params_.get(p + name)); };
      b.layers.push_back(EncoderLayer{v("norm1.gain"), v("norm1.bias"), v("attn.query"), v("attn.key"),
                                      v("attn.value"), v("attn.output"), v("norm2.gain"), v("norm2.bias"),
                                      v("ffn.in"), v("ffn.in_bias"), v("ffn.out"), v("ffn.out_bias")});
    }
    return b;
  }

  SampleOutput forward(const Bound& b, const AlignedSample& sample) const {
    if (sample.window.length() != cfg_.lookback) {
      throw DimensionError("sample window has " + std::to_string(sample.window.length()) + " rows, model expects " +
                           std::to_string(cfg_.lookback));
    }
    SampleOutput out;
    out.tokens = tokenize_augment(sample.news, vocabulary(), cfg_.max_tokens, cfg_.layout);
    Var text = embed_text(out.tokens, b.token_table, b.positions);
    Var price = price_to_concept(normalize_window(sample.window), b.prototypes, b.price_query, b.prototype_key);
    out.fused = fuse(text, price);
    std::vector<bool> mask;
    if (cfg_.mask_padding) {
      mask.assign(out.fused.text_rows + out.fused.price_rows, true);
      for (std::size_t r = 0; r < out.fused.text_rows; ++r) mask[r] = !out.tokens.is_padding(r);
    }
    out.h = encode(out.fused.rows, b.layers, mask);
    out.heads = extract_heads(out.h, out.tokens);
    return out;
  }

  /// Binds parameters as non-differentiable views, reusing precomputed prototypes.
  Bound bind_frozen(Tape& tape, const Tensor& prototypes) const {
    Bound b;
    b.token_table = tape.view(params_.get("token_embedding").value);
    b.positions = tape.view(params_.get("position_embedding").value);
    b.prototype_projection = tape.view(params_.get("prototype_projection").value);
    b.price_query = tape.view(params_.get("price_query").value);
    b.prototype_key = tape.view(params_.get("prototype_key").value);
    b.prototypes = tape.view(prototypes);
    for (std::size_t n = 0; n < cfg_.layers; ++n) {
      const std::string p = "layer" + std::to_string(n) + ".";
      auto v = [&](const char* name) { return tape.view(params_.get(p + name).value); };
      b.layers.push_back(EncoderLayer{v("norm1.gain"), v("norm1.bias"), v("attn.query"), v("attn.key"),
                                      v("attn.value"), v("attn.output"), v("norm2.gain"), v("norm2.bias"),
                                      v("ffn.in"), v("ffn.in_bias"), v("ffn.out"), v("ffn.out_bias")});
    }
    return b;
  }

  /// Current H' = P·H as a plain tensor.
  Tensor current_prototypes() const {
    return kernels::matmul(params_.get("prototype_projection").value, params_.get("token_embedding").value);
  }

  /// Forward passes without gradient bookkeeping; prototypes computed once.
  std::vector<Inference> infer(const std::vector<AlignedSample>& samples) const {
    const Tensor prototypes = current_prototypes();
    std::vector<Inference> out;
    out.reserve(samples.size());
    for (const AlignedSample& sample : samples) {
      Tape tape;
      Bound b = bind_frozen(tape, prototypes);
      SampleOutput o = forward(b, sample);
      Inference inf;
      inf.tokens = std::move(o.tokens);
      inf.text_rows = o.fused.text_rows;
      inf.h = o.h.value();
      inf.heads = to_plain(o.heads);
      inf.maps = bias_attention(inf.heads, inf.h);
      out.push_back(std::move(inf));
    }
    return out;
  }

  Inference infer(const AlignedSample& sample) const { return std::move(infer(std::vector<AlignedSample>{sample}).front()); }

 private:
  ModelConfig cfg_;
  ParamStore params_;
};

}  // namespace b4
