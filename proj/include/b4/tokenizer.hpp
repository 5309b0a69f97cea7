#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "b4/error.hpp"
#include "b4/ingest.hpp"

namespace b4 {

enum class SpecialToken : std::size_t { Cls = 0, Up = 1, Down = 2, Pad = 3 };
inline constexpr std::size_t kSpecialCount = 4;

inline constexpr std::size_t token_id(SpecialToken t) { return static_cast<std::size_t>(t); }

/// Hashed vocabulary: ids 0..3 are [CLS],[UP],[DOWN],[PAD]; words hash into [4, V).
struct Vocabulary {
  std::size_t size = 4096;
  std::uint64_t seed = 0;

  void validate() const {
    if (size <= kSpecialCount) throw ConfigError("model.vocab_size must exceed " + std::to_string(kSpecialCount));
  }

  /// FNV-1a over the lowercased word, offset basis mixed with the seed.
  std::size_t word_id(std::string_view word) const {
    std::uint64_t h = 14695981039346656037ull ^ seed;
    for (unsigned char c : word) {
      h ^= static_cast<unsigned char>(std::tolower(c));
      h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h % (size - kSpecialCount)) + kSpecialCount;
  }
};

/// Lowercase words split on anything that is not a letter or digit.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

/// Order of the three leading special tokens. Canonical is [CLS],[UP],[DOWN].
struct MarkerLayout {
  std::array<SpecialToken, 3> order{SpecialToken::Cls, SpecialToken::Up, SpecialToken::Down};

  static MarkerLayout canonical() { return {}; }
  /// Markers first, then [CLS]: the literal prepend-to-news reading.
  static MarkerLayout markers_first() { return {{SpecialToken::Up, SpecialToken::Down, SpecialToken::Cls}}; }

  void validate() const {
    bool seen[3] = {false, false, false};
    for (SpecialToken t : order) {
      const std::size_t k = token_id(t);
      if (k > 2 || seen[k]) throw ConfigError("marker layout must be a permutation of CLS, UP, DOWN");
      seen[k] = true;
    }
  }
};

struct TokenSequence {
  std::vector<std::size_t> ids;
  std::size_t cls_pos = 0;
  std::size_t up_pos = 1;
  std::size_t down_pos = 2;
  /// Source document of each position; -1 for special and padding tokens.
  std::vector<int> source_doc;

  std::size_t length() const { return ids.size(); }
  bool is_padding(std::size_t pos) const { return ids[pos] == token_id(SpecialToken::Pad); }
};

/// [CLS],[UP],[DOWN] (in layout order), hashed words of the day's documents in
/// order, then [PAD] up to exactly max_len ids. Overflowing words are dropped.
inline TokenSequence tokenize_augment(const std::vector<NewsDoc>& news, const Vocabulary& vocab, std::size_t max_len,
                                      const MarkerLayout& layout = {}) {
  if (max_len < 4) throw ConfigError("model.max_tokens must be >= 4");
  vocab.validate();
  layout.validate();
  TokenSequence seq;
  seq.ids.reserve(max_len);
  seq.source_doc.reserve(max_len);
  for (std::size_t p = 0; p < 3; ++p) {
    const SpecialToken t = layout.order[p];
    seq.ids.push_back(token_id(t));
    seq.source_doc.push_back(-1);
    if (t == SpecialToken::Cls) seq.cls_pos = p;
    if (t == SpecialToken::Up) seq.up_pos = p;
    if (t == SpecialToken::Down) seq.down_pos = p;
  }
  for (std::size_t d = 0; d < news.size() && seq.ids.size() < max_len; ++d) {
    for (const std::string& w : split_words(news[d].text)) {
      if (seq.ids.size() >= max_len) break;
      seq.ids.push_back(vocab.word_id(w));
      seq.source_doc.push_back(static_cast<int>(d));
    }
  }
  while (seq.ids.size() < max_len) {
    seq.ids.push_back(token_id(SpecialToken::Pad));
    seq.source_doc.push_back(-1);
  }
  return seq;
}

}  // namespace b4
