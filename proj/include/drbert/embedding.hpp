#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "drbert/autodiff.hpp"
#include "drbert/error.hpp"

namespace drbert {

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kClsId = 2;
inline constexpr std::size_t kSepId = 3;
inline constexpr std::size_t kNumReserved = 4;

inline std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

/// Token to id map. Ids 0..3 are [PAD], [UNK], [CLS], [SEP]; ordinary
/// tokens follow densely.
class Vocab {
 public:
  Vocab() {
    for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) insert(t);
  }

  /// Deterministic vocabulary: the sorted set of lowercased tokens.
  static Vocab build(const std::vector<std::vector<std::string>>& sentences) {
    std::set<std::string> tokens;
    for (const auto& s : sentences)
      for (const auto& t : s) tokens.insert(lowercase(t));
    Vocab v;
    for (const auto& t : tokens) v.insert(t);
    return v;
  }

  /// One token per line; line k becomes id 4 + k.
  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("vocab: cannot open " + path);
    Vocab v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) throw ValidationError("vocab: empty token at line " + std::to_string(lineno));
      if (v.ids_.count(line)) throw ValidationError("vocab: duplicate token '" + line + "' at line " + std::to_string(lineno));
      v.insert(line);
    }
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("vocab: cannot write " + path);
    for (std::size_t i = kNumReserved; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  }

  std::size_t id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
  }

  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const noexcept { return tokens_.size(); }

 private:
  void insert(const std::string& t) {
    ids_.emplace(t, tokens_.size());
    tokens_.push_back(t);
  }

  std::unordered_map<std::string, std::size_t> ids_;
  std::vector<std::string> tokens_;
};

/// Ids for "[CLS] sentence [SEP]" plus an attention mask (1 = real token).
struct TokenSequence {
  std::vector<std::size_t> ids;
  std::vector<std::uint8_t> mask;

  std::size_t length() const noexcept { return ids.size(); }
};

inline TokenSequence tokenize(const std::vector<std::string>& tokens, const Vocab& vocab) {
  if (tokens.empty()) throw ValidationError("tokenize: empty token list");
  TokenSequence seq;
  seq.ids.push_back(kClsId);
  for (const auto& t : tokens) seq.ids.push_back(vocab.id(lowercase(t)));
  seq.ids.push_back(kSepId);
  seq.mask.assign(seq.ids.size(), 1);
  return seq;
}

/// Pads in place to `length` with [PAD] / mask 0.
inline void pad_to(TokenSequence& seq, std::size_t length) {
  if (seq.ids.size() > length) {
    throw ValidationError("pad_to: sequence of length " + std::to_string(seq.ids.size()) + " exceeds " +
                          std::to_string(length));
  }
  seq.ids.resize(length, kPadId);
  seq.mask.resize(length, 0);
}

/// Learned token and position tables.
struct EmbeddingTable {
  ad::Var token;     // |V| x d_model
  ad::Var position;  // max_len x d_model
};

/// s[i] = token[ids[i]] + position[i].
inline ad::Var embed_sentence(const TokenSequence& seq, const EmbeddingTable& table) {
  std::size_t max_len = table.position->value.dim(0);
  if (seq.length() > max_len) {
    throw ValidationError("embed_sentence: sequence length " + std::to_string(seq.length()) +
                          " exceeds positional table of " + std::to_string(max_len));
  }
  std::size_t vocab = table.token->value.dim(0);
  for (auto id : seq.ids) {
    if (id >= vocab) {
      throw ValidationError("embed_sentence: token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(vocab));
    }
  }
  std::vector<std::size_t> positions(seq.length());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  return ad::add(ad::gather_rows(table.token, seq.ids), ad::gather_rows(table.position, positions));
}

/// Aspect vector: the single row when the span has one token, the mean of
/// the rows otherwise. `rows` holds the aspect tokens' original embeddings.
inline ad::Var aspect_embedding(const ad::Var& rows) {
  const Shape& s = rows->value.shape();
  if (s.size() != 2) throw DimensionError("aspect_embedding: expected rank 2, got " + shape_str(s));
  if (s[0] == 1) return ad::reshape(rows, Shape{s[1]});
  return ad::mean_rows(rows);
}

/// Aspect vector for the span [start, start+len) of sentence tokens, read
/// from the embedded sequence `s` (which carries [CLS] at row 0).
inline ad::Var aspect_embedding(const ad::Var& s, std::size_t start, std::size_t len) {
  if (len == 0) throw ValidationError("aspect_embedding: empty aspect");
  std::vector<std::size_t> rows(len);
  for (std::size_t j = 0; j < len; ++j) rows[j] = start + j + 1;
  return aspect_embedding(ad::gather_rows(s, rows));
}

}  // namespace drbert
