#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "drbert/error.hpp"
#include "drbert/rng.hpp"
#include "json.hpp"

namespace drbert {

enum class Polarity : std::size_t { kNegative = 0, kNeutral = 1, kPositive = 2 };

inline constexpr std::array<const char*, 3> kLabelNames = {"negative", "neutral", "positive"};

inline const char* label_name(std::size_t label) { return kLabelNames.at(label); }

inline std::size_t parse_label(const std::string& s) {
  for (std::size_t i = 0; i < kLabelNames.size(); ++i)
    if (s == kLabelNames[i]) return i;
  throw ValidationError("unknown label '" + s + "'");
}

struct DatasetRecord {
  std::vector<std::string> tokens;
  std::size_t aspect_start = 0;
  std::size_t aspect_len = 1;
  std::size_t label = 0;

  bool operator==(const DatasetRecord&) const = default;

  void validate() const {
    if (tokens.empty()) throw ValidationError("record has no tokens");
    if (aspect_len == 0) throw ValidationError("aspect_len must be at least 1");
    if (aspect_start + aspect_len > tokens.size()) {
      throw ValidationError("aspect span [" + std::to_string(aspect_start) + ", " +
                            std::to_string(aspect_start + aspect_len) + ") out of bounds for " +
                            std::to_string(tokens.size()) + " tokens");
    }
    if (label >= kLabelNames.size()) throw ValidationError("label index out of range");
  }
};

inline nlohmann::json to_json_line(const DatasetRecord& r) {
  return {{"tokens", r.tokens}, {"aspect_start", r.aspect_start}, {"aspect_len", r.aspect_len},
          {"label", label_name(r.label)}};
}

inline DatasetRecord parse_record(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("expected a JSON object");
  for (const char* key : {"tokens", "aspect_start", "aspect_len", "label"}) {
    if (!j.contains(key)) throw ValidationError(std::string("missing key '") + key + "'");
  }
  DatasetRecord r;
  const auto& toks = j["tokens"];
  if (!toks.is_array()) throw ValidationError("'tokens' must be an array of strings");
  for (const auto& t : toks) {
    if (!t.is_string()) throw ValidationError("'tokens' must be an array of strings");
    r.tokens.push_back(t.get<std::string>());
  }
  if (!j["aspect_start"].is_number_unsigned()) throw ValidationError("'aspect_start' must be a non-negative integer");
  if (!j["aspect_len"].is_number_unsigned()) throw ValidationError("'aspect_len' must be a positive integer");
  if (!j["label"].is_string()) throw ValidationError("'label' must be a string");
  r.aspect_start = j["aspect_start"].get<std::size_t>();
  r.aspect_len = j["aspect_len"].get<std::size_t>();
  r.label = parse_label(j["label"].get<std::string>());
  r.validate();
  return r;
}

/// One record per non-blank line; every error names its line number.
inline std::vector<DatasetRecord> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("load_jsonl: cannot open " + path);
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const ValidationError& e) {
      throw ValidationError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void write_jsonl(const std::vector<DatasetRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("write_jsonl: cannot write " + path);
  for (const auto& r : records) out << to_json_line(r).dump() << '\n';
}

// ---------------------------------------------------------------------------
// SemEval-2014 aspect-term XML
// ---------------------------------------------------------------------------

struct ConversionReport {
  std::vector<DatasetRecord> records;
  std::size_t sentences = 0;
  std::size_t terms = 0;
  std::size_t skipped_conflict = 0;
  std::size_t skipped_offsets = 0;
  std::size_t skipped_other = 0;
  std::array<std::size_t, 3> label_counts{};
  std::vector<std::string> diagnostics;
};

struct SpanToken {
  std::string text;
  std::size_t begin;  // character offsets, end exclusive
  std::size_t end;
};

/// Whitespace tokenization that also splits off punctuation marks, keeping
/// the character offsets of every token.
inline std::vector<SpanToken> tokenize_with_offsets(const std::string& text) {
  auto is_punct = [](unsigned char c) {
    return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':' || c == '(' || c == ')' || c == '"';
  };
  std::vector<SpanToken> out;
  std::size_t i = 0;
  while (i < text.size()) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (is_punct(c)) {
      out.push_back({std::string(1, text[i]), i, i + 1});
      ++i;
    } else {
      std::size_t j = i;
      while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) &&
             !is_punct(static_cast<unsigned char>(text[j])))
        ++j;
      out.push_back({text.substr(i, j - i), i, j});
      i = j;
    }
  }
  return out;
}

inline ConversionReport convert_semeval_xml(std::istream& xml) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_xml(xml, tree);
  } catch (const pt::xml_parser_error& e) {
    throw ValidationError(std::string("convert: malformed XML: ") + e.what());
  }
  ConversionReport rep;
  auto root = tree.get_child_optional("sentences");
  if (!root) throw ValidationError("convert: missing <sentences> root element");
  for (const auto& [tag, sentence] : *root) {
    if (tag != "sentence") continue;
    ++rep.sentences;
    std::string id = sentence.get<std::string>("<xmlattr>.id", std::to_string(rep.sentences));
    std::string text = sentence.get<std::string>("text", "");
    auto tokens = tokenize_with_offsets(text);
    auto terms = sentence.get_child_optional("aspectTerms");
    if (!terms) continue;
    for (const auto& [ttag, term] : *terms) {
      if (ttag != "aspectTerm") continue;
      ++rep.terms;
      std::string polarity = term.get<std::string>("<xmlattr>.polarity", "");
      std::string surface = term.get<std::string>("<xmlattr>.term", "");
      if (polarity == "conflict") {
        ++rep.skipped_conflict;
        continue;
      }
      std::size_t label;
      try {
        label = parse_label(polarity);
      } catch (const ValidationError&) {
        ++rep.skipped_other;
        rep.diagnostics.push_back("sentence " + id + ": term '" + surface + "' has unknown polarity '" + polarity + "'");
        continue;
      }
      auto from = term.get_optional<std::size_t>("<xmlattr>.from");
      auto to = term.get_optional<std::size_t>("<xmlattr>.to");
      if (!from || !to || *from >= *to) {
        ++rep.skipped_other;
        rep.diagnostics.push_back("sentence " + id + ": term '" + surface + "' lacks a valid from/to range");
        continue;
      }
      std::size_t first = tokens.size(), last = tokens.size();
      for (std::size_t k = 0; k < tokens.size(); ++k) {
        if (tokens[k].begin == *from) first = k;
        if (tokens[k].end == *to) last = k;
      }
      if (first == tokens.size() || last == tokens.size() || last < first) {
        ++rep.skipped_offsets;
        rep.diagnostics.push_back("sentence " + id + ": term '" + surface + "' offsets [" + std::to_string(*from) +
                                  ", " + std::to_string(*to) + ") do not fall on token boundaries");
        continue;
      }
      DatasetRecord r;
      for (const auto& t : tokens) r.tokens.push_back(t.text);
      r.aspect_start = first;
      r.aspect_len = last - first + 1;
      r.label = label;
      r.validate();
      ++rep.label_counts[label];
      rep.records.push_back(std::move(r));
    }
  }
  return rep;
}

inline ConversionReport convert_semeval_xml(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("convert: cannot open " + path);
  return convert_semeval_xml(in);
}

// ---------------------------------------------------------------------------
// Synthetic paired-aspect corpus
// ---------------------------------------------------------------------------

struct DatasetSplits {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> dev;
  std::vector<DatasetRecord> test;
};

namespace synth {

inline const std::vector<std::vector<std::string>>& aspects() {
  static const std::vector<std::vector<std::string>> v = {
      {"food"},    {"service"}, {"staff"},  {"ambience"},      {"price"},          {"menu"},
      {"decor"},   {"wine"},    {"dessert"}, {"music"},        {"location"},       {"coffee"},
      {"pasta"},   {"waiter"},  {"screen"}, {"keyboard"},      {"wine", "list"},   {"dining", "room"},
      {"system", "memory"},     {"battery", "life"}};
  return v;
}

inline const std::array<std::vector<std::string>, 3>& adjectives() {
  static const std::array<std::vector<std::string>, 3> v = {{
      {"terrible", "awful", "rude", "bland", "horrible", "poor", "disappointing", "dreadful", "slow", "mediocre"},
      {"average", "ordinary", "standard", "typical", "normal", "plain", "usual", "simple"},
      {"great", "excellent", "delicious", "friendly", "wonderful", "superb", "amazing", "lovely", "fantastic",
       "perfect"},
  }};
  return v;
}

// A1/J1 and A2/J2 are the two aspect slots and their adjectives; N is a
// neutral distractor adjective.
inline const std::vector<std::vector<std::string>>& templates() {
  static const std::vector<std::vector<std::string>> v = {
      {"the", "A1", "was", "J1", "but", "the", "A2", "was", "J2"},
      {"the", "A1", "is", "J1", ",", "while", "the", "A2", "is", "J2", "."},
      {"honestly", "the", "A1", "was", "J1", "and", "the", "A2", "was", "J2"},
      {"we", "thought", "the", "A1", "seemed", "J1", ";", "however", "the", "A2", "seemed", "J2", "today"},
      {"the", "A1", "here", "is", "J1", "although", "the", "A2", "is", "J2", "."},
      {"overall", "the", "A1", "felt", "J1", "yet", "the", "A2", "felt", "J2", "."},
      {"the", "place", "looked", "N", ",", "the", "A1", "was", "J1", "and", "the", "A2", "was", "J2"},
      {"the", "A1", "was", "J1", ",", "the", "street", "is", "N", ",", "the", "A2", "was", "J2"},
  };
  return v;
}

}  // namespace synth

/// Templated two-aspect sentences. Each sentence yields two records with
/// identical tokens, different aspect spans, and opposite labels (negative
/// and positive, order alternating in shuffled blocks). Neutral adjectives
/// appear only as distractors. Whole sentences are split 80/10/10 into
/// train/dev/test, keeping both records of a pair together.
inline DatasetSplits synth_dataset(std::uint64_t seed, std::size_t n_pairs) {
  if (n_pairs == 0) throw ValidationError("synth: n_pairs must be at least 1");
  static const std::array<std::pair<std::size_t, std::size_t>, 2> label_pairs = {{{0, 2}, {2, 0}}};
  Rng rng(seed);
  Rng order_rng = rng.split(1);
  const auto& asp = synth::aspects();
  const auto& adj = synth::adjectives();
  const auto& tpl = synth::templates();

  std::vector<std::size_t> label_order;
  std::vector<std::array<DatasetRecord, 2>> pairs;
  for (std::size_t k = 0; k < n_pairs; ++k) {
    if (k % label_pairs.size() == 0) {
      label_order = {0, 1};
      order_rng.shuffle(label_order);
    }
    auto [l1, l2] = label_pairs[label_order[k % label_pairs.size()]];
    const auto& t = tpl[rng.below(tpl.size())];
    std::size_t a1 = rng.below(asp.size());
    std::size_t a2 = rng.below(asp.size() - 1);
    if (a2 >= a1) ++a2;
    const std::string& j1 = adj[l1][rng.below(adj[l1].size())];
    const std::string& j2 = adj[l2][rng.below(adj[l2].size())];
    const std::string& jn = adj[1][rng.below(adj[1].size())];

    std::vector<std::string> tokens;
    std::size_t s1 = 0, s2 = 0;
    for (const auto& w : t) {
      if (w == "A1") {
        s1 = tokens.size();
        tokens.insert(tokens.end(), asp[a1].begin(), asp[a1].end());
      } else if (w == "A2") {
        s2 = tokens.size();
        tokens.insert(tokens.end(), asp[a2].begin(), asp[a2].end());
      } else if (w == "J1") {
        tokens.push_back(j1);
      } else if (w == "J2") {
        tokens.push_back(j2);
      } else if (w == "N") {
        tokens.push_back(jn);
      } else {
        tokens.push_back(w);
      }
    }
    pairs.push_back({DatasetRecord{tokens, s1, asp[a1].size(), l1}, DatasetRecord{tokens, s2, asp[a2].size(), l2}});
  }

  std::vector<std::size_t> idx(pairs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng split_rng = rng.split(2);
  split_rng.shuffle(idx);
  std::size_t n_test = n_pairs / 10;
  std::size_t n_dev = n_pairs / 10;
  DatasetSplits out;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto& dst = i < n_test ? out.test : (i < n_test + n_dev ? out.dev : out.train);
    dst.push_back(pairs[idx[i]][0]);
    dst.push_back(pairs[idx[i]][1]);
  }
  return out;
}

inline void write_splits(const DatasetSplits& s, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_jsonl(s.train, dir + "/train.jsonl");
  write_jsonl(s.dev, dir + "/dev.jsonl");
  write_jsonl(s.test, dir + "/test.jsonl");
}

/// Indices of records whose token sequence is shared with another record
/// carrying a different label.
inline std::vector<std::size_t> paired_indices(const std::vector<DatasetRecord>& records) {
  std::map<std::vector<std::string>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].tokens].push_back(i);
  std::vector<std::size_t> out;
  for (const auto& [tokens, members] : groups) {
    bool mixed = false;
    for (auto m : members) mixed = mixed || records[m].label != records[members[0]].label;
    if (mixed) out.insert(out.end(), members.begin(), members.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace drbert
