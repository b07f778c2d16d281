// SPDX-License-Identifier: Apache-2.0
//
// Tokenization, dataset ingestion and the synthetic NLI generator.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace attrlab {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kOov = 1;
  static constexpr TokenId kSep = 2;
  static constexpr TokenId kFirstRegular = 3;

  Vocab();

  /// Appends a regular token; returns its id. Existing tokens keep their id.
  TokenId add(const std::string& token);
  TokenId lookup(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return id_to_token_.size(); }
  bool contains(std::string_view token) const;

  nlohmann::ordered_json to_json() const;
  static Vocab from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const {
    return id_to_token_ == other.id_to_token_;
  }

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

/// Lowercased whitespace-delimited tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Most frequent tokens first, frequency ties broken lexicographically,
/// capped at max_size regular entries.
Vocab build_vocab(const std::vector<std::string>& corpus, std::size_t max_size);

TokenSeq to_ids(const Vocab& vocab, std::string_view text);

/// premise ++ [sep] ++ hypothesis, truncated to max_len by dropping premise
/// tokens from its end. If the hypothesis alone cannot fit, the premise is
/// emptied and the hypothesis is cut from its end.
TokenSeq combine(const TokenSeq& premise, const std::optional<TokenSeq>& hypothesis,
                 std::size_t max_len);

TokenSeq encode(const Vocab& vocab, std::string_view premise,
                const std::optional<std::string>& hypothesis, std::size_t max_len);

struct Instance {
  std::string id;
  TokenSeq premise;
  std::optional<TokenSeq> hypothesis;
  std::string raw_premise;
  std::optional<std::string> raw_hypothesis;
  int label = 0;
};

/// Model input for an already-tokenized instance.
TokenSeq model_input(const Instance& inst, std::size_t max_len);

struct Dataset {
  std::vector<Instance> instances;
  std::string split_name;
  std::vector<std::string> label_names;

  std::size_t size() const { return instances.size(); }
  const Instance& operator[](std::size_t i) const { return instances[i]; }
  /// Position of an instance id; throws when absent.
  std::size_t index_of(const std::string& id) const;
  Dataset subset(const std::vector<std::string>& ids) const;
  /// Throws InvalidArgument describing the first violated invariant.
  void validate(std::size_t vocab_size) const;
};

/// Fills premise/hypothesis ids from the raw text.
void encode_dataset(Dataset& ds, const Vocab& vocab);

struct JsonlSchema {
  std::string premise = "premise";
  std::string hypothesis;  // empty: single-text instances
  std::string label = "label";
  std::string id;  // empty: ids are "<split>-<line>"

  static JsonlSchema from_json(const nlohmann::json& j);
};

/// Raw-text dataset; call encode_dataset afterwards. String labels are mapped
/// through label_names, integer labels are taken as indices.
Dataset load_jsonl(const std::filesystem::path& path, const JsonlSchema& schema,
                   const std::vector<std::string>& label_names,
                   const std::string& split_name);

void write_jsonl(const Dataset& ds, const std::filesystem::path& path);

/// Jaccard overlap of the premise and hypothesis token sets.
double lexical_overlap(const Instance& inst);
bool is_ordered_subsequence(const TokenSeq& needle, const TokenSeq& haystack);

struct GenConfig {
  std::size_t vocab_size = 40;
  std::size_t n_train = 400;
  std::size_t n_test = 100;
  std::size_t n_counterexamples = 100;
  double artifact_rate = 0.9;
  std::size_t premise_min_len = 5;
  std::size_t premise_max_len = 8;

  static GenConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

struct SyntheticNli {
  Dataset train;
  Dataset test;
  Dataset counterexamples;
  Vocab vocab;
};

inline constexpr int kEntails = 0;
inline constexpr int kNotEntails = 1;
inline constexpr double kHighOverlap = 0.9;

/// Two-class task whose true rule is "hypothesis is an ordered subsequence of
/// the premise". In train/test, entails instances are verbatim copies with
/// probability artifact_rate (overlap 1.0); all other instances draw their
/// overlap from a shared distribution below kHighOverlap. Counterexamples are
/// full scrambles: overlap 1.0, label not-entails.
SyntheticNli gen_synthetic_nli(const GenConfig& cfg, std::uint64_t seed);

}  // namespace attrlab
