// SPDX-License-Identifier: Apache-2.0
//
// Experiment plumbing shared by the command-line tool and the Python module:
// the JSON config schema, provenance headers and the data directory layout.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrlab/data.hpp"
#include "attrlab/instance_attribution.hpp"
#include "attrlab/model.hpp"
#include "attrlab/retrain.hpp"

namespace attrlab {

/// Config file problems (unknown keys, wrong types, bad values).
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct AnalysisOptions {
  std::vector<double> fractions = kDefaultFractions;
  std::vector<std::uint64_t> sweep_seeds = {0, 1, 2};
  std::vector<std::uint64_t> faithfulness_seeds = {0, 1, 2};
  std::size_t sufficiency_r = 1;
  std::size_t comprehensiveness_r = 100;
  Aggregation aggregation = Aggregation::kSum;
  bool from_checkpoint = false;
  std::vector<std::size_t> artifact_ks = {1, 10};
  std::uint64_t artifact_seed = 0;

  nlohmann::ordered_json to_json() const;
  static AnalysisOptions from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
  GenConfig data;
  ModelConfig model;
  TrainHyper train;
  AttributionOptions attribution;
  AnalysisOptions analysis;

  nlohmann::ordered_json to_json() const;
  /// Rejects unknown sections and unknown keys inside a section.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string hash() const;
};

std::string read_file(const std::filesystem::path& path);
/// FNV-1a of the file bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);
/// Hash over the sorted relative names and contents of every regular file.
std::string directory_hash(const std::filesystem::path& dir);
void write_text(const std::filesystem::path& path, const std::string& text);
/// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j);
nlohmann::json read_json(const std::filesystem::path& path);

struct Provenance {
  std::string command;
  std::string config_hash;
  std::string checkpoint_hash;
  std::string data_hash;
  std::optional<std::uint64_t> seed;
  std::string tool_version{kToolVersion};

  /// Single line for CSV "# " headers.
  std::string comment() const;
  nlohmann::ordered_json to_json() const;
};

/// train.jsonl, test.jsonl, counterexamples.jsonl, vocab.json, manifest.json.
struct DataDir {
  Dataset train;
  Dataset test;
  Dataset counterexamples;
  Vocab vocab;
};

void save_data_dir(const SyntheticNli& data, const std::filesystem::path& dir,
                   const Provenance& prov);
DataDir load_data_dir(const std::filesystem::path& dir);

/// Splits "a,b,c" and parses each item.
std::vector<std::string> split_list(const std::string& s, char sep = ',');

}  // namespace attrlab
