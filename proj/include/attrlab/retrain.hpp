// SPDX-License-Identifier: Apache-2.0
//
// Retraining on influential subsets of the training data and accuracy sweeps
// over subset fractions.
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrlab/instance_attribution.hpp"

namespace attrlab {

struct RetrainResult {
  double accuracy = 0.0;
  double preserved_pct = 0.0;  // share of test predictions matching the original model
  std::vector<EpochStats> history;
};

/// Trains on the subset only and evaluates on test_set. The subset is taken
/// in full-train order, so subset == full train with the original seeds
/// reproduces the original model. Starts from init_model(base_config) unless
/// `init` is given.
RetrainResult retrain_eval(const ModelConfig& base_config, const std::vector<std::string>& subset,
                           const Dataset& full_train, const Dataset& test_set,
                           const TrainHyper& hp, std::uint64_t seed,
                           const std::vector<int>& original_predictions,
                           const Parameters* init = nullptr);

enum class SweepMethod { kIF, kGS, kNAInstances, kRandom };
enum class Aggregation { kSum, kMax };

std::string to_string(SweepMethod m);
SweepMethod parse_sweep_method(const std::string& s);  // "if" | "gs" | "na-instances" | "random"
std::string to_string(Aggregation a);
Aggregation parse_aggregation(const std::string& s);

/// Pools per-test-instance scores into one training ranking: aggregate
/// score per train id (sum or max over test instances), descending, ties by id.
std::vector<std::string> global_ranking(const std::vector<InstanceScores>& per_test,
                                        Aggregation agg = Aggregation::kSum);
/// Seeded permutation of the train ids.
std::vector<std::string> random_ranking(const std::vector<std::string>& train_ids,
                                        std::uint64_t seed);

inline const std::vector<double> kDefaultFractions = {0.1, 0.2, 0.33, 0.5};

struct SweepConfig {
  std::vector<SweepMethod> methods = {SweepMethod::kIF, SweepMethod::kGS,
                                      SweepMethod::kNAInstances, SweepMethod::kRandom};
  std::vector<Direction> directions = {Direction::kMost, Direction::kLeast};
  std::vector<double> fractions = kDefaultFractions;
  std::vector<std::uint64_t> seeds = {0};
  bool from_checkpoint = false;  // start each run from the trained model instead of a fresh init
  int jobs = 1;
};

struct SweepPoint {
  SweepMethod method = SweepMethod::kRandom;
  Direction direction = Direction::kMost;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::vector<std::string> subset;
  RetrainResult result;
};

/// Subset manifest: enough to rerun a single sweep point.
nlohmann::ordered_json subset_manifest(const SweepPoint& point, const ModelConfig& base_config,
                                       const TrainHyper& hp, bool from_checkpoint);
std::string manifest_filename(const SweepPoint& point);
/// Reruns a manifest. `init` is required when the manifest was produced from
/// a checkpoint.
RetrainResult rerun_manifest(const nlohmann::json& manifest, const Dataset& full_train,
                             const Dataset& test_set, const std::vector<int>& original_predictions,
                             const Parameters* init = nullptr);

/// rankings holds the global ranking of every attribution method in
/// cfg.methods (Random is derived per seed and need not be present).
std::vector<SweepPoint> sweep(const SweepConfig& cfg, const Parameters& original,
                              const TrainHyper& hp, const Dataset& full_train,
                              const Dataset& test_set,
                              const std::map<SweepMethod, std::vector<std::string>>& rankings);

/// Columns: method,direction,fraction,seed,accuracy,preserved_pct.
void write_curve_csv(const std::vector<SweepPoint>& points, const std::filesystem::path& path,
                     const std::string& header_comment = {});
/// Plot-ready series: one per (method, direction), x = fraction, y = mean accuracy over seeds.
nlohmann::ordered_json curves_to_json(const std::vector<SweepPoint>& points);

}  // namespace attrlab
