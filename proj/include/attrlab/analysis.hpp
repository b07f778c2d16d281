// SPDX-License-Identifier: Apache-2.0
//
// Overlap, diversity, regression and artifact-detection analytics over
// attribution outputs.
#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrlab/instance_attribution.hpp"

namespace attrlab {

/// Size of the union of all per-test top lists.
std::size_t unique_instance_count(const std::map<std::string, std::vector<std::string>>& per_test_top);

/// 100 * |A n B| / max(|A|, |B|) over the id sets.
double instance_overlap(const std::vector<std::string>& a, const std::vector<std::string>& b);

struct NeuronOverlap {
  double na_only_pct = 0.0;
  double ia_only_pct = 0.0;
  double shared_pct = 0.0;
};

/// Percentages of the union taken by each part.
NeuronOverlap neuron_overlap_on_union(const std::set<NeuronId>& na_top,
                                      const std::set<NeuronId>& ia_top);

struct DiversityMetrics {
  std::optional<double> mean_pairwise_cosine;  // empty for a single instance
  double mean_loss = 0.0;
  std::size_t vocabulary = 0;
  double mean_input_length = 0.0;

  nlohmann::ordered_json to_json() const;
};

/// Cosine over final-norm last-token hidden states, mean cross-entropy,
/// distinct token ids and mean encoded length.
DiversityMetrics diversity_metrics(const Dataset& subset, const Parameters& params, int jobs = 1);

/// Same metrics from precomputed hidden states, losses and inputs.
DiversityMetrics diversity_from_traces(const std::vector<Vector>& hidden,
                                       const std::vector<double>& losses,
                                       const std::vector<TokenSeq>& inputs);

/// Ordinary least-squares slope of y on x with a fitted intercept.
double regression_coefficient(const std::vector<double>& x, const std::vector<double>& y);

struct ArtifactRow {
  std::string method;
  std::size_t k = 0;
  double mean_overlap = 0.0;
  std::size_t n_instances = 0;
};

struct ArtifactReport {
  bool empty = true;                   // no instance mispredicted as entails
  std::vector<std::string> mispredicted;
  double train_base_rate = 0.0;        // mean overlap over the whole training set
  std::vector<ArtifactRow> rows;

  nlohmann::ordered_json to_json() const;
};

/// Keeps the heuristic instances the model predicts as entails although
/// their gold label is not-entails, then averages the lexical overlap of each
/// method's top-k training instances. A "Random" row samples k training
/// instances per test instance from `seed`.
ArtifactReport artifact_detection(const AttributionContext& ctx, const Dataset& heuristic_test_set,
                                  const std::vector<IaMethod>& methods,
                                  const std::vector<std::size_t>& ks, std::uint64_t seed);

/// Mean overlap of k uniformly drawn training instances, per test id.
double random_overlap_baseline(const Dataset& train_set, const std::vector<std::string>& test_ids,
                               std::size_t k, std::uint64_t seed);

}  // namespace attrlab
