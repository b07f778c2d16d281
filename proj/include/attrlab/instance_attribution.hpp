// SPDX-License-Identifier: Apache-2.0
//
// Influence-function and gradient-similarity scoring of training instances,
// restricted to the classification-head parameters.
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrlab/gradients.hpp"
#include "attrlab/neuron_attribution.hpp"

namespace attrlab {

enum class IaMethod { kIF, kGS, kNAInstances };

std::string to_string(IaMethod m);
IaMethod parse_ia_method(const std::string& s);  // "if" | "gs" | "na-instances" (any case)

/// Which label the test-side loss gradient uses.
enum class LabelSource { kPredicted, kGold };

struct AttributionOptions {
  double damping = kDefaultDamping;
  std::size_t ig_steps = kDefaultIgSteps;
  TargetMode neuron_target = TargetMode::kPredicted;
  LabelSource test_label = LabelSource::kPredicted;
  std::size_t r = 10;              // neuron list length for alignment
  bool dcns_normalized = true;     // feed min-max normalized scores to DCNS
  bool if_helpfulness = true;      // store g_test^T H^-1 g_train (false: the raw negated value)
  int jobs = 1;

  nlohmann::ordered_json to_json() const;
  static AttributionOptions from_json(const nlohmann::json& j);
};

struct InstanceScores {
  IaMethod method = IaMethod::kGS;
  std::string test_id;
  std::map<std::string, double> scores;  // train id -> score
  std::vector<std::string> ranking;      // most influential first, ties by id

  double score(const std::string& train_id) const { return scores.at(train_id); }
};

InstanceScores make_instance_scores(IaMethod method, std::string test_id,
                                    const std::vector<std::string>& train_ids,
                                    const std::vector<double>& values);

/// Read-only caches shared by the attribution methods for one trained model
/// and training set. Every cache is filled once on first use (thread-safe).
class AttributionContext {
 public:
  AttributionContext(Parameters params, Dataset train, AttributionOptions opts = {});

  const Parameters& params() const { return params_; }
  const Dataset& train() const { return train_; }
  const AttributionOptions& options() const { return opts_; }
  std::vector<std::string> train_ids() const;

  const std::vector<HeadGradient>& train_gradients() const;
  const HessianMatrix& hessian() const;
  /// Full neuron score matrix of training instance i.
  const Matrix& train_neuron_scores(std::size_t i) const;
  /// Top-r ranking of training instance i (r from options, clamped to the neuron count).
  const RankedNeurons& train_top_neurons(std::size_t i) const;
  /// Cached by instance id.
  const NeuronAttribution& test_neurons(const Instance& inst) const;
  HeadGradient test_gradient(const Instance& inst) const;

 private:
  void compute_train_neurons() const;

  Parameters params_;
  Dataset train_;
  AttributionOptions opts_;

  mutable std::once_flag grads_once_, hessian_once_, neurons_once_;
  mutable std::vector<HeadGradient> train_grads_;
  mutable std::unique_ptr<HessianMatrix> hessian_;
  mutable std::vector<Matrix> train_neuron_scores_;
  mutable std::vector<RankedNeurons> train_top_;
  mutable std::mutex test_mu_;
  mutable std::unordered_map<std::string, std::unique_ptr<NeuronAttribution>> test_cache_;
};

InstanceScores gs_scores(const Parameters& params, const Instance& test_instance,
                         const Dataset& train_set, LabelSource test_label = LabelSource::kPredicted);
InstanceScores if_scores(const Parameters& params, const Instance& test_instance,
                         const Dataset& train_set, const HessianMatrix& hessian,
                         LabelSource test_label = LabelSource::kPredicted,
                         bool helpfulness = true);

InstanceScores gs_scores(const AttributionContext& ctx, const Instance& test_instance);
InstanceScores if_scores(const AttributionContext& ctx, const Instance& test_instance);

enum class Direction { kMost, kLeast };
std::string to_string(Direction d);
Direction parse_direction(const std::string& s);

/// First (most) or last (least) ceil(fraction * N) ids of the ranking.
std::vector<std::string> select_fraction(const InstanceScores& scores, double fraction,
                                         Direction direction);
std::vector<std::string> select_fraction(const std::vector<std::string>& ranking, double fraction,
                                         Direction direction);

/// Score dump rows: test_id,train_id,method,score.
void write_score_csv(const std::vector<InstanceScores>& all, const std::filesystem::path& path,
                     const std::string& header_comment = {});
nlohmann::ordered_json rankings_to_json(const std::vector<InstanceScores>& all);
std::vector<InstanceScores> read_score_csv(const std::filesystem::path& path);

}  // namespace attrlab
