// SPDX-License-Identifier: Apache-2.0
//
// Integrated-gradients neuron attribution over MLP activations, and top-r
// neuron ranking.
#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "attrlab/model.hpp"

namespace attrlab {

enum class TargetMode { kPredicted, kGold };

inline constexpr std::size_t kDefaultIgSteps = 20;

/// Scores for every neuron: row = layer, column = unit.
struct NeuronAttribution {
  Matrix scores;
  int target = 0;
};

/// For each layer, integrates d probs[target] / d activation along the path
/// that scales the whole layer's activation matrix from 0 to its value
/// (right Riemann sum with `steps` points), then multiplies by the
/// activation. Contributions of all positions are summed per unit, so the
/// scores of a layer sum to approximately P(full) - P(layer zeroed).
NeuronAttribution attribute_neurons(const Parameters& params, std::span<const TokenId> tokens,
                                    int gold_label, std::size_t steps = kDefaultIgSteps,
                                    TargetMode target = TargetMode::kPredicted);
NeuronAttribution attribute_neurons(const Parameters& params, const Instance& inst,
                                    std::size_t steps = kDefaultIgSteps,
                                    TargetMode target = TargetMode::kPredicted);

struct RankedNeurons {
  std::vector<NeuronId> neurons;
  std::vector<double> scores;
  std::vector<double> normalized;  // min-max over the retained entries

  std::size_t size() const { return neurons.size(); }
  bool empty() const { return neurons.empty(); }
};

/// Descending by score, ties by (layer, unit). Throws when r is zero or
/// exceeds the neuron count.
RankedNeurons top_r(const Matrix& scores, std::size_t r);

/// Builds a ranking from pre-ordered entries, computing the normalization.
RankedNeurons make_ranked(std::vector<NeuronId> neurons, std::vector<double> scores);

/// Attribution dump: "layer,unit,score" rows, descending.
void write_neuron_dump(const RankedNeurons& ranked, const std::filesystem::path& path,
                       const std::string& header_comment = {});
RankedNeurons read_neuron_dump(const std::filesystem::path& path);

}  // namespace attrlab
