// SPDX-License-Identifier: Apache-2.0
//
// Bridges between the two attribution families: ranking training instances
// by how well their important neurons match a test instance's (NA-Instances),
// and collecting the top neuron of each influential training instance
// (IA-Neurons).
#pragma once

#include <string>
#include <vector>

#include "attrlab/instance_attribution.hpp"

namespace attrlab {

/// Discounted cumulative neuron similarity. Walks the train list by rank m
/// (1-based) and adds (2^ns - 1) / log2(m + 1) whenever the neuron at that
/// rank also appears in the test list. ns is the train entry's normalized
/// score, or its raw score when `use_normalized` is false.
double dcns(const RankedNeurons& test_neurons, const RankedNeurons& train_neurons,
            bool use_normalized = true);

/// Largest value dcns can take for lists of length r with scores in [0, 1].
double dcns_upper_bound(std::size_t r);

/// Keeps the first r entries and recomputes the normalization over them.
RankedNeurons truncate(const RankedNeurons& ranked, std::size_t r);

InstanceScores na_instances(const AttributionContext& ctx, const Instance& test_instance);
InstanceScores na_instances(const Parameters& params, const Instance& test_instance,
                            const Dataset& train_set, std::size_t r = 10,
                            std::size_t m_steps = kDefaultIgSteps);

struct IaNeurons {
  RankedNeurons raw;                        // one entry per influential instance, duplicates kept
  std::vector<std::string> raw_sources;     // train id behind each raw entry
  RankedNeurons unique;                     // deduplicated, refilled from further instances
  std::vector<std::string> unique_sources;
  bool short_list = false;                  // fewer than r entries could be produced
};

/// Scores in the returned lists are rank-based (count - index) so the
/// descending-order invariant of RankedNeurons holds.
IaNeurons ia_neurons(const AttributionContext& ctx, const Instance& test_instance, IaMethod ia,
                     std::size_t r);
/// Same, from precomputed instance scores.
IaNeurons ia_neurons(const AttributionContext& ctx, const InstanceScores& scores, std::size_t r);

/// Dispatches to if_scores, gs_scores or na_instances.
InstanceScores instance_scores(const AttributionContext& ctx, const Instance& test_instance,
                               IaMethod method);

}  // namespace attrlab
