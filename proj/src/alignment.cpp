// SPDX-License-Identifier: Apache-2.0
#include "attrlab/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace attrlab {

double dcns(const RankedNeurons& test_neurons, const RankedNeurons& train_neurons,
            bool use_normalized) {
  const std::set<NeuronId> test_set(test_neurons.neurons.begin(), test_neurons.neurons.end());
  const auto& ns = use_normalized ? train_neurons.normalized : train_neurons.scores;
  double total = 0.0;
  for (std::size_t i = 0; i < train_neurons.size(); ++i) {
    if (!test_set.contains(train_neurons.neurons[i])) continue;
    const double m = static_cast<double>(i + 1);
    total += (std::exp2(ns[i]) - 1.0) / std::log2(m + 1.0);
  }
  return total;
}

double dcns_upper_bound(std::size_t r) {
  double total = 0.0;
  for (std::size_t m = 1; m <= r; ++m) total += 1.0 / std::log2(static_cast<double>(m) + 1.0);
  return total;
}

RankedNeurons truncate(const RankedNeurons& ranked, std::size_t r) {
  const std::size_t n = std::min(r, ranked.size());
  return make_ranked({ranked.neurons.begin(), ranked.neurons.begin() + static_cast<std::ptrdiff_t>(n)},
                     {ranked.scores.begin(), ranked.scores.begin() + static_cast<std::ptrdiff_t>(n)});
}

InstanceScores na_instances(const AttributionContext& ctx, const Instance& test_instance) {
  const auto& opts = ctx.options();
  const std::size_t r = std::min(opts.r, ctx.params().config.total_neurons());
  const RankedNeurons test_top = top_r(ctx.test_neurons(test_instance).scores, r);
  const auto& train = ctx.train();
  std::vector<double> vals(train.size());
  // fill the train cache up front so workers only read it
  (void)ctx.train_top_neurons(0);
  parallel_for(train.size(), opts.jobs, [&](std::size_t i) {
    vals[i] = dcns(test_top, ctx.train_top_neurons(i), opts.dcns_normalized);
  });
  return make_instance_scores(IaMethod::kNAInstances, test_instance.id, ctx.train_ids(), vals);
}

InstanceScores na_instances(const Parameters& params, const Instance& test_instance,
                            const Dataset& train_set, std::size_t r, std::size_t m_steps) {
  AttributionOptions opts;
  opts.r = r;
  opts.ig_steps = m_steps;
  const AttributionContext ctx(params, train_set, opts);
  return na_instances(ctx, test_instance);
}

IaNeurons ia_neurons(const AttributionContext& ctx, const InstanceScores& scores, std::size_t r) {
  if (r == 0) throw InvalidArgument("ia_neurons: r must be at least 1");
  const auto& train = ctx.train();
  IaNeurons out;
  std::vector<NeuronId> raw, unique;
  std::set<NeuronId> seen;
  for (const auto& id : scores.ranking) {
    if (raw.size() >= r && unique.size() >= r) break;
    const NeuronId top = ctx.train_top_neurons(train.index_of(id)).neurons.front();
    if (raw.size() < r) {
      raw.push_back(top);
      out.raw_sources.push_back(id);
    }
    if (unique.size() < r && seen.insert(top).second) {
      unique.push_back(top);
      out.unique_sources.push_back(id);
    }
  }
  auto rank_scores = [](std::size_t n) {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<double>(n - i);
    return s;
  };
  out.short_list = raw.size() < r || unique.size() < r;
  const std::size_t n_raw = raw.size(), n_unique = unique.size();
  out.raw = make_ranked(std::move(raw), rank_scores(n_raw));
  out.unique = make_ranked(std::move(unique), rank_scores(n_unique));
  return out;
}

IaNeurons ia_neurons(const AttributionContext& ctx, const Instance& test_instance, IaMethod ia,
                     std::size_t r) {
  if (ia == IaMethod::kNAInstances)
    throw InvalidArgument("ia_neurons: method must be IF or GS");
  return ia_neurons(ctx, instance_scores(ctx, test_instance, ia), r);
}

InstanceScores instance_scores(const AttributionContext& ctx, const Instance& test_instance,
                               IaMethod method) {
  switch (method) {
    case IaMethod::kIF: return if_scores(ctx, test_instance);
    case IaMethod::kGS: return gs_scores(ctx, test_instance);
    case IaMethod::kNAInstances: return na_instances(ctx, test_instance);
  }
  throw InvalidArgument("unknown method");
}

}  // namespace attrlab
