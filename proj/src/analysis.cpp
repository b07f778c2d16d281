// SPDX-License-Identifier: Apache-2.0
#include "attrlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attrlab/alignment.hpp"

namespace attrlab {

std::size_t unique_instance_count(
    const std::map<std::string, std::vector<std::string>>& per_test_top) {
  std::set<std::string> all;
  for (const auto& [test, ids] : per_test_top) all.insert(ids.begin(), ids.end());
  return all.size();
}

double instance_overlap(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  if (sa.empty() || sb.empty()) throw InvalidArgument("instance_overlap: empty input");
  std::size_t common = 0;
  for (const auto& id : sa) common += sb.contains(id) ? 1 : 0;
  return 100.0 * static_cast<double>(common) / static_cast<double>(std::max(sa.size(), sb.size()));
}

NeuronOverlap neuron_overlap_on_union(const std::set<NeuronId>& na_top,
                                      const std::set<NeuronId>& ia_top) {
  std::size_t shared = 0;
  for (const auto& n : na_top) shared += ia_top.contains(n) ? 1 : 0;
  const std::size_t uni = na_top.size() + ia_top.size() - shared;
  if (uni == 0) throw InvalidArgument("neuron_overlap_on_union: empty union");
  const double u = static_cast<double>(uni);
  NeuronOverlap out;
  out.shared_pct = 100.0 * static_cast<double>(shared) / u;
  out.na_only_pct = 100.0 * static_cast<double>(na_top.size() - shared) / u;
  out.ia_only_pct = 100.0 * static_cast<double>(ia_top.size() - shared) / u;
  return out;
}

nlohmann::ordered_json DiversityMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["mean_pairwise_cosine"] =
      mean_pairwise_cosine ? nlohmann::ordered_json(*mean_pairwise_cosine) : nlohmann::ordered_json();
  j["mean_loss"] = mean_loss;
  j["vocabulary"] = vocabulary;
  j["mean_input_length"] = mean_input_length;
  return j;
}

DiversityMetrics diversity_from_traces(const std::vector<Vector>& hidden,
                                       const std::vector<double>& losses,
                                       const std::vector<TokenSeq>& inputs) {
  const std::size_t n = hidden.size();
  if (n == 0) throw InvalidArgument("diversity_metrics: empty subset");
  if (losses.size() != n || inputs.size() != n)
    throw InvalidArgument("diversity_metrics: size mismatch");
  DiversityMetrics out;
  if (n > 1) {
    // sum over unordered pairs via the sorted unit vectors keeps the result order-free
    std::vector<Vector> unit(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double norm = hidden[i].norm();
      unit[i] = norm > 0.0 ? Vector(hidden[i] / norm) : Vector(Vector::Zero(hidden[i].size()));
    }
    std::vector<double> cos;
    cos.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) cos.push_back(unit[i].dot(unit[j]));
    std::sort(cos.begin(), cos.end());
    out.mean_pairwise_cosine =
        std::accumulate(cos.begin(), cos.end(), 0.0) / static_cast<double>(cos.size());
  }
  std::vector<double> sorted_losses = losses;
  std::sort(sorted_losses.begin(), sorted_losses.end());
  out.mean_loss = std::accumulate(sorted_losses.begin(), sorted_losses.end(), 0.0) /
                  static_cast<double>(n);
  std::set<TokenId> vocab;
  std::size_t total_len = 0;
  for (const auto& seq : inputs) {
    vocab.insert(seq.begin(), seq.end());
    total_len += seq.size();
  }
  out.vocabulary = vocab.size();
  out.mean_input_length = static_cast<double>(total_len) / static_cast<double>(n);
  return out;
}

DiversityMetrics diversity_metrics(const Dataset& subset, const Parameters& params, int jobs) {
  const std::size_t n = subset.size();
  if (n == 0) throw InvalidArgument("diversity_metrics: empty subset");
  std::vector<Vector> hidden(n);
  std::vector<double> losses(n);
  std::vector<TokenSeq> inputs(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    inputs[i] = model_input(subset[i], params.config.max_seq_len);
    auto trace = forward(params, inputs[i]);
    losses[i] = loss(trace, subset[i].label);
    hidden[i] = std::move(trace.last_hidden);
  });
  return diversity_from_traces(hidden, losses, inputs);
}

double regression_coefficient(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InvalidArgument("regression: x and y differ in length");
  if (x.size() < 2) throw InvalidArgument("regression: at least two points are required");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw InvalidArgument("regression: x is constant");
  return sxy / sxx;
}

nlohmann::ordered_json ArtifactReport::to_json() const {
  nlohmann::ordered_json rs = nlohmann::ordered_json::array();
  for (const auto& r : rows)
    rs.push_back({{"method", r.method},
                  {"k", r.k},
                  {"mean_overlap", r.mean_overlap},
                  {"n_instances", r.n_instances}});
  return {{"empty", empty},
          {"n_mispredicted", mispredicted.size()},
          {"mispredicted", mispredicted},
          {"train_base_rate", train_base_rate},
          {"rows", std::move(rs)}};
}

double random_overlap_baseline(const Dataset& train_set, const std::vector<std::string>& test_ids,
                               std::size_t k, std::uint64_t seed) {
  if (test_ids.empty()) return 0.0;
  const std::size_t n = train_set.size();
  const std::size_t kk = std::min(k, n);
  std::vector<double> overlap(n);
  for (std::size_t i = 0; i < n; ++i) overlap[i] = lexical_overlap(train_set[i]);
  double total = 0.0;
  std::vector<std::size_t> idx(n);
  for (const auto& id : test_ids) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(seed, id));
    double sum = 0.0;
    for (std::size_t i = 0; i < kk; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(idx[i], idx[j]);
      sum += overlap[idx[i]];
    }
    total += sum / static_cast<double>(kk);
  }
  return total / static_cast<double>(test_ids.size());
}

ArtifactReport artifact_detection(const AttributionContext& ctx, const Dataset& heuristic_test_set,
                                  const std::vector<IaMethod>& methods,
                                  const std::vector<std::size_t>& ks, std::uint64_t seed) {
  const auto& params = ctx.params();
  const auto& train = ctx.train();
  ArtifactReport rep;
  double base = 0.0;
  for (const auto& inst : train.instances) base += lexical_overlap(inst);
  rep.train_base_rate = base / static_cast<double>(train.size());

  const auto preds = predict_all(params, heuristic_test_set, ctx.options().jobs);
  std::vector<const Instance*> picked;
  for (std::size_t i = 0; i < heuristic_test_set.size(); ++i) {
    const auto& inst = heuristic_test_set[i];
    if (!inst.hypothesis)
      throw InvalidArgument("artifact_detection: instance " + inst.id + " has no hypothesis");
    if (preds[i] == kEntails && inst.label != kEntails) {
      picked.push_back(&inst);
      rep.mispredicted.push_back(inst.id);
    }
  }
  rep.empty = picked.empty();
  if (rep.empty) return rep;

  std::vector<double> train_overlap(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) train_overlap[i] = lexical_overlap(train[i]);

  for (IaMethod m : methods) {
    std::vector<InstanceScores> scores(picked.size());
    parallel_for(picked.size(), ctx.options().jobs,
                 [&](std::size_t i) { scores[i] = instance_scores(ctx, *picked[i], m); });
    for (std::size_t k : ks) {
      const std::size_t kk = std::min(k, train.size());
      double total = 0.0;
      for (const auto& s : scores) {
        double sum = 0.0;
        for (std::size_t i = 0; i < kk; ++i) sum += train_overlap[train.index_of(s.ranking[i])];
        total += sum / static_cast<double>(kk);
      }
      rep.rows.push_back({to_string(m), k, total / static_cast<double>(scores.size()),
                          scores.size()});
    }
  }
  for (std::size_t k : ks)
    rep.rows.push_back({"Random", k, random_overlap_baseline(train, rep.mispredicted, k, seed),
                        rep.mispredicted.size()});
  return rep;
}

}  // namespace attrlab
