// SPDX-License-Identifier: Apache-2.0
#include "attrlab/retrain.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>

namespace attrlab {

RetrainResult retrain_eval(const ModelConfig& base_config, const std::vector<std::string>& subset,
                           const Dataset& full_train, const Dataset& test_set,
                           const TrainHyper& hp, std::uint64_t seed,
                           const std::vector<int>& original_predictions, const Parameters* init) {
  if (subset.empty()) throw InvalidArgument("retrain_eval: empty subset");
  if (original_predictions.size() != test_set.size())
    throw InvalidArgument("retrain_eval: original predictions do not match the test set");
  std::set<std::string> wanted(subset.begin(), subset.end());
  Dataset data;
  data.split_name = full_train.split_name;
  data.label_names = full_train.label_names;
  for (const auto& inst : full_train.instances)
    if (wanted.erase(inst.id)) data.instances.push_back(inst);
  if (!wanted.empty())
    throw InvalidArgument("retrain_eval: unknown train id '" + *wanted.begin() + "'");

  TrainHyper h = hp;
  h.seed = seed;
  auto trained = train(init ? *init : init_model(base_config), data, h);
  RetrainResult out;
  out.history = std::move(trained.history);
  const auto preds = predict_all(trained.params, test_set);
  std::size_t correct = 0, same = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    correct += preds[i] == test_set[i].label ? 1 : 0;
    same += preds[i] == original_predictions[i] ? 1 : 0;
  }
  const double n = static_cast<double>(std::max<std::size_t>(preds.size(), 1));
  out.accuracy = static_cast<double>(correct) / n;
  out.preserved_pct = 100.0 * static_cast<double>(same) / n;
  return out;
}

std::string to_string(SweepMethod m) {
  switch (m) {
    case SweepMethod::kIF: return "IF";
    case SweepMethod::kGS: return "GS";
    case SweepMethod::kNAInstances: return "NA_INSTANCES";
    case SweepMethod::kRandom: return "Random";
  }
  return "?";
}

SweepMethod parse_sweep_method(const std::string& s) {
  std::string l;
  for (char c : s) l += c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (l == "if") return SweepMethod::kIF;
  if (l == "gs") return SweepMethod::kGS;
  if (l == "na-instances") return SweepMethod::kNAInstances;
  if (l == "random") return SweepMethod::kRandom;
  throw InvalidArgument("unknown sweep method '" + s + "'");
}

std::string to_string(Aggregation a) { return a == Aggregation::kSum ? "sum" : "max"; }

Aggregation parse_aggregation(const std::string& s) {
  if (s == "sum") return Aggregation::kSum;
  if (s == "max") return Aggregation::kMax;
  throw InvalidArgument("unknown aggregation '" + s + "'");
}

std::vector<std::string> global_ranking(const std::vector<InstanceScores>& per_test,
                                        Aggregation agg) {
  if (per_test.empty()) throw InvalidArgument("global_ranking: no test instances");
  std::map<std::string, double> total;
  for (const auto& s : per_test) {
    for (const auto& [id, v] : s.scores) {
      auto [it, fresh] = total.emplace(id, v);
      if (fresh) continue;
      it->second = agg == Aggregation::kSum ? it->second + v : std::max(it->second, v);
    }
  }
  std::vector<std::pair<std::string, double>> items(total.begin(), total.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  out.reserve(items.size());
  for (auto& [id, v] : items) out.push_back(id);
  return out;
}

std::vector<std::string> random_ranking(const std::vector<std::string>& train_ids,
                                        std::uint64_t seed) {
  std::vector<std::string> out = train_ids;
  Rng rng(derive_seed(seed, "random-ranking"));
  rng.shuffle(out);
  return out;
}

std::string manifest_filename(const SweepPoint& p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", p.fraction);
  return "subset_" + to_string(p.method) + "_" + to_string(p.direction) + "_" + buf + "_s" +
         std::to_string(p.seed) + ".json";
}

nlohmann::ordered_json subset_manifest(const SweepPoint& p, const ModelConfig& base_config,
                                       const TrainHyper& hp, bool from_checkpoint) {
  TrainHyper h = hp;
  h.seed = p.seed;
  return {{"method", to_string(p.method)},
          {"direction", to_string(p.direction)},
          {"fraction", p.fraction},
          {"seed", p.seed},
          {"init", from_checkpoint ? "checkpoint" : "fresh"},
          {"model", base_config.to_json()},
          {"train", h.to_json()},
          {"accuracy", p.result.accuracy},
          {"preserved_pct", p.result.preserved_pct},
          {"ids", p.subset}};
}

RetrainResult rerun_manifest(const nlohmann::json& m, const Dataset& full_train,
                             const Dataset& test_set, const std::vector<int>& original_predictions,
                             const Parameters* init) {
  try {
    const bool from_ckpt = m.at("init").get<std::string>() == "checkpoint";
    if (from_ckpt && init == nullptr)
      throw InvalidArgument("manifest was produced from a checkpoint; pass the checkpoint");
    const auto cfg = ModelConfig::from_json(m.at("model"));
    const auto hp = TrainHyper::from_json(m.at("train"));
    const auto ids = m.at("ids").get<std::vector<std::string>>();
    return retrain_eval(cfg, ids, full_train, test_set, hp, hp.seed, original_predictions,
                        from_ckpt ? init : nullptr);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad subset manifest: ") + e.what(), 0);
  }
}

std::vector<SweepPoint> sweep(const SweepConfig& cfg, const Parameters& original,
                              const TrainHyper& hp, const Dataset& full_train,
                              const Dataset& test_set,
                              const std::map<SweepMethod, std::vector<std::string>>& rankings) {
  for (double f : cfg.fractions)
    if (!(f > 0.0 && f <= 1.0)) throw InvalidArgument("sweep: fractions must lie in (0, 1]");
  if (cfg.seeds.empty()) throw InvalidArgument("sweep: at least one seed is required");
  std::vector<std::string> train_ids;
  for (const auto& inst : full_train.instances) train_ids.push_back(inst.id);

  std::vector<SweepPoint> points;
  for (SweepMethod m : cfg.methods) {
    if (m != SweepMethod::kRandom && !rankings.contains(m))
      throw InvalidArgument("sweep: no ranking for method " + to_string(m));
    for (Direction d : cfg.directions)
      for (double f : cfg.fractions)
        for (std::uint64_t s : cfg.seeds) {
          SweepPoint p;
          p.method = m;
          p.direction = d;
          p.fraction = f;
          p.seed = s;
          const auto ranking = m == SweepMethod::kRandom ? random_ranking(train_ids, s)
                                                         : rankings.at(m);
          p.subset = select_fraction(ranking, f, d);
          points.push_back(std::move(p));
        }
  }
  const auto original_preds = predict_all(original, test_set);
  parallel_for(points.size(), cfg.jobs, [&](std::size_t i) {
    auto& p = points[i];
    p.result = retrain_eval(original.config, p.subset, full_train, test_set, hp, p.seed,
                            original_preds, cfg.from_checkpoint ? &original : nullptr);
  });
  return points;
}

void write_curve_csv(const std::vector<SweepPoint>& points, const std::filesystem::path& path,
                     const std::string& header_comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << "method,direction,fraction,seed,accuracy,preserved_pct\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g,%llu,%.17g,%.17g", p.fraction,
                  static_cast<unsigned long long>(p.seed), p.result.accuracy,
                  p.result.preserved_pct);
    out << to_string(p.method) << ',' << to_string(p.direction) << ',' << buf << '\n';
  }
}

nlohmann::ordered_json curves_to_json(const std::vector<SweepPoint>& points) {
  // (method, direction) -> fraction -> accuracies
  std::map<std::pair<std::string, std::string>, std::map<double, std::vector<double>>> acc;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& p : points) {
    const auto key = std::make_pair(to_string(p.method), to_string(p.direction));
    if (!acc.contains(key)) order.push_back(key);
    acc[key][p.fraction].push_back(p.result.accuracy);
  }
  nlohmann::ordered_json series = nlohmann::ordered_json::array();
  for (const auto& key : order) {
    nlohmann::ordered_json pts = nlohmann::ordered_json::array();
    for (const auto& [f, vals] : acc[key]) {
      double sum = 0.0;
      for (double v : vals) sum += v;
      pts.push_back({{"x", f}, {"y", sum / static_cast<double>(vals.size())}});
    }
    series.push_back({{"label", key.first + "-" + key.second}, {"points", std::move(pts)}});
  }
  return {{"x_label", "fraction of training data"}, {"y_label", "test accuracy"},
          {"series", std::move(series)}};
}

}  // namespace attrlab
