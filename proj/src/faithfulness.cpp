// SPDX-License-Identifier: Apache-2.0
#include "attrlab/faithfulness.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace attrlab {

std::string to_string(Selector s) {
  switch (s) {
    case Selector::kNA: return "NA";
    case Selector::kIFNeuron: return "IF_Neuron";
    case Selector::kGSNeuron: return "GS_Neuron";
    case Selector::kRandom: return "Random";
  }
  return "?";
}

Selector parse_selector(const std::string& s) {
  std::string l;
  for (char c : s) l += c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (l == "na") return Selector::kNA;
  if (l == "if_neuron" || l == "if") return Selector::kIFNeuron;
  if (l == "gs_neuron" || l == "gs") return Selector::kGSNeuron;
  if (l == "random") return Selector::kRandom;
  throw InvalidArgument("unknown selector '" + s + "'");
}

std::string to_string(TestKind k) {
  return k == TestKind::kSufficiency ? "sufficiency" : "comprehensiveness";
}

std::vector<NeuronId> random_selection(std::uint64_t seed, const std::string& instance_id,
                                       std::size_t r, const ModelConfig& config) {
  const std::size_t total = config.total_neurons();
  if (r > total)
    throw InvalidArgument("random selection: r=" + std::to_string(r) + " exceeds neuron count " +
                          std::to_string(total));
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, instance_id));
  // partial Fisher-Yates: the first r slots end up a uniform sample
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(total - i));
    std::swap(idx[i], idx[j]);
  }
  std::vector<NeuronId> out;
  out.reserve(r);
  for (std::size_t i = 0; i < r; ++i)
    out.push_back({static_cast<std::uint32_t>(idx[i] / config.d_mlp),
                   static_cast<std::uint32_t>(idx[i] % config.d_mlp)});
  return out;
}

std::vector<NeuronId> select_neurons(const AttributionContext& ctx, Selector selector,
                                     const Instance& inst, std::size_t r, std::uint64_t seed) {
  const auto& cfg = ctx.params().config;
  if (r > cfg.total_neurons())
    throw InvalidArgument("selector: r=" + std::to_string(r) + " exceeds neuron count " +
                          std::to_string(cfg.total_neurons()));
  if (r == 0) return {};
  switch (selector) {
    case Selector::kNA: return top_r(ctx.test_neurons(inst).scores, r).neurons;
    case Selector::kIFNeuron: return ia_neurons(ctx, inst, IaMethod::kIF, r).unique.neurons;
    case Selector::kGSNeuron: return ia_neurons(ctx, inst, IaMethod::kGS, r).unique.neurons;
    case Selector::kRandom: return random_selection(seed, inst.id, r, cfg);
  }
  throw InvalidArgument("unknown selector");
}

std::size_t FaithfulnessReport::preserved_count() const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(),
                                                [](const InstanceRecord& r) { return r.preserved(); }));
}

nlohmann::ordered_json FaithfulnessReport::to_json() const {
  nlohmann::ordered_json recs = nlohmann::ordered_json::array();
  for (const auto& r : records)
    recs.push_back({{"id", r.id},
                    {"original", r.original},
                    {"intervened", r.intervened},
                    {"n_selected", r.n_selected},
                    {"preserved", r.preserved()}});
  return {{"test_kind", to_string(test_kind)},
          {"selector", to_string(selector)},
          {"r", r},
          {"requested_r", requested_r},
          {"clamped", r != requested_r},
          {"seed", seed},
          {"preserved_pct", preserved_pct},
          {"records", std::move(recs)}};
}

double preserved_pct_from_records(const std::vector<InstanceRecord>& records) {
  if (records.empty()) return 0.0;
  std::size_t kept = 0;
  for (const auto& r : records) kept += r.preserved() ? 1 : 0;
  return 100.0 * static_cast<double>(kept) / static_cast<double>(records.size());
}

FaithfulnessReport run_test(const AttributionContext& ctx, const Dataset& test_set,
                            Selector selector, TestKind kind, std::size_t r, std::uint64_t seed) {
  const auto& params = ctx.params();
  FaithfulnessReport rep;
  rep.test_kind = kind;
  rep.selector = selector;
  rep.r = r;
  rep.requested_r = r;
  rep.seed = seed;
  rep.records.resize(test_set.size());
  parallel_for(test_set.size(), ctx.options().jobs, [&](std::size_t i) {
    const auto& inst = test_set[i];
    const auto tokens = model_input(inst, params.config.max_seq_len);
    const auto chosen = select_neurons(ctx, selector, inst, r, seed);
    const auto spec = kind == TestKind::kSufficiency ? InterventionSpec::allow(chosen)
                                                     : InterventionSpec::deny(chosen);
    auto& rec = rep.records[i];
    rec.id = inst.id;
    rec.original = forward(params, tokens).predicted;
    rec.intervened = forward(params, tokens, spec).predicted;
    rec.n_selected = chosen.size();
  });
  rep.preserved_pct = preserved_pct_from_records(rep.records);
  return rep;
}

FaithfulnessReport sufficiency(const AttributionContext& ctx, const Dataset& test_set,
                               Selector selector, std::size_t r, std::uint64_t seed) {
  return run_test(ctx, test_set, selector, TestKind::kSufficiency, r, seed);
}

FaithfulnessReport comprehensiveness(const AttributionContext& ctx, const Dataset& test_set,
                                     Selector selector, std::size_t r, std::uint64_t seed) {
  return run_test(ctx, test_set, selector, TestKind::kComprehensiveness, r, seed);
}

std::vector<ProtocolRow> aggregate(const std::vector<FaithfulnessReport>& reports) {
  std::vector<ProtocolRow> rows;
  std::vector<bool> used(reports.size(), false);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (used[i]) continue;
    const auto& head = reports[i];
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t j = i; j < reports.size(); ++j) {
      const auto& rep = reports[j];
      if (used[j] || rep.selector != head.selector || rep.test_kind != head.test_kind) continue;
      used[j] = true;
      rows.push_back({rep.selector, rep.test_kind, rep.r, rep.seed, rep.preserved_pct});
      sum += rep.preserved_pct;
      ++n;
    }
    rows.push_back({head.selector, head.test_kind, head.r, std::nullopt,
                    sum / static_cast<double>(n)});
  }
  return rows;
}

ProtocolResult run_protocol(const AttributionContext& ctx, const Dataset& test_set,
                            const std::vector<Selector>& selectors,
                            const std::vector<std::uint64_t>& seeds, const ProtocolOptions& opts) {
  if (seeds.empty()) throw InvalidArgument("run_protocol: at least one seed is required");
  const std::size_t total = ctx.params().config.total_neurons();
  const std::size_t cap = total > 0 ? total - 1 : 0;
  ProtocolResult out;
  for (Selector sel : selectors) {
    for (TestKind kind : {TestKind::kSufficiency, TestKind::kComprehensiveness}) {
      const std::size_t requested =
          kind == TestKind::kSufficiency ? opts.sufficiency_r : opts.comprehensiveness_r;
      const std::size_t r = std::min(requested, cap);
      for (std::uint64_t seed : seeds) {
        auto rep = run_test(ctx, test_set, sel, kind, r, seed);
        rep.requested_r = requested;
        out.reports.push_back(std::move(rep));
      }
    }
  }
  out.rows = aggregate(out.reports);
  return out;
}

void write_protocol_csv(const ProtocolResult& result, const std::filesystem::path& path,
                        const std::string& header_comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << "selector,test_kind,r,seed,preserved_pct\n";
  char buf[64];
  for (const auto& row : result.rows) {
    std::snprintf(buf, sizeof buf, "%.17g", row.preserved_pct);
    out << to_string(row.selector) << ',' << to_string(row.test_kind) << ',' << row.r << ','
        << (row.seed ? std::to_string(*row.seed) : std::string("mean")) << ',' << buf << '\n';
  }
}

nlohmann::ordered_json protocol_to_json(const ProtocolResult& result) {
  nlohmann::ordered_json reps = nlohmann::ordered_json::array();
  for (const auto& r : result.reports) reps.push_back(r.to_json());
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : result.rows) {
    nlohmann::ordered_json j = {{"selector", to_string(row.selector)},
                                {"test_kind", to_string(row.test_kind)},
                                {"r", row.r}};
    j["seed"] = row.seed ? nlohmann::ordered_json(*row.seed) : nlohmann::ordered_json("mean");
    j["preserved_pct"] = row.preserved_pct;
    rows.push_back(std::move(j));
  }
  return {{"rows", std::move(rows)}, {"reports", std::move(reps)}};
}

}  // namespace attrlab
