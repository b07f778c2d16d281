// SPDX-License-Identifier: Apache-2.0
//
// attrlab command-line driver.
//
// Exit status: 0 on success, 1 on runtime failure, 2 on usage or config
// errors. Errors are reported as a single line on stderr:
//   attrlab: error: <kind>: <message>
#include <CLI11.hpp>

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "attrlab/alignment.hpp"
#include "attrlab/analysis.hpp"
#include "attrlab/experiment.hpp"
#include "attrlab/faithfulness.hpp"
#include "attrlab/retrain.hpp"

namespace fs = std::filesystem;
using namespace attrlab;
using ojson = nlohmann::ordered_json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

void progress(const std::string& msg) { std::cerr << "[attrlab] " << msg << '\n'; }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stoull(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("empty seed list");
  return out;
}

std::vector<double> parse_reals(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad number '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("empty number list");
  return out;
}

fs::path companion_json(const fs::path& out) {
  fs::path p = out;
  return p.replace_extension(".json");
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// Options shared by the subcommands that read a trained model.
struct ModelArgs {
  std::string config;
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::size_t limit = 0;
  int jobs = 1;
  std::optional<std::size_t> r;
  std::optional<std::size_t> ig_steps;
  std::optional<double> damping;
  std::string target;
  std::string test_label;
};

void add_model_args(CLI::App* cmd, ModelArgs& a, bool with_split = true) {
  cmd->add_option("--config", a.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--ckpt", a.ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  cmd->add_option("--data", a.data, "data directory")->required()->check(CLI::ExistingDirectory);
  if (with_split) {
    cmd->add_option("--split", a.split, "evaluation split")
        ->check(CLI::IsMember({"test", "counter"}));
    cmd->add_option("--limit", a.limit, "use only the first N evaluation instances (0 = all)");
  }
  cmd->add_option("--jobs", a.jobs, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--r", a.r, "neuron list length");
  cmd->add_option("--ig-steps", a.ig_steps, "integrated-gradient steps")->check(CLI::PositiveNumber);
  cmd->add_option("--damping", a.damping, "Hessian damping")->check(CLI::PositiveNumber);
  cmd->add_option("--target", a.target, "neuron attribution target")
      ->check(CLI::IsMember({"predicted", "gold"}));
  cmd->add_option("--test-label", a.test_label, "label of the test-side loss gradient")
      ->check(CLI::IsMember({"predicted", "gold"}));
}

struct Loaded {
  ExperimentConfig config;
  LoadedCheckpoint ckpt;
  DataDir data;
  Dataset eval;
  Provenance prov;
};

Loaded load_model_args(const ModelArgs& a, const std::string& command) {
  Loaded L;
  if (!a.config.empty()) L.config = ExperimentConfig::load(a.config);
  auto& o = L.config.attribution;
  if (a.r) o.r = *a.r;
  if (a.ig_steps) o.ig_steps = *a.ig_steps;
  if (a.damping) o.damping = *a.damping;
  if (!a.target.empty()) o.neuron_target = a.target == "gold" ? TargetMode::kGold : TargetMode::kPredicted;
  if (!a.test_label.empty())
    o.test_label = a.test_label == "gold" ? LabelSource::kGold : LabelSource::kPredicted;
  if (o.r == 0) throw UsageError("--r must be positive");
  o.jobs = a.jobs;
  L.ckpt = load_checkpoint(a.ckpt);
  L.data = load_data_dir(a.data);
  L.data.train.validate(L.ckpt.params.config.vocab_size);
  L.eval = a.split == "counter" ? L.data.counterexamples : L.data.test;
  L.eval.validate(L.ckpt.params.config.vocab_size);
  if (a.limit > 0 && a.limit < L.eval.size()) L.eval.instances.resize(a.limit);
  L.prov.command = command;
  L.prov.config_hash = L.config.hash();
  L.prov.checkpoint_hash = file_hash(a.ckpt);
  L.prov.data_hash = directory_hash(a.data);
  return L;
}

std::string safe_name(std::size_t index, const std::string& id) {
  std::string s;
  for (char c : id) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu_", index);
  return buf + s + ".csv";
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& config, std::uint64_t seed, const std::string& out) {
  const ExperimentConfig cfg = config.empty() ? ExperimentConfig{} : ExperimentConfig::load(config);
  progress("generating synthetic data (seed " + std::to_string(seed) + ")");
  const auto data = gen_synthetic_nli(cfg.data, seed);
  Provenance prov;
  prov.command = "gen-data";
  prov.config_hash = cfg.hash();
  prov.seed = seed;
  save_data_dir(data, out, prov);
  progress("wrote " + std::to_string(data.train.size()) + " train, " +
           std::to_string(data.test.size()) + " test, " +
           std::to_string(data.counterexamples.size()) + " counterexample instances to " + out);
  return 0;
}

struct TrainOutput {
  TrainResult result;
  ModelConfig model;
  TrainHyper hp;
};

TrainOutput train_from_config(const ExperimentConfig& cfg, const DataDir& data,
                              std::optional<std::uint64_t> seed) {
  TrainOutput t;
  t.model = cfg.model;
  t.model.vocab_size = data.vocab.size();
  t.model.n_classes = data.train.label_names.size();
  t.hp = cfg.train;
  if (seed) {
    t.model.seed = *seed;
    t.hp.seed = *seed;
  }
  t.model.validate();
  data.train.validate(t.model.vocab_size);
  t.result = train(init_model(t.model), data.train, t.hp);
  return t;
}

int cmd_train(const std::string& config, const std::string& data_dir,
              std::optional<std::uint64_t> seed, const std::string& out) {
  const ExperimentConfig cfg = config.empty() ? ExperimentConfig{} : ExperimentConfig::load(config);
  const auto data = load_data_dir(data_dir);
  progress("training on " + std::to_string(data.train.size()) + " instances");
  const auto t = train_from_config(cfg, data, seed);
  Provenance prov;
  prov.command = "train";
  prov.config_hash = cfg.hash();
  prov.data_hash = directory_hash(data_dir);
  prov.seed = t.hp.seed;
  ojson hist = ojson::array();
  std::cout << "# " << prov.comment() << '\n' << "epoch,loss,accuracy\n";
  for (std::size_t e = 0; e < t.result.history.size(); ++e) {
    const auto& h = t.result.history[e];
    std::cout << e + 1 << ',' << fmt(h.loss) << ',' << fmt(h.accuracy) << '\n';
    hist.push_back({{"epoch", e + 1}, {"loss", h.loss}, {"accuracy", h.accuracy}});
  }
  ensure_parent(out);
  save_checkpoint(t.result.params, out,
                  {{"provenance", prov.to_json()}, {"train", t.hp.to_json()}, {"history", hist}});
  const double test_acc = accuracy(t.result.params, data.test);
  progress("test accuracy " + fmt(test_acc) + "; checkpoint written to " + out);
  return 0;
}

int cmd_attribute(const ModelArgs& a, const std::string& method_name, const std::string& out) {
  const IaMethod method = parse_ia_method(method_name);
  auto L = load_model_args(a, "attribute");
  const AttributionContext ctx(L.ckpt.params, L.data.train, L.config.attribution);
  progress("scoring " + std::to_string(L.eval.size()) + " instances with " + to_string(method));
  std::vector<InstanceScores> all(L.eval.size());
  for (std::size_t i = 0; i < L.eval.size(); ++i) all[i] = instance_scores(ctx, L.eval[i], method);
  fs::create_directories(out);
  write_score_csv(all, fs::path(out) / "scores.csv", L.prov.comment());
  write_json(fs::path(out) / "rankings.json",
             {{"provenance", L.prov.to_json()},
              {"method", to_string(method)},
              {"options", L.config.attribution.to_json()},
              {"rankings", rankings_to_json(all)}});
  return 0;
}

int cmd_neurons(const ModelArgs& a, const std::string& method, const std::string& out) {
  auto L = load_model_args(a, "neurons");
  const AttributionContext ctx(L.ckpt.params, L.data.train, L.config.attribution);
  const std::size_t total = L.ckpt.params.config.total_neurons();
  const std::size_t r = L.config.attribution.r;
  if (method == "na" && r > total)
    throw UsageError("--r " + std::to_string(r) + " exceeds the neuron count " + std::to_string(total));
  fs::create_directories(out);
  ojson entries = ojson::array();
  for (std::size_t i = 0; i < L.eval.size(); ++i) {
    const auto& inst = L.eval[i];
    const std::string file = safe_name(i, inst.id);
    ojson entry = {{"id", inst.id}, {"file", file}};
    if (method == "na") {
      const auto& na = ctx.test_neurons(inst);
      entry["target"] = na.target;
      write_neuron_dump(top_r(na.scores, r), fs::path(out) / file, L.prov.comment());
    } else {
      const IaMethod ia = method == "ia-neurons:if" ? IaMethod::kIF : IaMethod::kGS;
      const auto res = ia_neurons(ctx, inst, ia, r);
      write_neuron_dump(res.unique, fs::path(out) / file, L.prov.comment());
      const std::string raw_file = file.substr(0, file.size() - 4) + ".raw.csv";
      write_neuron_dump(res.raw, fs::path(out) / raw_file, L.prov.comment());
      entry["raw_file"] = raw_file;
      entry["sources"] = res.unique_sources;
      entry["raw_sources"] = res.raw_sources;
      entry["short"] = res.short_list;
    }
    entries.push_back(std::move(entry));
  }
  write_json(fs::path(out) / "manifest.json", {{"provenance", L.prov.to_json()},
                                               {"method", method},
                                               {"r", r},
                                               {"options", L.config.attribution.to_json()},
                                               {"instances", std::move(entries)}});
  progress("wrote " + std::to_string(L.eval.size()) + " neuron rankings to " + out);
  return 0;
}

int cmd_faithfulness(const ModelArgs& a, const std::string& selectors_arg,
                     const std::string& seeds_arg, std::optional<std::size_t> suff_r,
                     std::optional<std::size_t> comp_r, const std::string& out) {
  std::vector<Selector> selectors;
  for (const auto& s : split_list(selectors_arg)) {
    try {
      selectors.push_back(parse_selector(s));
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
  }
  if (selectors.empty()) throw UsageError("empty selector list");
  auto L = load_model_args(a, "faithfulness");
  ProtocolOptions po;
  po.sufficiency_r = suff_r.value_or(L.config.analysis.sufficiency_r);
  po.comprehensiveness_r = comp_r.value_or(L.config.analysis.comprehensiveness_r);
  const auto seeds = seeds_arg.empty() ? L.config.analysis.faithfulness_seeds : parse_seeds(seeds_arg);
  const AttributionContext ctx(L.ckpt.params, L.data.train, L.config.attribution);
  progress("faithfulness over " + std::to_string(L.eval.size()) + " instances");
  const auto res = run_protocol(ctx, L.eval, selectors, seeds, po);
  ensure_parent(out);
  write_protocol_csv(res, out, L.prov.comment());
  ojson j = protocol_to_json(res);
  j["provenance"] = L.prov.to_json();
  write_json(companion_json(out), j);
  return 0;
}

struct SweepArgs {
  std::string config, data, ckpt, methods = "if,gs,na-instances,random", directions = "most,least",
      fractions, seeds, aggregation, out;
  bool from_checkpoint = false;
  int jobs = 1;
};

int cmd_sweep(const SweepArgs& a) {
  const ExperimentConfig cfg = a.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(a.config);
  SweepConfig sc;
  sc.methods.clear();
  sc.directions.clear();
  try {
    for (const auto& m : split_list(a.methods)) sc.methods.push_back(parse_sweep_method(m));
    for (const auto& d : split_list(a.directions)) sc.directions.push_back(parse_direction(d));
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  if (sc.methods.empty() || sc.directions.empty()) throw UsageError("empty method or direction list");
  sc.fractions = a.fractions.empty() ? cfg.analysis.fractions : parse_reals(a.fractions);
  for (double f : sc.fractions)
    if (!(f > 0.0 && f <= 1.0)) throw UsageError("fractions must lie in (0, 1]");
  sc.seeds = a.seeds.empty() ? cfg.analysis.sweep_seeds : parse_seeds(a.seeds);
  sc.from_checkpoint = a.from_checkpoint || cfg.analysis.from_checkpoint;
  sc.jobs = a.jobs;
  const Aggregation agg =
      a.aggregation.empty() ? cfg.analysis.aggregation : parse_aggregation(a.aggregation);

  const auto data = load_data_dir(a.data);
  Provenance prov;
  prov.command = "retrain-sweep";
  prov.config_hash = cfg.hash();
  prov.data_hash = directory_hash(a.data);

  Parameters original;
  TrainHyper hp = cfg.train;
  if (!a.ckpt.empty()) {
    original = load_checkpoint(a.ckpt).params;
    prov.checkpoint_hash = file_hash(a.ckpt);
  } else {
    progress("training the reference model");
    auto t = train_from_config(cfg, data, std::nullopt);
    original = std::move(t.result.params);
    hp = t.hp;
  }
  data.train.validate(original.config.vocab_size);
  data.test.validate(original.config.vocab_size);

  AttributionOptions ao = cfg.attribution;
  ao.jobs = a.jobs;
  const AttributionContext ctx(original, data.train, ao);
  std::map<SweepMethod, std::vector<std::string>> rankings;
  ojson rank_json = ojson::object();
  for (SweepMethod m : sc.methods) {
    if (m == SweepMethod::kRandom) continue;
    const IaMethod ia = m == SweepMethod::kIF   ? IaMethod::kIF
                        : m == SweepMethod::kGS ? IaMethod::kGS
                                                : IaMethod::kNAInstances;
    progress("ranking training data with " + to_string(ia));
    std::vector<InstanceScores> per_test(data.test.size());
    for (std::size_t i = 0; i < data.test.size(); ++i)
      per_test[i] = instance_scores(ctx, data.test[i], ia);
    rankings[m] = global_ranking(per_test, agg);
    rank_json[to_string(m)] = rankings[m];
  }
  progress("running the sweep");
  const auto points = sweep(sc, original, hp, data.train, data.test, rankings);

  const fs::path out(a.out);
  fs::create_directories(out / "subsets");
  write_curve_csv(points, out / "curves.csv", prov.comment());
  ojson curves = curves_to_json(points);
  curves["provenance"] = prov.to_json();
  write_json(out / "curves.json", curves);
  write_json(out / "rankings.json", {{"provenance", prov.to_json()},
                                     {"aggregation", to_string(agg)},
                                     {"rankings", rank_json}});
  for (const auto& p : points) {
    ojson m = subset_manifest(p, original.config, hp, sc.from_checkpoint);
    m["provenance"] = prov.to_json();
    write_json(out / "subsets" / manifest_filename(p), m);
  }
  progress("wrote " + std::to_string(points.size()) + " sweep points to " + a.out);
  return 0;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
  std::vector<std::string> inputs;
  std::string report, out, ckpt, data, config, fractions, ns, methods = "if,gs,na-instances";
  std::size_t k = 10;
  int jobs = 1;
};

Provenance analyze_provenance(const AnalyzeArgs& a, const ExperimentConfig& cfg) {
  Provenance p;
  p.command = "analyze " + a.report;
  p.config_hash = cfg.hash();
  std::string acc;
  for (const auto& in : a.inputs)
    acc += (fs::is_directory(in) ? directory_hash(in) : file_hash(in)) + ";";
  if (!a.data.empty()) p.data_hash = directory_hash(a.data);
  if (!a.ckpt.empty()) p.checkpoint_hash = file_hash(a.ckpt);
  if (!a.inputs.empty())
    p.data_hash = p.data_hash.empty() ? hex64(fnv1a64(acc)) : p.data_hash + "+" + hex64(fnv1a64(acc));
  return p;
}

std::vector<InstanceScores> read_scores_input(const std::string& in) {
  const fs::path p = fs::is_directory(in) ? fs::path(in) / "scores.csv" : fs::path(in);
  auto all = read_score_csv(p);
  if (all.empty()) throw Error("no scores in " + p.string());
  return all;
}

void require_inputs(const AnalyzeArgs& a, std::size_t n) {
  if (a.inputs.size() < n)
    throw UsageError("report " + a.report + " needs at least " + std::to_string(n) + " --inputs");
}

void require_model(const AnalyzeArgs& a) {
  if (a.ckpt.empty() || a.data.empty())
    throw UsageError("report " + a.report + " needs --ckpt and --data");
}

int report_table1(const AnalyzeArgs& a, const Provenance& prov) {
  require_inputs(a, 1);
  std::ostringstream csv;
  csv << "# " << prov.comment() << "\nmethod,k,n_test,unique_instances\n";
  for (const auto& in : a.inputs) {
    const auto all = read_scores_input(in);
    std::map<std::string, std::vector<std::string>> tops;
    for (const auto& s : all) {
      const std::size_t k = std::min(a.k, s.ranking.size());
      tops[s.test_id] = {s.ranking.begin(), s.ranking.begin() + static_cast<std::ptrdiff_t>(k)};
    }
    csv << to_string(all.front().method) << ',' << a.k << ',' << all.size() << ','
        << unique_instance_count(tops) << '\n';
  }
  ensure_parent(a.out);
  write_text(a.out, csv.str());
  return 0;
}

int report_fig3(const AnalyzeArgs& a, const ExperimentConfig& cfg, const Provenance& prov) {
  require_inputs(a, 2);
  const auto fractions = a.fractions.empty() ? cfg.analysis.fractions : parse_reals(a.fractions);
  std::vector<std::pair<std::string, std::vector<std::string>>> ranked;
  for (const auto& in : a.inputs) {
    const auto all = read_scores_input(in);
    ranked.emplace_back(to_string(all.front().method),
                        global_ranking(all, cfg.analysis.aggregation));
  }
  ojson series = ojson::array();
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    for (std::size_t j = i + 1; j < ranked.size(); ++j) {
      ojson pts = ojson::array();
      for (double f : fractions) {
        const auto x = select_fraction(ranked[i].second, f, Direction::kMost);
        const auto y = select_fraction(ranked[j].second, f, Direction::kMost);
        pts.push_back({{"x", f}, {"y", instance_overlap(x, y)}});
      }
      series.push_back({{"label", ranked[i].first + " vs " + ranked[j].first}, {"points", pts}});
    }
  }
  ensure_parent(a.out);
  write_json(a.out, {{"provenance", prov.to_json()},
                     {"x_label", "fraction of most influential training instances"},
                     {"y_label", "overlap (%)"},
                     {"series", series}});
  return 0;
}

struct NeuronDir {
  std::string method;
  std::map<std::string, RankedNeurons> by_id;
};

NeuronDir read_neuron_dir(const fs::path& dir) {
  const auto m = read_json(dir / "manifest.json");
  NeuronDir out;
  out.method = m.at("method").get<std::string>();
  for (const auto& e : m.at("instances"))
    out.by_id[e.at("id").get<std::string>()] = read_neuron_dump(dir / e.at("file").get<std::string>());
  return out;
}

int report_fig4(const AnalyzeArgs& a, const Provenance& prov) {
  require_inputs(a, 2);
  const auto na = read_neuron_dir(a.inputs[0]);
  const auto ia = read_neuron_dir(a.inputs[1]);
  std::vector<std::size_t> ns;
  for (double v : parse_reals(a.ns.empty() ? "1,3,5,10" : a.ns)) {
    if (v < 1.0) throw UsageError("--ns values must be positive");
    ns.push_back(static_cast<std::size_t>(v));
  }
  ojson shared = ojson::array(), na_only = ojson::array(), ia_only = ojson::array();
  for (std::size_t n : ns) {
    double s = 0.0, x = 0.0, y = 0.0;
    std::size_t count = 0;
    for (const auto& [id, na_rank] : na.by_id) {
      auto it = ia.by_id.find(id);
      if (it == ia.by_id.end()) continue;
      const auto a_top = truncate(na_rank, n), b_top = truncate(it->second, n);
      const std::set<NeuronId> A(a_top.neurons.begin(), a_top.neurons.end());
      const std::set<NeuronId> B(b_top.neurons.begin(), b_top.neurons.end());
      if (A.empty() && B.empty()) continue;
      const auto o = neuron_overlap_on_union(A, B);
      s += o.shared_pct;
      x += o.na_only_pct;
      y += o.ia_only_pct;
      ++count;
    }
    if (count == 0) throw Error("no test instance appears in both neuron inputs");
    const double c = static_cast<double>(count);
    shared.push_back({{"x", n}, {"y", s / c}});
    na_only.push_back({{"x", n}, {"y", x / c}});
    ia_only.push_back({{"x", n}, {"y", y / c}});
  }
  ensure_parent(a.out);
  write_json(a.out, {{"provenance", prov.to_json()},
                     {"x_label", "top-n neurons"},
                     {"y_label", "share of union (%)"},
                     {"series",
                      {{{"label", na.method + " only"}, {"points", na_only}},
                       {{"label", ia.method + " only"}, {"points", ia_only}},
                       {{"label", "shared"}, {"points", shared}}}}});
  return 0;
}

int report_table3(const AnalyzeArgs& a, const Provenance& prov) {
  require_inputs(a, 1);
  require_model(a);
  const auto params = load_checkpoint(a.ckpt).params;
  const auto data = load_data_dir(a.data);
  struct Group {
    std::string label;
    std::vector<double> acc, cos, loss_v, vocab, len;
  };
  std::map<std::string, Group> groups;
  std::vector<std::string> order;
  for (const auto& in : a.inputs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(fs::path(in) / "subsets"))
      if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto m = read_json(f);
      char fr[32];
      std::snprintf(fr, sizeof fr, "%.4f", m.at("fraction").get<double>());
      const std::string key = m.at("method").get<std::string>() + "-" +
                              m.at("direction").get<std::string>() + "@" + fr;
      const auto ids = m.at("ids").get<std::vector<std::string>>();
      const auto dm = diversity_metrics(data.train.subset(ids), params, a.jobs);
      auto [it, fresh] = groups.try_emplace(key);
      if (fresh) {
        order.push_back(key);
        it->second.label = key;
      }
      auto& g = it->second;
      g.acc.push_back(m.at("accuracy").get<double>());
      if (dm.mean_pairwise_cosine) g.cos.push_back(*dm.mean_pairwise_cosine);
      g.loss_v.push_back(dm.mean_loss);
      g.vocab.push_back(static_cast<double>(dm.vocabulary));
      g.len.push_back(dm.mean_input_length);
    }
  }
  if (groups.empty()) throw Error("no subset manifests found");
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
  };
  std::ostringstream csv;
  csv << "# " << prov.comment() << "\ngroup,accuracy,mean_pairwise_cosine,mean_loss,vocabulary,mean_input_length\n";
  std::vector<double> acc, cos, lo, vo, le, acc_cos;
  for (const auto& key : order) {
    const auto& g = groups.at(key);
    const double c = mean(g.cos);
    csv << key << ',' << fmt(mean(g.acc)) << ',' << (g.cos.empty() ? std::string() : fmt(c)) << ','
        << fmt(mean(g.loss_v)) << ',' << fmt(mean(g.vocab)) << ',' << fmt(mean(g.len)) << '\n';
    acc.push_back(mean(g.acc));
    lo.push_back(mean(g.loss_v));
    vo.push_back(mean(g.vocab));
    le.push_back(mean(g.len));
    if (!g.cos.empty()) {
      cos.push_back(c);
      acc_cos.push_back(mean(g.acc));
    }
  }
  auto coef = [](const std::vector<double>& x, const std::vector<double>& y) {
    try {
      return fmt(regression_coefficient(x, y));
    } catch (const InvalidArgument&) {
      return std::string();
    }
  };
  csv << "regression_coefficient,," << coef(cos, acc_cos) << ',' << coef(lo, acc) << ','
      << coef(vo, acc) << ',' << coef(le, acc) << '\n';
  ensure_parent(a.out);
  write_text(a.out, csv.str());
  return 0;
}

int report_table4(const AnalyzeArgs& a, const ExperimentConfig& cfg, const Provenance& prov) {
  require_model(a);
  const auto params = load_checkpoint(a.ckpt).params;
  const auto data = load_data_dir(a.data);
  std::vector<IaMethod> methods;
  try {
    for (const auto& m : split_list(a.methods)) methods.push_back(parse_ia_method(m));
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  AttributionOptions ao = cfg.attribution;
  ao.jobs = a.jobs;
  const AttributionContext ctx(params, data.train, ao);
  const auto rep =
      artifact_detection(ctx, data.counterexamples, methods, cfg.analysis.artifact_ks,
                         cfg.analysis.artifact_seed);
  if (rep.empty) progress("no counterexample is mispredicted as entailment; table is empty");
  std::ostringstream csv;
  csv << "# " << prov.comment() << "\nmethod,k,mean_overlap,n_instances\n";
  for (const auto& r : rep.rows)
    csv << r.method << ',' << r.k << ',' << fmt(r.mean_overlap) << ',' << r.n_instances << '\n';
  ensure_parent(a.out);
  write_text(a.out, csv.str());
  ojson j = rep.to_json();
  j["provenance"] = prov.to_json();
  write_json(companion_json(a.out), j);
  return 0;
}

int cmd_analyze(const AnalyzeArgs& a) {
  const ExperimentConfig cfg = a.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(a.config);
  const auto prov = analyze_provenance(a, cfg);
  if (a.report == "table1") return report_table1(a, prov);
  if (a.report == "fig3") return report_fig3(a, cfg, prov);
  if (a.report == "fig4") return report_fig4(a, prov);
  if (a.report == "table3") return report_table3(a, prov);
  return report_table4(a, cfg, prov);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attrlab: instance and neuron attribution laboratory"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  std::string config, data, out;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> train_seed;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic NLI dataset");
  gen->add_option("--config", config, "JSON experiment config")->check(CLI::ExistingFile);
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  tr->add_option("--config", config, "JSON experiment config")->check(CLI::ExistingFile);
  tr->add_option("--data", data, "data directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--seed", train_seed, "init and shuffling seed (overrides the config)");
  tr->add_option("--out", out, "checkpoint path")->required();

  ModelArgs attr_args;
  std::string attr_method;
  auto* at = app.add_subcommand("attribute", "score training instances for each test instance");
  add_model_args(at, attr_args);
  at->add_option("--method", attr_method, "if | gs | na-instances")
      ->required()
      ->check(CLI::IsMember({"if", "gs", "na-instances"}));
  at->add_option("--out", out, "output directory")->required();

  ModelArgs neu_args;
  std::string neu_method;
  auto* ne = app.add_subcommand("neurons", "rank neurons for each test instance");
  add_model_args(ne, neu_args);
  ne->add_option("--method", neu_method, "na | ia-neurons:if | ia-neurons:gs")
      ->required()
      ->check(CLI::IsMember({"na", "ia-neurons:if", "ia-neurons:gs"}));
  ne->add_option("--out", out, "output directory")->required();

  ModelArgs fa_args;
  std::string selectors = "na,if_neuron,gs_neuron,random", seeds;
  std::optional<std::size_t> suff_r, comp_r;
  auto* fa = app.add_subcommand("faithfulness", "sufficiency and comprehensiveness tests");
  add_model_args(fa, fa_args);
  fa->add_option("--selectors", selectors, "comma list of na, if_neuron, gs_neuron, random");
  fa->add_option("--seeds", seeds, "comma list of seeds");
  fa->add_option("--sufficiency-r", suff_r, "neurons kept in the sufficiency test");
  fa->add_option("--comprehensiveness-r", comp_r, "neurons removed in the comprehensiveness test");
  fa->add_option("--out", out, "CSV path (a JSON report is written next to it)")->required();

  SweepArgs sw;
  auto* rs = app.add_subcommand("retrain-sweep", "retrain on influential subsets");
  rs->add_option("--config", sw.config, "JSON experiment config")->check(CLI::ExistingFile);
  rs->add_option("--data", sw.data, "data directory")->required()->check(CLI::ExistingDirectory);
  rs->add_option("--ckpt", sw.ckpt, "reference model (trained from the config when omitted)")
      ->check(CLI::ExistingFile);
  rs->add_option("--methods", sw.methods, "comma list of if, gs, na-instances, random");
  rs->add_option("--directions", sw.directions, "comma list of most, least");
  rs->add_option("--fractions", sw.fractions, "comma list of fractions in (0, 1]");
  rs->add_option("--seeds", sw.seeds, "comma list of seeds");
  rs->add_option("--aggregation", sw.aggregation, "sum | max")->check(CLI::IsMember({"sum", "max"}));
  rs->add_flag("--from-checkpoint", sw.from_checkpoint, "start each run from the reference model");
  rs->add_option("--jobs", sw.jobs, "worker threads")->check(CLI::PositiveNumber);
  rs->add_option("--out", sw.out, "output directory")->required();

  AnalyzeArgs an;
  auto* az = app.add_subcommand("analyze", "overlap, diversity and artifact reports");
  az->add_option("--inputs", an.inputs, "input files or directories");
  az->add_option("--report", an.report, "table1 | fig3 | fig4 | table3 | table4")
      ->required()
      ->check(CLI::IsMember({"table1", "fig3", "fig4", "table3", "table4"}));
  az->add_option("--config", an.config, "JSON experiment config")->check(CLI::ExistingFile);
  az->add_option("--ckpt", an.ckpt, "model checkpoint (table3, table4)")->check(CLI::ExistingFile);
  az->add_option("--data", an.data, "data directory (table3, table4)")->check(CLI::ExistingDirectory);
  az->add_option("--k", an.k, "top-k list length (table1)")->check(CLI::PositiveNumber);
  az->add_option("--fractions", an.fractions, "comma list of fractions (fig3)");
  az->add_option("--ns", an.ns, "comma list of neuron list lengths (fig4)");
  az->add_option("--methods", an.methods, "comma list of attribution methods (table4)");
  az->add_option("--jobs", an.jobs, "worker threads")->check(CLI::PositiveNumber);
  az->add_option("--out", an.out, "output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << kToolVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "attrlab: error: usage: " << one_line(e.what()) << '\n';
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(config, seed, out);
    if (*tr) return cmd_train(config, data, train_seed, out);
    if (*at) return cmd_attribute(attr_args, attr_method, out);
    if (*ne) return cmd_neurons(neu_args, neu_method, out);
    if (*fa) return cmd_faithfulness(fa_args, selectors, seeds, suff_r, comp_r, out);
    if (*rs) return cmd_sweep(sw);
    if (*az) return cmd_analyze(an);
  } catch (const UsageError& e) {
    std::cerr << "attrlab: error: usage: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "attrlab: error: config: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "attrlab: error: parse: " << one_line(e.what()) << '\n';
    return 1;
  } catch (const CheckpointError& e) {
    std::cerr << "attrlab: error: checkpoint: " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "attrlab: error: runtime: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
