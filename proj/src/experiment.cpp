// SPDX-License-Identifier: Apache-2.0
#include "attrlab/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace attrlab {

namespace {

using ojson = nlohmann::ordered_json;

void check_keys(const nlohmann::json& j, const ojson& defaults, const std::string& section) {
  if (!j.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items())
    if (!defaults.contains(key))
      throw ConfigError("config: unknown key '" + section + "." + key + "'");
}

template <typename F>
auto guarded(const std::string& section, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: bad value in section '" + section + "': " + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

ojson AnalysisOptions::to_json() const {
  return {{"fractions", fractions},
          {"sweep_seeds", sweep_seeds},
          {"faithfulness_seeds", faithfulness_seeds},
          {"sufficiency_r", sufficiency_r},
          {"comprehensiveness_r", comprehensiveness_r},
          {"aggregation", attrlab::to_string(aggregation)},
          {"from_checkpoint", from_checkpoint},
          {"artifact_ks", artifact_ks},
          {"artifact_seed", artifact_seed}};
}

AnalysisOptions AnalysisOptions::from_json(const nlohmann::json& j) {
  AnalysisOptions o;
  o.fractions = j.value("fractions", o.fractions);
  o.sweep_seeds = j.value("sweep_seeds", o.sweep_seeds);
  o.faithfulness_seeds = j.value("faithfulness_seeds", o.faithfulness_seeds);
  o.sufficiency_r = j.value("sufficiency_r", o.sufficiency_r);
  o.comprehensiveness_r = j.value("comprehensiveness_r", o.comprehensiveness_r);
  o.aggregation = parse_aggregation(j.value("aggregation", std::string("sum")));
  o.from_checkpoint = j.value("from_checkpoint", o.from_checkpoint);
  o.artifact_ks = j.value("artifact_ks", o.artifact_ks);
  o.artifact_seed = j.value("artifact_seed", o.artifact_seed);
  for (double f : o.fractions)
    if (!(f > 0.0 && f <= 1.0)) throw InvalidArgument("analysis config: fractions must lie in (0, 1]");
  return o;
}

ojson ExperimentConfig::to_json() const {
  return {{"data", data.to_json()},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"attribution", attribution.to_json()},
          {"analysis", analysis.to_json()}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  const ExperimentConfig defaults;
  const ojson d = defaults.to_json();
  for (const auto& [key, value] : j.items())
    if (!d.contains(key)) throw ConfigError("config: unknown section '" + key + "'");
  auto section = [&](const char* name) {
    if (!j.contains(name)) return nlohmann::json::object();
    check_keys(j.at(name), d.at(name), name);
    return j.at(name);
  };
  ExperimentConfig c;
  c.data = guarded("data", [&] { return GenConfig::from_json(section("data")); });
  c.model = guarded("model", [&] {
    auto m = ModelConfig::from_json(section("model"));
    m.validate();
    return m;
  });
  c.train = guarded("train", [&] { return TrainHyper::from_json(section("train")); });
  c.attribution =
      guarded("attribution", [&] { return AttributionOptions::from_json(section("attribution")); });
  c.analysis = guarded("analysis", [&] { return AnalysisOptions::from_json(section("analysis")); });
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string file_hash(const std::filesystem::path& path) { return hex64(fnv1a64(read_file(path))); }

std::string directory_hash(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) {
    acc += std::filesystem::relative(f, dir).generic_string();
    acc += '\0';
    acc += file_hash(f);
    acc += '\n';
  }
  return hex64(fnv1a64(acc));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

void write_json(const std::filesystem::path& path, const ojson& j) {
  write_text(path, j.dump(2) + "\n");
}

nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": invalid JSON: " + e.what(), 0);
  }
}

std::string Provenance::comment() const {
  std::string s = "tool=attrlab " + tool_version;
  if (!command.empty()) s += " command=" + command;
  if (!config_hash.empty()) s += " config=" + config_hash;
  if (!checkpoint_hash.empty()) s += " checkpoint=" + checkpoint_hash;
  if (!data_hash.empty()) s += " data=" + data_hash;
  if (seed) s += " seed=" + std::to_string(*seed);
  return s;
}

ojson Provenance::to_json() const {
  ojson j = {{"tool", "attrlab"}, {"tool_version", tool_version}};
  if (!command.empty()) j["command"] = command;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  if (!checkpoint_hash.empty()) j["checkpoint_hash"] = checkpoint_hash;
  if (!data_hash.empty()) j["data_hash"] = data_hash;
  if (seed) j["seed"] = *seed;
  return j;
}

void save_data_dir(const SyntheticNli& data, const std::filesystem::path& dir,
                   const Provenance& prov) {
  std::filesystem::create_directories(dir);
  write_jsonl(data.train, dir / "train.jsonl");
  write_jsonl(data.test, dir / "test.jsonl");
  write_jsonl(data.counterexamples, dir / "counterexamples.jsonl");
  data.vocab.save(dir / "vocab.json");
  ojson files = ojson::object();
  for (const char* name : {"train.jsonl", "test.jsonl", "counterexamples.jsonl", "vocab.json"})
    files[name] = file_hash(dir / name);
  write_json(dir / "manifest.json", {{"provenance", prov.to_json()},
                                     {"label_names", data.train.label_names},
                                     {"sizes",
                                      {{"train", data.train.size()},
                                       {"test", data.test.size()},
                                       {"counterexamples", data.counterexamples.size()}}},
                                     {"files", files}});
}

DataDir load_data_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("data directory not found: " + dir.string());
  std::vector<std::string> labels = {"entailment", "non-entailment"};
  if (std::filesystem::exists(dir / "manifest.json")) {
    const auto m = read_json(dir / "manifest.json");
    if (m.contains("label_names")) labels = m.at("label_names").get<std::vector<std::string>>();
  }
  DataDir out;
  out.vocab = Vocab::load(dir / "vocab.json");
  JsonlSchema schema;
  schema.hypothesis = "hypothesis";
  schema.id = "id";
  auto load = [&](const char* file, const char* split) {
    Dataset ds = load_jsonl(dir / file, schema, labels, split);
    encode_dataset(ds, out.vocab);
    return ds;
  };
  out.train = load("train.jsonl", "train");
  out.test = load("test.jsonl", "test");
  if (std::filesystem::exists(dir / "counterexamples.jsonl"))
    out.counterexamples = load("counterexamples.jsonl", "counter");
  else
    out.counterexamples.label_names = labels;
  return out;
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace attrlab
