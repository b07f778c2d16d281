// SPDX-License-Identifier: Apache-2.0
#include "attrlab/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <cstdio>
#include <sstream>
#include <tuple>
#include <unordered_set>

#include "attrlab/common.hpp"

namespace attrlab {

namespace {

const char* const kReserved[] = {"<pad>", "<oov>", "<sep>"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

Vocab::Vocab() {
  for (const char* r : kReserved) {
    token_to_id_.emplace(r, static_cast<TokenId>(id_to_token_.size()));
    id_to_token_.emplace_back(r);
  }
}

TokenId Vocab::add(const std::string& token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  const auto id = static_cast<TokenId>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(token);
  return id;
}

TokenId Vocab::lookup(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end() || it->second < kFirstRegular) return kOov;
  return it->second;
}

bool Vocab::contains(std::string_view token) const {
  return lookup(token) != kOov;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw InvalidArgument("token id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

nlohmann::ordered_json Vocab::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) j[id_to_token_[i]] = i;
  return j;
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("vocab: expected a JSON object", 0);
  std::vector<std::string> by_id(j.size());
  std::vector<bool> seen(j.size(), false);
  for (const auto& [tok, id_json] : j.items()) {
    if (!id_json.is_number_integer()) throw ParseError("vocab: non-integer id for " + tok, 0);
    const auto id = id_json.get<long long>();
    if (id < 0 || static_cast<std::size_t>(id) >= by_id.size() || seen[static_cast<std::size_t>(id)])
      throw ParseError("vocab: ids must be a permutation of 0..n-1", 0);
    by_id[static_cast<std::size_t>(id)] = tok;
    seen[static_cast<std::size_t>(id)] = true;
  }
  for (std::size_t i = 0; i < 3; ++i)
    if (by_id.size() <= i || by_id[i] != kReserved[i])
      throw ParseError("vocab: reserved ids 0..2 must be <pad>, <oov>, <sep>", 0);
  Vocab v;
  for (std::size_t i = 3; i < by_id.size(); ++i) v.add(by_id[i]);
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("vocab " + path.string() + ": " + e.what(), 0);
  }
  return from_json(j);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.push_back(lower(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

Vocab build_vocab(const std::vector<std::string>& corpus, std::size_t max_size) {
  if (corpus.empty()) throw InvalidArgument("build_vocab: empty corpus");
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& line : corpus)
    for (auto& tok : tokenize(line)) ++freq[tok];
  std::vector<std::pair<std::string, std::size_t>> entries(freq.begin(), freq.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (std::size_t i = 0; i < entries.size() && i < max_size; ++i) {
    // Reserved spellings in the corpus are never promoted to regular ids.
    if (entries[i].first == kReserved[0] || entries[i].first == kReserved[1] ||
        entries[i].first == kReserved[2])
      continue;
    v.add(entries[i].first);
  }
  return v;
}

TokenSeq to_ids(const Vocab& vocab, std::string_view text) {
  TokenSeq out;
  for (const auto& tok : tokenize(text)) out.push_back(vocab.lookup(tok));
  return out;
}

TokenSeq combine(const TokenSeq& premise, const std::optional<TokenSeq>& hypothesis,
                 std::size_t max_len) {
  if (max_len < 3) throw InvalidArgument("max_len must be at least 3");
  if (!hypothesis) {
    TokenSeq out(premise.begin(), premise.begin() + static_cast<std::ptrdiff_t>(
                                                        std::min(premise.size(), max_len)));
    return out;
  }
  const std::size_t room = max_len - 1;
  const std::size_t hyp_len = std::min(hypothesis->size(), room);
  const std::size_t prem_len = std::min(premise.size(), room - hyp_len);
  TokenSeq out;
  out.reserve(prem_len + 1 + hyp_len);
  out.insert(out.end(), premise.begin(), premise.begin() + static_cast<std::ptrdiff_t>(prem_len));
  out.push_back(Vocab::kSep);
  out.insert(out.end(), hypothesis->begin(),
             hypothesis->begin() + static_cast<std::ptrdiff_t>(hyp_len));
  return out;
}

TokenSeq encode(const Vocab& vocab, std::string_view premise,
                const std::optional<std::string>& hypothesis, std::size_t max_len) {
  std::optional<TokenSeq> hyp;
  if (hypothesis) hyp = to_ids(vocab, *hypothesis);
  return combine(to_ids(vocab, premise), hyp, max_len);
}

TokenSeq model_input(const Instance& inst, std::size_t max_len) {
  return combine(inst.premise, inst.hypothesis, max_len);
}

std::size_t Dataset::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < instances.size(); ++i)
    if (instances[i].id == id) return i;
  throw InvalidArgument("unknown instance id: " + id);
}

Dataset Dataset::subset(const std::vector<std::string>& ids) const {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < instances.size(); ++i) pos.emplace(instances[i].id, i);
  Dataset out{{}, split_name, label_names};
  out.instances.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = pos.find(id);
    if (it == pos.end()) throw InvalidArgument("unknown instance id: " + id);
    out.instances.push_back(instances[it->second]);
  }
  return out;
}

void Dataset::validate(std::size_t vocab_size) const {
  if (instances.empty()) throw InvalidArgument("dataset '" + split_name + "' is empty");
  if (label_names.size() < 2) throw InvalidArgument("dataset needs at least two labels");
  std::unordered_set<std::string> ids;
  auto check_ids = [&](const TokenSeq& seq, const std::string& id) {
    for (TokenId t : seq)
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size)
        throw InvalidArgument("instance " + id + ": token id out of vocab range");
  };
  for (const auto& inst : instances) {
    if (!ids.insert(inst.id).second) throw InvalidArgument("duplicate instance id: " + inst.id);
    if (inst.label < 0 || static_cast<std::size_t>(inst.label) >= label_names.size())
      throw InvalidArgument("instance " + inst.id + ": label out of range");
    check_ids(inst.premise, inst.id);
    if (inst.hypothesis) check_ids(*inst.hypothesis, inst.id);
  }
}

void encode_dataset(Dataset& ds, const Vocab& vocab) {
  for (auto& inst : ds.instances) {
    inst.premise = to_ids(vocab, inst.raw_premise);
    if (inst.raw_hypothesis)
      inst.hypothesis = to_ids(vocab, *inst.raw_hypothesis);
    else
      inst.hypothesis.reset();
  }
}

JsonlSchema JsonlSchema::from_json(const nlohmann::json& j) {
  JsonlSchema s;
  s.premise = j.value("premise", s.premise);
  s.hypothesis = j.value("hypothesis", s.hypothesis);
  s.label = j.value("label", s.label);
  s.id = j.value("id", s.id);
  return s;
}

Dataset load_jsonl(const std::filesystem::path& path, const JsonlSchema& schema,
                   const std::vector<std::string>& label_names,
                   const std::string& split_name) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Dataset ds{{}, split_name, label_names};
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError(path.filename().string() + ":" + std::to_string(lineno) + ": " + msg, lineno);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw fail("malformed JSON");
    }
    if (!obj.is_object()) throw fail("expected a JSON object");
    auto text_field = [&](const std::string& name) -> std::string {
      auto it = obj.find(name);
      if (it == obj.end() || !it->is_string()) throw fail("missing string field '" + name + "'");
      return it->get<std::string>();
    };
    Instance inst;
    inst.raw_premise = text_field(schema.premise);
    if (!schema.hypothesis.empty()) inst.raw_hypothesis = text_field(schema.hypothesis);
    auto lab = obj.find(schema.label);
    if (lab == obj.end()) throw fail("missing label field '" + schema.label + "'");
    if (lab->is_string()) {
      const auto name = lab->get<std::string>();
      auto pos = std::find(label_names.begin(), label_names.end(), name);
      if (pos == label_names.end()) throw fail("unknown label '" + name + "'");
      inst.label = static_cast<int>(pos - label_names.begin());
    } else if (lab->is_number_integer()) {
      inst.label = lab->get<int>();
      if (inst.label < 0 || static_cast<std::size_t>(inst.label) >= label_names.size())
        throw fail("label index out of range");
    } else {
      throw fail("label must be a string or integer");
    }
    if (schema.id.empty()) {
      inst.id = split_name + "-" + std::to_string(lineno);
    } else {
      auto idf = obj.find(schema.id);
      if (idf == obj.end()) throw fail("missing id field '" + schema.id + "'");
      inst.id = idf->is_string() ? idf->get<std::string>() : idf->dump();
    }
    if (!ids.insert(inst.id).second) throw fail("duplicate id '" + inst.id + "'");
    ds.instances.push_back(std::move(inst));
  }
  if (ds.instances.empty()) throw ParseError(path.string() + ": no instances", 0);
  return ds;
}

void write_jsonl(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& inst : ds.instances) {
    nlohmann::ordered_json j;
    j["id"] = inst.id;
    j["premise"] = inst.raw_premise;
    if (inst.raw_hypothesis) j["hypothesis"] = *inst.raw_hypothesis;
    j["label"] = ds.label_names.at(static_cast<std::size_t>(inst.label));
    out << j.dump() << '\n';
  }
}

double lexical_overlap(const Instance& inst) {
  if (!inst.raw_hypothesis) return 0.0;
  const auto p = tokenize(inst.raw_premise);
  const auto h = tokenize(*inst.raw_hypothesis);
  std::set<std::string> ps(p.begin(), p.end()), hs(h.begin(), h.end());
  std::size_t common = 0;
  for (const auto& t : hs) common += ps.count(t);
  const std::size_t uni = ps.size() + hs.size() - common;
  return uni == 0 ? 0.0 : static_cast<double>(common) / static_cast<double>(uni);
}

bool is_ordered_subsequence(const TokenSeq& needle, const TokenSeq& haystack) {
  std::size_t j = 0;
  for (std::size_t i = 0; i < haystack.size() && j < needle.size(); ++i)
    if (haystack[i] == needle[j]) ++j;
  return j == needle.size();
}

GenConfig GenConfig::from_json(const nlohmann::json& j) {
  GenConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.n_train = j.value("n_train", c.n_train);
  c.n_test = j.value("n_test", c.n_test);
  c.n_counterexamples = j.value("n_counterexamples", c.n_counterexamples);
  c.artifact_rate = j.value("artifact_rate", c.artifact_rate);
  c.premise_min_len = j.value("premise_min_len", c.premise_min_len);
  c.premise_max_len = j.value("premise_max_len", c.premise_max_len);
  return c;
}

nlohmann::ordered_json GenConfig::to_json() const {
  return {{"vocab_size", vocab_size},
          {"n_train", n_train},
          {"n_test", n_test},
          {"n_counterexamples", n_counterexamples},
          {"artifact_rate", artifact_rate},
          {"premise_min_len", premise_min_len},
          {"premise_max_len", premise_max_len}};
}

namespace {

std::string word(std::size_t i) { return "w" + std::to_string(i); }

std::string join(const std::vector<std::size_t>& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += word(words[i]);
  }
  return s;
}

// Number of ordered premises of length n over v words, saturating.
double premise_capacity(const GenConfig& c) {
  double total = 0.0;
  for (std::size_t n = c.premise_min_len; n <= c.premise_max_len; ++n) {
    double p = 1.0;
    for (std::size_t k = 0; k < n; ++k) p *= static_cast<double>(c.vocab_size - k);
    total += p;
  }
  return total;
}

class Generator {
 public:
  Generator(const GenConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {}

  Dataset make_split(const std::string& name, std::size_t count, bool counterexamples) {
    Dataset ds{{}, name, {"entailment", "non-entailment"}};
    std::size_t attempts = 0;
    const std::size_t max_attempts = 100 * count + 1000;
    while (ds.instances.size() < count) {
      if (++attempts > max_attempts)
        throw InvalidArgument("gen_synthetic_nli: cannot generate " + std::to_string(count) +
                              " distinct '" + name + "' instances with this vocabulary");
      auto [premise, hypothesis, label] = counterexamples ? counterexample() : regular();
      std::string p = join(premise), h = join(hypothesis);
      if (!seen_.insert(p + "|" + h).second) continue;
      Instance inst;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s-%05zu", name.c_str(), ds.instances.size());
      inst.id = buf;
      inst.raw_premise = std::move(p);
      inst.raw_hypothesis = std::move(h);
      inst.label = label;
      ds.instances.push_back(std::move(inst));
    }
    return ds;
  }

 private:
  using Draw = std::tuple<std::vector<std::size_t>, std::vector<std::size_t>, int>;

  std::vector<std::size_t> premise() {
    const std::size_t span = cfg_.premise_max_len - cfg_.premise_min_len + 1;
    const std::size_t n = cfg_.premise_min_len + rng_.below(span);
    std::vector<std::size_t> pool(cfg_.vocab_size);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    // partial Fisher-Yates: first n entries are a uniform ordered sample
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t j = i + rng_.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(n);
    return pool;
  }

  // Ordered subset of premise positions of size j.
  std::vector<std::size_t> pick_positions(std::size_t n, std::size_t j) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng_.shuffle(idx);
    idx.resize(j);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  std::vector<std::size_t> scrambled(const std::vector<std::size_t>& prem,
                                     std::vector<std::size_t> pos) {
    // pos is sorted; any other order of distinct premise tokens breaks the rule
    std::vector<std::size_t> sorted = pos;
    do {
      rng_.shuffle(pos);
    } while (pos == sorted);
    std::vector<std::size_t> out;
    for (auto p : pos) out.push_back(prem[p]);
    return out;
  }

  // Largest hypothesis size whose overlap stays strictly below kHighOverlap.
  static std::size_t low_cap(std::size_t n) {
    std::size_t j = n;
    while (j > 2 && static_cast<double>(j) / static_cast<double>(n) >= kHighOverlap) --j;
    return j;
  }

  Draw regular() {
    auto prem = premise();
    const std::size_t n = prem.size();
    const int label = rng_.below(2) == 0 ? kEntails : kNotEntails;
    if (label == kEntails && rng_.uniform() < cfg_.artifact_rate) return {prem, prem, label};
    const std::size_t hi = low_cap(n);
    const std::size_t j = 2 + rng_.below(hi - 1);
    auto pos = pick_positions(n, j);
    if (label == kEntails) {
      std::vector<std::size_t> hyp;
      for (auto p : pos) hyp.push_back(prem[p]);
      return {prem, hyp, label};
    }
    return {prem, scrambled(prem, pos), label};
  }

  Draw counterexample() {
    auto prem = premise();
    std::vector<std::size_t> pos(prem.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    return {prem, scrambled(prem, pos), kNotEntails};
  }

  GenConfig cfg_;
  Rng rng_;
  std::unordered_set<std::string> seen_;
};

}  // namespace

SyntheticNli gen_synthetic_nli(const GenConfig& cfg, std::uint64_t seed) {
  if (cfg.artifact_rate < 0.0 || cfg.artifact_rate > 1.0)
    throw InvalidArgument("artifact_rate must lie in [0, 1]");
  if (cfg.premise_min_len < 3 || cfg.premise_max_len < cfg.premise_min_len)
    throw InvalidArgument("premise lengths must satisfy 3 <= min <= max");
  if (cfg.vocab_size < cfg.premise_max_len)
    throw InvalidArgument("vocab_size smaller than the longest premise");
  if (cfg.n_train == 0 || cfg.n_test == 0 || cfg.n_counterexamples == 0)
    throw InvalidArgument("instance counts must be positive");
  const double total = static_cast<double>(cfg.n_train + cfg.n_test + cfg.n_counterexamples);
  if (total > premise_capacity(cfg))
    throw InvalidArgument("requested instance counts exceed what the vocabulary can generate");

  Generator gen(cfg, seed);
  SyntheticNli out;
  out.train = gen.make_split("train", cfg.n_train, false);
  out.test = gen.make_split("test", cfg.n_test, false);
  out.counterexamples = gen.make_split("counter", cfg.n_counterexamples, true);

  std::vector<std::string> corpus;
  for (const Dataset* ds : {&out.train, &out.test, &out.counterexamples})
    for (const auto& inst : ds->instances) {
      corpus.push_back(inst.raw_premise);
      corpus.push_back(*inst.raw_hypothesis);
    }
  out.vocab = build_vocab(corpus, cfg.vocab_size);
  encode_dataset(out.train, out.vocab);
  encode_dataset(out.test, out.vocab);
  encode_dataset(out.counterexamples, out.vocab);
  return out;
}

}  // namespace attrlab
