// SPDX-License-Identifier: Apache-2.0
#include "attrlab/instance_attribution.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace attrlab {

namespace {

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

int test_label_for(const Parameters& params, const Instance& inst, LabelSource src) {
  return src == LabelSource::kGold ? inst.label : predict(params, inst);
}

}  // namespace

std::string to_string(IaMethod m) {
  switch (m) {
    case IaMethod::kIF: return "IF";
    case IaMethod::kGS: return "GS";
    case IaMethod::kNAInstances: return "NA_INSTANCES";
  }
  return "?";
}

IaMethod parse_ia_method(const std::string& s) {
  const auto l = lowercase(s);
  if (l == "if") return IaMethod::kIF;
  if (l == "gs") return IaMethod::kGS;
  if (l == "na-instances" || l == "na_instances") return IaMethod::kNAInstances;
  throw InvalidArgument("unknown instance attribution method '" + s + "'");
}

std::string to_string(Direction d) { return d == Direction::kMost ? "most" : "least"; }

Direction parse_direction(const std::string& s) {
  const auto l = lowercase(s);
  if (l == "most") return Direction::kMost;
  if (l == "least") return Direction::kLeast;
  throw InvalidArgument("unknown direction '" + s + "'");
}

nlohmann::ordered_json AttributionOptions::to_json() const {
  return {{"damping", damping},
          {"ig_steps", ig_steps},
          {"neuron_target", neuron_target == TargetMode::kPredicted ? "predicted" : "gold"},
          {"test_label", test_label == LabelSource::kPredicted ? "predicted" : "gold"},
          {"r", r},
          {"dcns_normalized", dcns_normalized},
          {"if_helpfulness", if_helpfulness}};
}

AttributionOptions AttributionOptions::from_json(const nlohmann::json& j) {
  AttributionOptions o;
  o.damping = j.value("damping", o.damping);
  o.ig_steps = j.value("ig_steps", o.ig_steps);
  o.r = j.value("r", o.r);
  o.dcns_normalized = j.value("dcns_normalized", o.dcns_normalized);
  o.if_helpfulness = j.value("if_helpfulness", o.if_helpfulness);
  auto mode = [](const std::string& s, const char* what) {
    if (s == "predicted") return true;
    if (s == "gold") return false;
    throw InvalidArgument(std::string("attribution config: ") + what +
                          " must be 'predicted' or 'gold'");
  };
  o.neuron_target = mode(j.value("neuron_target", std::string("predicted")), "neuron_target")
                        ? TargetMode::kPredicted
                        : TargetMode::kGold;
  o.test_label = mode(j.value("test_label", std::string("predicted")), "test_label")
                     ? LabelSource::kPredicted
                     : LabelSource::kGold;
  if (!(o.damping > 0.0)) throw InvalidArgument("attribution config: damping must be positive");
  if (o.ig_steps == 0) throw InvalidArgument("attribution config: ig_steps must be positive");
  if (o.r == 0) throw InvalidArgument("attribution config: r must be positive");
  return o;
}

InstanceScores make_instance_scores(IaMethod method, std::string test_id,
                                    const std::vector<std::string>& train_ids,
                                    const std::vector<double>& values) {
  if (train_ids.size() != values.size())
    throw InvalidArgument("make_instance_scores: size mismatch");
  InstanceScores s;
  s.method = method;
  s.test_id = std::move(test_id);
  for (std::size_t i = 0; i < train_ids.size(); ++i) {
    if (!std::isfinite(values[i]))
      throw Error("non-finite influence score for train instance " + train_ids[i]);
    s.scores.emplace(train_ids[i], values[i]);
  }
  s.ranking = train_ids;
  std::sort(s.ranking.begin(), s.ranking.end(), [&](const std::string& a, const std::string& b) {
    const double sa = s.scores.at(a), sb = s.scores.at(b);
    if (sa != sb) return sa > sb;
    return a < b;
  });
  return s;
}

// ---------------------------------------------------------------------------

AttributionContext::AttributionContext(Parameters params, Dataset train, AttributionOptions opts)
    : params_(std::move(params)), train_(std::move(train)), opts_(opts) {
  if (train_.size() == 0) throw InvalidArgument("attribution context: empty training set");
}

std::vector<std::string> AttributionContext::train_ids() const {
  std::vector<std::string> ids;
  ids.reserve(train_.size());
  for (const auto& inst : train_.instances) ids.push_back(inst.id);
  return ids;
}

const std::vector<HeadGradient>& AttributionContext::train_gradients() const {
  std::call_once(grads_once_, [&] {
    train_grads_.resize(train_.size());
    parallel_for(train_.size(), opts_.jobs,
                 [&](std::size_t i) { train_grads_[i] = head_gradient(params_, train_[i]); });
  });
  return train_grads_;
}

const HessianMatrix& AttributionContext::hessian() const {
  std::call_once(hessian_once_, [&] {
    hessian_ = std::make_unique<HessianMatrix>(
        head_hessian(params_, train_, opts_.damping, opts_.jobs));
  });
  return *hessian_;
}

void AttributionContext::compute_train_neurons() const {
  std::call_once(neurons_once_, [&] {
    train_neuron_scores_.resize(train_.size());
    train_top_.resize(train_.size());
    const std::size_t r = std::min(opts_.r, params_.config.total_neurons());
    parallel_for(train_.size(), opts_.jobs, [&](std::size_t i) {
      train_neuron_scores_[i] =
          attribute_neurons(params_, train_[i], opts_.ig_steps, opts_.neuron_target).scores;
      train_top_[i] = top_r(train_neuron_scores_[i], r);
    });
  });
}

const Matrix& AttributionContext::train_neuron_scores(std::size_t i) const {
  compute_train_neurons();
  return train_neuron_scores_.at(i);
}

const RankedNeurons& AttributionContext::train_top_neurons(std::size_t i) const {
  compute_train_neurons();
  return train_top_.at(i);
}

const NeuronAttribution& AttributionContext::test_neurons(const Instance& inst) const {
  {
    std::lock_guard<std::mutex> lock(test_mu_);
    auto it = test_cache_.find(inst.id);
    if (it != test_cache_.end()) return *it->second;
  }
  auto computed = std::make_unique<NeuronAttribution>(
      attribute_neurons(params_, inst, opts_.ig_steps, opts_.neuron_target));
  std::lock_guard<std::mutex> lock(test_mu_);
  auto [it, inserted] = test_cache_.emplace(inst.id, std::move(computed));
  return *it->second;
}

HeadGradient AttributionContext::test_gradient(const Instance& inst) const {
  const auto tokens = model_input(inst, params_.config.max_seq_len);
  const auto trace = forward(params_, tokens);
  const int label = opts_.test_label == LabelSource::kGold ? inst.label : trace.predicted;
  return head_gradient(trace.last_hidden, trace.probs, label);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> ids_of(const Dataset& ds) {
  std::vector<std::string> ids;
  ids.reserve(ds.size());
  for (const auto& inst : ds.instances) ids.push_back(inst.id);
  return ids;
}

InstanceScores dot_scores(IaMethod method, const std::string& test_id, const Vector& lhs,
                          const std::vector<HeadGradient>& train_grads,
                          const std::vector<std::string>& ids, double sign) {
  std::vector<double> vals(train_grads.size());
  for (std::size_t i = 0; i < train_grads.size(); ++i) {
    if (train_grads[i].values.size() != lhs.size())
      throw InvalidArgument("gradient shape mismatch");
    vals[i] = sign * lhs.dot(train_grads[i].values);
  }
  return make_instance_scores(method, test_id, ids, vals);
}

}  // namespace

InstanceScores gs_scores(const Parameters& params, const Instance& test_instance,
                         const Dataset& train_set, LabelSource test_label) {
  const auto tokens = model_input(test_instance, params.config.max_seq_len);
  const auto g_test =
      head_gradient(params, tokens, test_label_for(params, test_instance, test_label));
  std::vector<HeadGradient> grads;
  grads.reserve(train_set.size());
  for (const auto& inst : train_set.instances) grads.push_back(head_gradient(params, inst));
  return dot_scores(IaMethod::kGS, test_instance.id, g_test.values, grads, ids_of(train_set), 1.0);
}

InstanceScores if_scores(const Parameters& params, const Instance& test_instance,
                         const Dataset& train_set, const HessianMatrix& hessian,
                         LabelSource test_label, bool helpfulness) {
  const auto tokens = model_input(test_instance, params.config.max_seq_len);
  const auto g_test =
      head_gradient(params, tokens, test_label_for(params, test_instance, test_label));
  // H is symmetric, so g_test^T H^-1 g_train = (H^-1 g_test) . g_train
  const Vector z = solve_hvp(hessian, g_test.values);
  std::vector<HeadGradient> grads;
  grads.reserve(train_set.size());
  for (const auto& inst : train_set.instances) grads.push_back(head_gradient(params, inst));
  return dot_scores(IaMethod::kIF, test_instance.id, z, grads, ids_of(train_set),
                    helpfulness ? 1.0 : -1.0);
}

InstanceScores gs_scores(const AttributionContext& ctx, const Instance& test_instance) {
  const auto g_test = ctx.test_gradient(test_instance);
  return dot_scores(IaMethod::kGS, test_instance.id, g_test.values, ctx.train_gradients(),
                    ctx.train_ids(), 1.0);
}

InstanceScores if_scores(const AttributionContext& ctx, const Instance& test_instance) {
  const auto g_test = ctx.test_gradient(test_instance);
  const Vector z = solve_hvp(ctx.hessian(), g_test.values);
  return dot_scores(IaMethod::kIF, test_instance.id, z, ctx.train_gradients(), ctx.train_ids(),
                    ctx.options().if_helpfulness ? 1.0 : -1.0);
}

std::vector<std::string> select_fraction(const std::vector<std::string>& ranking, double fraction,
                                         Direction direction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw InvalidArgument("select_fraction: fraction must lie in (0, 1]");
  if (ranking.empty()) throw InvalidArgument("select_fraction: empty ranking");
  const double n = static_cast<double>(ranking.size());
  // tolerance keeps exact products such as 0.2 * 10 from rounding up
  auto k = static_cast<std::size_t>(std::ceil(fraction * n - 1e-9));
  k = std::clamp<std::size_t>(k, 1, ranking.size());
  if (direction == Direction::kMost)
    return {ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(k)};
  return {ranking.end() - static_cast<std::ptrdiff_t>(k), ranking.end()};
}

std::vector<std::string> select_fraction(const InstanceScores& scores, double fraction,
                                         Direction direction) {
  return select_fraction(scores.ranking, fraction, direction);
}

void write_score_csv(const std::vector<InstanceScores>& all, const std::filesystem::path& path,
                     const std::string& header_comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << "test_id,train_id,method,score\n";
  char buf[64];
  for (const auto& s : all) {
    for (const auto& id : s.ranking) {
      std::snprintf(buf, sizeof buf, "%.17g", s.scores.at(id));
      out << s.test_id << ',' << id << ',' << to_string(s.method) << ',' << buf << '\n';
    }
  }
}

nlohmann::ordered_json rankings_to_json(const std::vector<InstanceScores>& all) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& s : all)
    j.push_back({{"test_id", s.test_id}, {"method", to_string(s.method)}, {"ranking", s.ranking}});
  return j;
}

std::vector<InstanceScores> read_score_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<InstanceScores> out;
  std::vector<std::vector<std::string>> ids;
  std::vector<std::vector<double>> vals;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "test_id,train_id,method,score")
        throw ParseError(path.string() + ": bad header", lineno);
      header = true;
      continue;
    }
    std::istringstream ss(line);
    std::string test, train, method, score;
    if (!std::getline(ss, test, ',') || !std::getline(ss, train, ',') ||
        !std::getline(ss, method, ',') || !std::getline(ss, score))
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed row", lineno);
    auto [it, fresh] = index.emplace(test, out.size());
    if (fresh) {
      out.push_back({});
      out.back().test_id = test;
      out.back().method = parse_ia_method(method == "NA_INSTANCES" ? "na-instances" : method);
      ids.emplace_back();
      vals.emplace_back();
    }
    ids[it->second].push_back(train);
    try {
      vals[it->second].push_back(std::stod(score));
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad score", lineno);
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = make_instance_scores(out[i].method, out[i].test_id, ids[i], vals[i]);
  return out;
}

}  // namespace attrlab
