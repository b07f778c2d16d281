// SPDX-License-Identifier: Apache-2.0
#include "attrlab/neuron_attribution.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "attrlab/gradients.hpp"

namespace attrlab {

NeuronAttribution attribute_neurons(const Parameters& params, std::span<const TokenId> tokens,
                                    int gold_label, std::size_t steps, TargetMode target) {
  if (steps == 0) throw InvalidArgument("attribute_neurons: steps must be at least 1");
  const auto& cfg = params.config;
  const auto base = forward(params, tokens);
  NeuronAttribution out;
  out.target = target == TargetMode::kPredicted ? base.predicted : gold_label;
  out.scores = Matrix::Zero(static_cast<Eigen::Index>(cfg.n_layers),
                            static_cast<Eigen::Index>(cfg.d_mlp));
  const double m = static_cast<double>(steps);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const Matrix& act = base.mlp_activations[l];
    Matrix grad_sum = Matrix::Zero(act.rows(), act.cols());
    for (std::size_t k = 1; k <= steps; ++k)
      grad_sum += prob_grad_wrt_neuron_positions(params, tokens, l, out.target,
                                                 static_cast<double>(k) / m);
    out.scores.row(static_cast<Eigen::Index>(l)) =
        (act.array() * grad_sum.array()).colwise().sum().matrix() / m;
  }
  return out;
}

NeuronAttribution attribute_neurons(const Parameters& params, const Instance& inst,
                                    std::size_t steps, TargetMode target) {
  const auto tokens = model_input(inst, params.config.max_seq_len);
  return attribute_neurons(params, tokens, inst.label, steps, target);
}

RankedNeurons make_ranked(std::vector<NeuronId> neurons, std::vector<double> scores) {
  RankedNeurons out;
  out.neurons = std::move(neurons);
  out.scores = std::move(scores);
  if (out.scores.empty()) return out;
  const auto [lo, hi] = std::minmax_element(out.scores.begin(), out.scores.end());
  const double mn = *lo, mx = *hi;
  out.normalized.reserve(out.scores.size());
  for (double s : out.scores) out.normalized.push_back(mx > mn ? (s - mn) / (mx - mn) : 1.0);
  return out;
}

RankedNeurons top_r(const Matrix& scores, std::size_t r) {
  const auto total = static_cast<std::size_t>(scores.size());
  if (r == 0) throw InvalidArgument("top_r: r must be at least 1");
  if (r > total)
    throw InvalidArgument("top_r: r=" + std::to_string(r) + " exceeds neuron count " +
                          std::to_string(total));
  std::vector<NeuronId> ids;
  ids.reserve(total);
  for (Eigen::Index l = 0; l < scores.rows(); ++l)
    for (Eigen::Index u = 0; u < scores.cols(); ++u)
      ids.push_back({static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(u)});
  auto score_of = [&](const NeuronId& n) { return scores(n.layer, n.unit); };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(r), ids.end(),
                    [&](const NeuronId& a, const NeuronId& b) {
                      const double sa = score_of(a), sb = score_of(b);
                      if (sa != sb) return sa > sb;
                      return a < b;
                    });
  ids.resize(r);
  std::vector<double> vals;
  vals.reserve(r);
  for (const auto& n : ids) vals.push_back(score_of(n));
  return make_ranked(std::move(ids), std::move(vals));
}

void write_neuron_dump(const RankedNeurons& ranked, const std::filesystem::path& path,
                       const std::string& header_comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << "layer,unit,score\n";
  char buf[64];
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", ranked.scores[i]);
    out << ranked.neurons[i].layer << ',' << ranked.neurons[i].unit << ',' << buf << '\n';
  }
}

RankedNeurons read_neuron_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::vector<NeuronId> ids;
  std::vector<double> vals;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "layer,unit,score") throw ParseError(path.string() + ": bad header", lineno);
      header_seen = true;
      continue;
    }
    std::istringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c))
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed row", lineno);
    try {
      ids.push_back({static_cast<std::uint32_t>(std::stoul(a)),
                     static_cast<std::uint32_t>(std::stoul(b))});
      vals.push_back(std::stod(c));
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed row", lineno);
    }
  }
  return make_ranked(std::move(ids), std::move(vals));
}

}  // namespace attrlab
