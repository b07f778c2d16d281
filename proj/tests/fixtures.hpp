// SPDX-License-Identifier: Apache-2.0
//
// Small random models and datasets shared by the test binaries.
#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "attrlab/backprop.hpp"
#include "attrlab/data.hpp"
#include "attrlab/model.hpp"

namespace fixtures {

using namespace attrlab;

inline ModelConfig tiny_config(std::uint64_t seed, Activation act = Activation::kGelu,
                               std::size_t n_classes = 2) {
  ModelConfig c;
  c.vocab_size = 12;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_mlp = 6;
  c.max_seq_len = 10;
  c.n_classes = n_classes;
  c.activation = act;
  c.seed = seed;
  return c;
}

// init_model leaves biases at zero and gains at one; jitter everything so
// gradient checks exercise every parameter.
inline Parameters random_model(const ModelConfig& c, double jitter = 0.1) {
  Parameters p = init_model(c);
  Rng rng(c.seed ^ 0x5eedULL);
  for_each_tensor(p, [&](const std::string&, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += jitter * rng.normal();
  });
  return p;
}

inline TokenSeq random_tokens(Rng& rng, std::size_t len, std::size_t vocab) {
  TokenSeq s(len);
  for (auto& t : s) t = static_cast<TokenId>(rng.below(vocab));
  return s;
}

inline std::string make_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%03zu", prefix, i);
  return buf;
}

// Single-text instances with random tokens and labels.
inline Dataset random_dataset(std::uint64_t seed, std::size_t n, const ModelConfig& c,
                              const char* prefix = "tr") {
  Rng rng(seed);
  Dataset ds;
  ds.split_name = prefix;
  for (std::size_t k = 0; k < c.n_classes; ++k) ds.label_names.push_back("c" + std::to_string(k));
  for (std::size_t i = 0; i < n; ++i) {
    Instance inst;
    inst.id = make_id(prefix, i);
    inst.premise = random_tokens(rng, 3 + rng.below(c.max_seq_len - 3), c.vocab_size);
    inst.raw_premise = "x";
    inst.label = static_cast<int>(rng.below(c.n_classes));
    ds.instances.push_back(std::move(inst));
  }
  return ds;
}

inline double prob_of(const Parameters& p, std::span<const TokenId> tokens, int target,
                      const ForwardOptions& opts = {}) {
  return forward_tape(p, tokens, opts).trace.probs(target);
}

}  // namespace fixtures
