// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer classifier: pre-norm residual blocks, learned
// positional embeddings, causal multi-head attention, and a linear
// classification head on the final token. Every MLP post-activation matrix
// is observable, and can be overridden through an InterventionSpec.
#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrlab/common.hpp"
#include "attrlab/data.hpp"

namespace attrlab {

enum class Activation { kRelu, kGelu };

struct ModelConfig {
  std::size_t vocab_size = 64;
  std::size_t d_model = 16;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_mlp = 32;
  std::size_t max_seq_len = 24;
  std::size_t n_classes = 2;
  Activation activation = Activation::kGelu;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t total_neurons() const { return n_layers * d_mlp; }
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  RowVector ln1_gain, ln1_bias;
  Matrix w_query, w_key, w_value, w_attn_out;  // d_model x d_model
  RowVector b_query, b_key, b_value, b_attn_out;
  RowVector ln2_gain, ln2_bias;
  Matrix w_mlp_in;  // d_model x d_mlp
  RowVector b_mlp_in;
  Matrix w_mlp_out;  // d_mlp x d_model
  RowVector b_mlp_out;
};

struct Parameters {
  ModelConfig config;
  Matrix token_embedding;     // vocab_size x d_model
  Matrix position_embedding;  // max_seq_len x d_model
  std::vector<LayerParams> layers;
  RowVector final_gain, final_bias;
  Matrix head_weight;  // n_classes x d_model, row c scores class c
  RowVector head_bias;

  /// Zero-valued tensors with the same shapes (gradient / optimizer buffers).
  static Parameters zeros_like(const Parameters& p);
  bool all_finite() const;
  std::size_t parameter_count() const;
  bool operator==(const Parameters& other) const;
};

/// Visits every tensor in a fixed order as (name, tensor&). Works with any
/// mix of Matrix and RowVector members.
template <typename P, typename F>
void for_each_tensor(P& p, F&& f) {
  f("token_embedding", p.token_embedding);
  f("position_embedding", p.position_embedding);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    f(pre + "ln1_gain", L.ln1_gain);
    f(pre + "ln1_bias", L.ln1_bias);
    f(pre + "w_query", L.w_query);
    f(pre + "b_query", L.b_query);
    f(pre + "w_key", L.w_key);
    f(pre + "b_key", L.b_key);
    f(pre + "w_value", L.w_value);
    f(pre + "b_value", L.b_value);
    f(pre + "w_attn_out", L.w_attn_out);
    f(pre + "b_attn_out", L.b_attn_out);
    f(pre + "ln2_gain", L.ln2_gain);
    f(pre + "ln2_bias", L.ln2_bias);
    f(pre + "w_mlp_in", L.w_mlp_in);
    f(pre + "b_mlp_in", L.b_mlp_in);
    f(pre + "w_mlp_out", L.w_mlp_out);
    f(pre + "b_mlp_out", L.b_mlp_out);
  }
  f("final_gain", p.final_gain);
  f("final_bias", p.final_bias);
  f("head_weight", p.head_weight);
  f("head_bias", p.head_bias);
}

struct NeuronId {
  std::uint32_t layer = 0;
  std::uint32_t unit = 0;
  auto operator<=>(const NeuronId&) const = default;
};

struct NeuronAction {
  enum class Kind { kZero, kScale };
  Kind kind = Kind::kZero;
  double alpha = 0.0;

  static NeuronAction zero() { return {Kind::kZero, 0.0}; }
  static NeuronAction scale(double a) { return {Kind::kScale, a}; }
  double factor() const { return kind == Kind::kZero ? 0.0 : alpha; }
};

/// Declarative override of MLP post-activations, applied at every position.
/// A denylist applies its actions to the listed neurons only; an allowlist
/// applies its actions to the listed neurons and zeroes every other neuron.
struct InterventionSpec {
  enum class Mode { kDenylist, kAllowlist };
  Mode mode = Mode::kDenylist;
  std::map<NeuronId, NeuronAction> entries;

  static InterventionSpec deny(std::span<const NeuronId> neurons);
  /// Listed neurons keep their activation (scale 1).
  static InterventionSpec allow(std::span<const NeuronId> neurons);

  /// Per-unit multiplier for one layer.
  RowVector layer_factors(std::uint32_t layer, std::size_t d_mlp) const;
  bool is_identity() const { return mode == Mode::kDenylist && entries.empty(); }
};

struct ForwardTrace {
  std::vector<Matrix> mlp_activations;  // per layer, seq_len x d_mlp (post-intervention)
  Vector last_hidden;                   // final token after the final norm
  Vector logits;
  Vector probs;
  int predicted = 0;
};

Parameters init_model(const ModelConfig& config);

ForwardTrace forward(const Parameters& params, std::span<const TokenId> tokens,
                     const std::optional<InterventionSpec>& intervention = std::nullopt);

/// Lowest-index argmax.
int argmax(const Vector& v);
Vector softmax(const Vector& logits);

/// Cross-entropy from logits: logsumexp(logits) - logits[label].
double loss(const ForwardTrace& trace, int label);

int predict(const Parameters& params, const Instance& inst);
std::vector<int> predict_all(const Parameters& params, const Dataset& ds, int jobs = 1);
double accuracy(const Parameters& params, const Dataset& ds, int jobs = 1);

struct TrainHyper {
  double lr = 1e-2;
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  nlohmann::ordered_json to_json() const;
  static TrainHyper from_json(const nlohmann::json& j);
};

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
  bool operator==(const EpochStats&) const = default;
};

struct TrainResult {
  Parameters params;
  std::vector<EpochStats> history;  // evaluated on the full train set after each epoch
};

/// Mini-batch Adam on mean cross-entropy over all parameters. Instances are
/// shuffled each epoch from hp.seed. Throws TrainingDiverged on a non-finite loss.
TrainResult train(Parameters params, const Dataset& train_set, const TrainHyper& hp);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Container: magic "ATLBCKPT", u32 version, u64-length-prefixed JSON header
/// (model config plus caller metadata), u32 tensor count, then per tensor a
/// name, rank, u64 dims and little-endian f64 data, then an FNV-1a checksum
/// of everything before it.
void save_checkpoint(const Parameters& params, const std::filesystem::path& path,
                     const nlohmann::ordered_json& metadata = nlohmann::ordered_json::object());

struct LoadedCheckpoint {
  Parameters params;
  nlohmann::json metadata;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace attrlab
