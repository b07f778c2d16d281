// SPDX-License-Identifier: Apache-2.0
//
// Forward pass with cached intermediates and the matching reverse pass.
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "attrlab/model.hpp"

namespace attrlab {

struct ForwardOptions {
  const InterventionSpec* intervention = nullptr;
  /// Layer whose (post-intervention) activations are multiplied by `scale`;
  /// -1 for none. Used by integrated gradients.
  int scaled_layer = -1;
  double scale = 1.0;
  /// Per-layer additive offset on act_used (empty entries are skipped). Lets
  /// tests perturb single activations.
  const std::vector<Matrix>* act_offset = nullptr;
};

struct LayerCache {
  Matrix x_in;  // residual stream entering the block
  Matrix xhat1;
  Vector rstd1;
  Matrix y1;  // ln1 output
  Matrix q, k, v;
  std::vector<Matrix> attn;  // per head, seq x seq (upper triangle zero)
  Matrix heads;              // concatenated head outputs, seq x d_model
  Matrix x_mid;              // residual after attention
  Matrix xhat2;
  Vector rstd2;
  Matrix y2;
  Matrix pre;       // mlp pre-activation
  Matrix act_used;  // activations fed to the output projection
  RowVector act_factor;  // d(act_used)/d(act) per unit
};

struct Tape {
  TokenSeq tokens;
  std::vector<LayerCache> layers;
  RowVector final_xhat;
  double final_rstd = 0.0;
  ForwardTrace trace;
};

Tape forward_tape(const Parameters& params, std::span<const TokenId> tokens,
                  const ForwardOptions& opts = {});

/// Reverse pass from dL/dlogits. Accumulates parameter gradients into *grads
/// when non-null. When stop_layer >= 0, stops after computing the gradient
/// with respect to that layer's act_used (earlier layers untouched); the
/// returned vector then holds only that layer's entry filled.
std::vector<Matrix> backward(const Parameters& params, const Tape& tape,
                             const Vector& dlogits, Parameters* grads,
                             int stop_layer = -1);

/// dlogits of cross-entropy for `label`: probs - onehot(label).
Vector cross_entropy_dlogits(const Vector& probs, int label);
/// dlogits of probs[target]: p_t * (onehot(target) - probs).
Vector probability_dlogits(const Vector& probs, int target);

}  // namespace attrlab
