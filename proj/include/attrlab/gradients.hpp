// SPDX-License-Identifier: Apache-2.0
//
// Exact gradients used by the attribution methods: the classification-head
// gradient and Hessian of cross-entropy, a damped SPD solve, and the gradient
// of a class probability with respect to one layer's MLP activations.
#pragma once

#include <span>

#include "attrlab/model.hpp"

namespace attrlab {

/// Gradient of cross-entropy with respect to the head parameters, flattened
/// row-major by class: entry c*(d_model+1)+j is d/dW[c][j] for j < d_model
/// and d/db[c] for j == d_model.
struct HeadGradient {
  Vector values;
  std::size_t n_classes = 0;
  std::size_t width = 0;  // d_model + 1

  static std::size_t index(std::size_t cls, std::size_t j, std::size_t width) {
    return cls * width + j;
  }
};

HeadGradient head_gradient(const Vector& last_hidden, const Vector& probs, int label);
HeadGradient head_gradient(const Parameters& params, std::span<const TokenId> tokens, int label);
HeadGradient head_gradient(const Parameters& params, const Instance& inst);

struct HessianMatrix {
  Matrix values;  // side n_classes * (d_model + 1), same layout as HeadGradient
  double damping = 0.0;
};

inline constexpr double kDefaultDamping = 1e-2;

/// Features of one instance needed by the head Hessian.
struct HeadFeatures {
  Vector last_hidden;
  Vector probs;
};

/// (1/N) sum_a (diag(p_a) - p_a p_a^T) (x) ([h_a;1][h_a;1]^T) + damping * I.
/// Assembled on the upper triangle and mirrored, so the result is bitwise
/// symmetric.
HessianMatrix head_hessian(std::span<const HeadFeatures> features, double damping);
HessianMatrix head_hessian(const Parameters& params, const Dataset& train_set,
                           double damping = kDefaultDamping, int jobs = 1);

/// Solves H x = v by Cholesky. Throws NotPositiveDefinite (with the smallest
/// eigenvalue) when the factorization fails.
Vector solve_hvp(const HessianMatrix& hessian, const Vector& v);

/// Per-position gradient of probs[target] with respect to the activations fed
/// to layer `layer`'s MLP output projection, evaluated with that layer's
/// activations multiplied by `scale`. Result is seq_len x d_mlp.
Matrix prob_grad_wrt_neuron_positions(const Parameters& params, std::span<const TokenId> tokens,
                                      std::size_t layer, int target, double scale);

/// Same gradient summed over token positions (one entry per unit).
Vector prob_grad_wrt_neurons(const Parameters& params, std::span<const TokenId> tokens,
                             std::size_t layer, int target, double scale);

}  // namespace attrlab
