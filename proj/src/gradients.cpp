// SPDX-License-Identifier: Apache-2.0
#include "attrlab/gradients.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "attrlab/backprop.hpp"

namespace attrlab {

HeadGradient head_gradient(const Vector& last_hidden, const Vector& probs, int label) {
  const auto C = probs.size();
  const auto d = last_hidden.size();
  if (label < 0 || label >= C) throw InvalidArgument("head_gradient: label out of range");
  HeadGradient g;
  g.n_classes = static_cast<std::size_t>(C);
  g.width = static_cast<std::size_t>(d + 1);
  g.values.resize(C * (d + 1));
  for (Eigen::Index c = 0; c < C; ++c) {
    const double err = probs(c) - (c == label ? 1.0 : 0.0);
    g.values.segment(c * (d + 1), d) = err * last_hidden;
    g.values(c * (d + 1) + d) = err;
  }
  return g;
}

HeadGradient head_gradient(const Parameters& params, std::span<const TokenId> tokens, int label) {
  const auto trace = forward(params, tokens);
  return head_gradient(trace.last_hidden, trace.probs, label);
}

HeadGradient head_gradient(const Parameters& params, const Instance& inst) {
  const auto tokens = model_input(inst, params.config.max_seq_len);
  return head_gradient(params, tokens, inst.label);
}

HessianMatrix head_hessian(std::span<const HeadFeatures> features, double damping) {
  if (!(damping > 0.0)) throw InvalidArgument("head_hessian: damping must be positive");
  if (features.empty()) throw InvalidArgument("head_hessian: no training instances");
  const auto C = features[0].probs.size();
  const auto w = features[0].last_hidden.size() + 1;
  const auto n = C * w;
  Matrix H = Matrix::Zero(n, n);
  Vector x(w);
  for (const auto& f : features) {
    x.head(w - 1) = f.last_hidden;
    x(w - 1) = 1.0;
    const Matrix xx = x * x.transpose();
    const Vector& p = f.probs;
    for (Eigen::Index a = 0; a < C; ++a) {
      for (Eigen::Index b = a; b < C; ++b) {
        const double coef = (a == b ? p(a) : 0.0) - p(a) * p(b);
        if (coef == 0.0) continue;
        for (Eigen::Index i = 0; i < w; ++i) {
          const Eigen::Index j0 = (a == b) ? i : 0;
          for (Eigen::Index j = j0; j < w; ++j) H(a * w + i, b * w + j) += coef * xx(i, j);
        }
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(features.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = r; c < n; ++c) {
      H(r, c) *= inv_n;
      if (r == c) H(r, c) += damping;
      H(c, r) = H(r, c);
    }
  }
  return {std::move(H), damping};
}

HessianMatrix head_hessian(const Parameters& params, const Dataset& train_set, double damping,
                           int jobs) {
  std::vector<HeadFeatures> feats(train_set.size());
  parallel_for(train_set.size(), jobs, [&](std::size_t i) {
    const auto tokens = model_input(train_set[i], params.config.max_seq_len);
    auto trace = forward(params, tokens);
    feats[i] = {std::move(trace.last_hidden), std::move(trace.probs)};
  });
  return head_hessian(feats, damping);
}

Vector solve_hvp(const HessianMatrix& hessian, const Vector& v) {
  const auto& H = hessian.values;
  if (H.rows() != H.cols() || H.rows() != v.size())
    throw InvalidArgument("solve_hvp: shape mismatch (" + std::to_string(H.rows()) + "x" +
                          std::to_string(H.cols()) + " vs " + std::to_string(v.size()) + ")");
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
    const double min_ev = es.eigenvalues().minCoeff();
    throw NotPositiveDefinite(
        "solve_hvp: matrix is not positive definite (min eigenvalue " + std::to_string(min_ev) + ")",
        min_ev);
  }
  return llt.solve(v);
}

Matrix prob_grad_wrt_neuron_positions(const Parameters& params, std::span<const TokenId> tokens,
                                      std::size_t layer, int target, double scale) {
  const auto& cfg = params.config;
  if (layer >= cfg.n_layers) throw InvalidArgument("layer out of range");
  if (target < 0 || static_cast<std::size_t>(target) >= cfg.n_classes)
    throw InvalidArgument("target class out of range");
  ForwardOptions opts;
  opts.scaled_layer = static_cast<int>(layer);
  opts.scale = scale;
  const Tape tape = forward_tape(params, tokens, opts);
  auto d_act = backward(params, tape, probability_dlogits(tape.trace.probs, target), nullptr,
                        static_cast<int>(layer));
  return std::move(d_act[layer]);
}

Vector prob_grad_wrt_neurons(const Parameters& params, std::span<const TokenId> tokens,
                             std::size_t layer, int target, double scale) {
  return prob_grad_wrt_neuron_positions(params, tokens, layer, target, scale)
      .colwise()
      .sum()
      .transpose();
}

}  // namespace attrlab
