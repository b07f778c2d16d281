// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "attrlab/gradients.hpp"
#include "attrlab/neuron_attribution.hpp"
#include "fixtures.hpp"

using namespace attrlab;
using namespace fixtures;

namespace {

double layer_zeroed_gap(const Parameters& p, const TokenSeq& toks, std::uint32_t layer, int target) {
  std::vector<NeuronId> units;
  for (std::uint32_t u = 0; u < p.config.d_mlp; ++u) units.push_back({layer, u});
  return forward(p, toks).probs(target) - forward(p, toks, InterventionSpec::deny(units)).probs(target);
}

}  // namespace

TEST(IntegratedGradients, CompletenessPerLayer) {
  Rng rng(5);
  for (int draw = 0; draw < 4; ++draw) {
    const auto p = random_model(tiny_config(500 + draw), 0.3);
    const auto toks = random_tokens(rng, 7, 12);
    const auto na = attribute_neurons(p, toks, 0, 300);
    for (std::uint32_t l = 0; l < 2; ++l) {
      const double gap = layer_zeroed_gap(p, toks, l, na.target);
      const double sum = na.scores.row(l).sum();
      EXPECT_NEAR(sum, gap, 0.02 * std::abs(gap) + 1e-9) << "draw " << draw << " layer " << l;
    }
  }
}

TEST(IntegratedGradients, SingleStepIsGradientTimesActivation) {
  Rng rng(6);
  const auto p = random_model(tiny_config(510));
  const auto toks = random_tokens(rng, 5, 12);
  const auto na = attribute_neurons(p, toks, 1, 1, TargetMode::kGold);
  EXPECT_EQ(na.target, 1);
  const auto act = forward(p, toks).mlp_activations;
  for (std::size_t l = 0; l < 2; ++l) {
    const Matrix g = prob_grad_wrt_neuron_positions(p, toks, l, 1, 1.0);
    const RowVector expect = (act[l].array() * g.array()).colwise().sum();
    EXPECT_TRUE(na.scores.row(static_cast<Eigen::Index>(l)).isApprox(expect, 1e-12));
  }
}

TEST(IntegratedGradients, DefaultTargetIsThePrediction) {
  const auto p = random_model(tiny_config(520));
  const TokenSeq toks = {3, 4, 5, 6};
  const int pred = forward(p, toks).predicted;
  EXPECT_EQ(attribute_neurons(p, toks, 1 - pred, 4).target, pred);
  EXPECT_EQ(attribute_neurons(p, toks, 1 - pred, 4, TargetMode::kGold).target, 1 - pred);
  EXPECT_THROW(attribute_neurons(p, toks, 0, 0), InvalidArgument);
}

TEST(TopR, OrdersByScoreThenPosition) {
  Matrix s(2, 3);
  s << 0.5, 0.9, 0.5,
       0.1, 0.9, -0.2;
  const auto r = top_r(s, 4);
  ASSERT_EQ(r.size(), 4u);
  EXPECT_EQ(r.neurons[0], (NeuronId{0, 1}));
  EXPECT_EQ(r.neurons[1], (NeuronId{1, 1}));
  EXPECT_EQ(r.neurons[2], (NeuronId{0, 0}));
  EXPECT_EQ(r.neurons[3], (NeuronId{0, 2}));
  EXPECT_DOUBLE_EQ(r.normalized[0], 1.0);
  EXPECT_DOUBLE_EQ(r.normalized[3], 0.0);
  EXPECT_THROW(top_r(s, 0), InvalidArgument);
  EXPECT_THROW(top_r(s, 7), InvalidArgument);
  EXPECT_EQ(top_r(s, 6).size(), 6u);
}

TEST(TopR, NormalizationOverRetainedEntries) {
  Matrix s(1, 4);
  s << 4.0, 2.0, 3.0, -10.0;
  const auto r = top_r(s, 3);
  EXPECT_DOUBLE_EQ(r.normalized[0], 1.0);
  EXPECT_DOUBLE_EQ(r.normalized[1], 0.5);
  EXPECT_DOUBLE_EQ(r.normalized[2], 0.0);
  Matrix flat = Matrix::Constant(1, 3, 0.7);
  for (double v : top_r(flat, 3).normalized) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(TopR, PropertyDescendingAndInUnitInterval) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix s(3, 5);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = std::round(rng.normal() * 4) / 4;
    const std::size_t r = 1 + rng.below(15);
    const auto top = top_r(s, r);
    for (std::size_t i = 0; i < top.size(); ++i) {
      EXPECT_GE(top.normalized[i], 0.0);
      EXPECT_LE(top.normalized[i], 1.0);
      if (i > 0) {
        EXPECT_GE(top.scores[i - 1], top.scores[i]);
        if (top.scores[i - 1] == top.scores[i]) EXPECT_LT(top.neurons[i - 1], top.neurons[i]);
      }
    }
    // nothing left out scores higher than the last kept entry
    double kept_min = top.scores.back();
    std::size_t above = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) above += s.data()[i] > kept_min;
    EXPECT_LE(above, r);
  }
}

TEST(NeuronDump, RoundTrip) {
  Matrix s(2, 3);
  s << 0.1, 1e-17, 3.0, -2.5, 0.333333333333333, 7.0;
  const auto r = top_r(s, 5);
  const auto path = std::filesystem::temp_directory_path() / "attrlab_neurons.csv";
  write_neuron_dump(r, path, "provenance line");
  const auto back = read_neuron_dump(path);
  EXPECT_EQ(back.neurons, r.neurons);
  EXPECT_EQ(back.scores, r.scores);
  EXPECT_EQ(back.normalized, r.normalized);
  std::filesystem::remove(path);
}

TEST(IntegratedGradients, DeadUnitsScoreExactlyZero) {
  auto p = random_model(tiny_config(530, Activation::kRelu));
  p.layers[0].w_mlp_in.col(3).setZero();
  p.layers[0].b_mlp_in(3) = -1.0;
  const auto na = attribute_neurons(p, TokenSeq{2, 5, 7, 1}, 0, 12);
  EXPECT_EQ(na.scores(0, 3), 0.0);
}

TEST(IntegratedGradients, StepDifferencesShrink) {
  Rng rng(8);
  const auto p = random_model(tiny_config(540), 0.3);
  const auto toks = random_tokens(rng, 6, 12);
  std::vector<double> diffs;
  for (std::size_t m : {10, 20, 40, 80, 160}) {
    const Matrix a = attribute_neurons(p, toks, 0, m).scores;
    const Matrix b = attribute_neurons(p, toks, 0, 2 * m).scores;
    diffs.push_back((a - b).norm());
  }
  for (std::size_t i = 1; i < diffs.size(); ++i) EXPECT_LE(diffs[i], diffs[i - 1]);
  const Matrix s20 = attribute_neurons(p, toks, 0, 20).scores;
  const Matrix s320 = attribute_neurons(p, toks, 0, 320).scores;
  EXPECT_LT((s20 - s320).norm() / s320.norm(), 0.05);
}

TEST(TopR, PositiveScaleKeepsOrder) {
  Rng rng(9);
  Matrix s(2, 6);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = rng.normal();
  const auto a = top_r(s, 7);
  const auto b = top_r(Matrix(5.0 * s), 7);
  EXPECT_EQ(a.neurons, b.neurons);
  Matrix eq = Matrix::Constant(2, 3, 1.0);
  const auto t = top_r(eq, 2);
  EXPECT_EQ(t.neurons[0], (NeuronId{0, 0}));
  EXPECT_EQ(t.neurons[1], (NeuronId{0, 1}));
}
