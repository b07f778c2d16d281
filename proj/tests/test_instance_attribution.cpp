// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "attrlab/instance_attribution.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace attrlab;
using namespace fixtures;

namespace {

struct Fixture {
  ModelConfig cfg = tiny_config(700, Activation::kGelu, 3);
  Parameters params = random_model(cfg, 0.3);
  Dataset train = random_dataset(701, 50, cfg);
  Dataset test = random_dataset(702, 4, cfg, "te");
};

int predicted(const Parameters& p, const Instance& inst) {
  return forward(p, model_input(inst, p.config.max_seq_len)).predicted;
}

}  // namespace

TEST(MethodNames, ParseAndPrint) {
  for (auto m : {IaMethod::kIF, IaMethod::kGS, IaMethod::kNAInstances})
    EXPECT_EQ(parse_ia_method(to_string(m)), m);
  EXPECT_EQ(parse_ia_method("na-instances"), IaMethod::kNAInstances);
  EXPECT_EQ(parse_ia_method("gs"), IaMethod::kGS);
  EXPECT_THROW(parse_ia_method("tracin"), InvalidArgument);
  EXPECT_EQ(parse_direction("least"), Direction::kLeast);
  EXPECT_THROW(parse_direction("middle"), InvalidArgument);
}

TEST(GsScores, DotProductOfDumpedGradients) {
  Fixture f;
  const auto& t = f.test[0];
  const auto s = gs_scores(f.params, t, f.train);
  const Vector gt = head_gradient(f.params, model_input(t, 10), predicted(f.params, t)).values;
  std::map<std::string, double> expect;
  for (const auto& inst : f.train.instances) {
    const Vector g = head_gradient(f.params, model_input(inst, 10), inst.label).values;
    double d = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) d += g(i) * gt(i);
    expect[inst.id] = d;
    EXPECT_NEAR(s.score(inst.id), d, 1e-12);
  }
  EXPECT_EQ(s.ranking, oracles::rank_ids(expect));
  EXPECT_EQ(s.method, IaMethod::kGS);
  EXPECT_EQ(s.test_id, t.id);
}

TEST(GsScores, SelfScoreIsSquaredNorm) {
  Fixture f;
  Instance t = f.train[3];
  t.label = predicted(f.params, t);
  Dataset one = f.train.subset({t.id});
  one.instances[0].label = t.label;
  const auto s = gs_scores(f.params, t, one);
  const double n = head_gradient(f.params, t).values.squaredNorm();
  EXPECT_NEAR(s.score(t.id), n, 1e-12);
  EXPECT_GE(s.score(t.id), 0.0);
}

TEST(IfScores, IdentityHessianEqualsGs) {
  Fixture f;
  const auto n = static_cast<Eigen::Index>(3 * (f.cfg.d_model + 1));
  const HessianMatrix eye{Matrix::Identity(n, n), 0.0};
  for (const auto& t : f.test.instances) {
    const auto a = if_scores(f.params, t, f.train, eye);
    const auto b = gs_scores(f.params, t, f.train);
    for (const auto& [id, v] : b.scores) EXPECT_NEAR(a.score(id), v, 1e-10);
    EXPECT_EQ(a.ranking, b.ranking);
  }
}

TEST(IfScores, MatchesDenseInverse) {
  Fixture f;
  const auto H = head_hessian(f.params, f.train, 1e-2);
  const Matrix inv = Eigen::MatrixXd(H.values).inverse();
  const auto& t = f.test[1];
  const Vector gt = head_gradient(f.params, model_input(t, 10), predicted(f.params, t)).values;
  const auto s = if_scores(f.params, t, f.train, H);
  const auto raw = if_scores(f.params, t, f.train, H, LabelSource::kPredicted, false);
  for (const auto& inst : f.train.instances) {
    const double v = gt.dot(inv * head_gradient(f.params, inst).values);
    EXPECT_NEAR(s.score(inst.id), v, 1e-8);
    EXPECT_NEAR(raw.score(inst.id), -v, 1e-8);
  }
  const HessianMatrix wrong{Matrix::Identity(3, 3), 0.0};
  EXPECT_THROW(if_scores(f.params, t, f.train, wrong), InvalidArgument);
}

TEST(InstanceScores, RankingIgnoresTrainOrder) {
  Fixture f;
  Dataset shuffled = f.train;
  std::reverse(shuffled.instances.begin(), shuffled.instances.end());
  const auto a = gs_scores(f.params, f.test[0], f.train);
  const auto b = gs_scores(f.params, f.test[0], shuffled);
  EXPECT_EQ(a.ranking, b.ranking);
}

TEST(InstanceScores, TiesBrokenById) {
  const auto s = make_instance_scores(IaMethod::kGS, "t", {"b", "a", "c"}, {1.0, 1.0, 2.0});
  EXPECT_EQ(s.ranking, (std::vector<std::string>{"c", "a", "b"}));
  EXPECT_THROW(make_instance_scores(IaMethod::kGS, "t", {"a"}, {std::nan("")}), Error);
}

TEST(Context, MatchesFreeFunctions) {
  Fixture f;
  AttributionContext ctx(f.params, f.train);
  const auto H = head_hessian(f.params, f.train, kDefaultDamping);
  EXPECT_EQ(ctx.hessian().values, H.values);
  for (const auto& t : f.test.instances) {
    EXPECT_EQ(if_scores(ctx, t).scores, if_scores(f.params, t, f.train, H).scores);
    EXPECT_EQ(gs_scores(ctx, t).scores, gs_scores(f.params, t, f.train).scores);
  }
}

TEST(SelectFraction, CeilingAndDirection) {
  std::vector<std::string> ranking;
  for (int i = 0; i < 10; ++i) ranking.push_back(std::string(1, static_cast<char>('a' + i)));
  EXPECT_EQ(select_fraction(ranking, 0.2, Direction::kMost), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(select_fraction(ranking, 0.2, Direction::kLeast), (std::vector<std::string>{"i", "j"}));
  EXPECT_EQ(select_fraction(ranking, 0.33, Direction::kMost).size(), 4u);
  EXPECT_EQ(select_fraction(ranking, 0.01, Direction::kMost).size(), 1u);
  EXPECT_EQ(select_fraction(ranking, 1.0, Direction::kLeast), ranking);
  EXPECT_THROW(select_fraction(ranking, 0.0, Direction::kMost), InvalidArgument);
  EXPECT_THROW(select_fraction(ranking, 1.5, Direction::kMost), InvalidArgument);

  auto most = select_fraction(ranking, 0.5, Direction::kMost);
  auto least = select_fraction(ranking, 0.5, Direction::kLeast);
  std::set<std::string> all(most.begin(), most.end());
  all.insert(least.begin(), least.end());
  EXPECT_EQ(all.size(), 10u);
}

TEST(ScoreCsv, RoundTrip) {
  Fixture f;
  std::vector<InstanceScores> all = {gs_scores(f.params, f.test[0], f.train),
                                     gs_scores(f.params, f.test[1], f.train)};
  const auto path = std::filesystem::temp_directory_path() / "attrlab_scores.csv";
  write_score_csv(all, path, "hdr");
  const auto back = read_score_csv(path);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].test_id, all[i].test_id);
    EXPECT_EQ(back[i].scores, all[i].scores);
    EXPECT_EQ(back[i].ranking, all[i].ranking);
  }
  const auto js = rankings_to_json(all);
  EXPECT_EQ(js.size(), 2u);
  std::filesystem::remove(path);
}

TEST(AttributionOptions, JsonRoundTripAndValidation) {
  AttributionOptions o;
  o.r = 7;
  o.damping = 0.5;
  o.if_helpfulness = false;
  const auto back = AttributionOptions::from_json(o.to_json());
  EXPECT_EQ(back.r, 7u);
  EXPECT_EQ(back.damping, 0.5);
  EXPECT_FALSE(back.if_helpfulness);
  EXPECT_THROW(AttributionOptions::from_json({{"damping", 0.0}}), InvalidArgument);
  EXPECT_THROW(AttributionOptions::from_json({{"r", 0}}), InvalidArgument);
}
