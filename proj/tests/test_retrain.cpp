// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "attrlab/retrain.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace attrlab;
using namespace fixtures;

namespace {

class RetrainFixture : public ::testing::Test {
 protected:
  ModelConfig cfg = tiny_config(1000);
  Dataset train_set = random_dataset(1001, 24, cfg);
  Dataset test_set = random_dataset(1002, 10, cfg, "te");
  TrainHyper hp = [] {
    TrainHyper h;
    h.epochs = 4;
    h.batch_size = 4;
    h.seed = 5;
    return h;
  }();
  Parameters original = train(init_model(cfg), train_set, hp).params;
  std::vector<int> original_preds = predict_all(original, test_set);

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& inst : train_set.instances) out.push_back(inst.id);
    return out;
  }
};

}  // namespace

TEST(SweepNames, ParseAndPrint) {
  for (auto m : {SweepMethod::kIF, SweepMethod::kGS, SweepMethod::kNAInstances, SweepMethod::kRandom})
    EXPECT_EQ(parse_sweep_method(to_string(m)), m);
  EXPECT_EQ(parse_aggregation("max"), Aggregation::kMax);
  EXPECT_THROW(parse_aggregation("mean"), InvalidArgument);
  EXPECT_THROW(parse_sweep_method("tracin"), InvalidArgument);
}

TEST(GlobalRanking, SumAndMaxWithIdTies) {
  const auto a = make_instance_scores(IaMethod::kGS, "t1", {"x", "y", "z"}, {3.0, 1.0, 0.0});
  const auto b = make_instance_scores(IaMethod::kGS, "t2", {"x", "y", "z"}, {-3.0, 1.0, 2.0});
  EXPECT_EQ(global_ranking({a, b}, Aggregation::kSum), (std::vector<std::string>{"y", "z", "x"}));
  EXPECT_EQ(global_ranking({a, b}, Aggregation::kMax), (std::vector<std::string>{"x", "z", "y"}));
  EXPECT_THROW(global_ranking({}), InvalidArgument);

  Rng rng(13);
  std::vector<InstanceScores> many;
  std::vector<std::string> tids = {"a", "b", "c", "d", "e", "f"};
  std::map<std::string, double> sums;
  for (int t = 0; t < 5; ++t) {
    std::vector<double> v;
    for (const auto& id : tids) {
      v.push_back(std::round(rng.normal() * 2));
      sums[id] += v.back();
    }
    many.push_back(make_instance_scores(IaMethod::kGS, "t" + std::to_string(t), tids, v));
  }
  EXPECT_EQ(global_ranking(many), oracles::rank_ids(sums));
}

TEST(RandomRanking, SeededPermutation) {
  std::vector<std::string> ids = {"a", "b", "c", "d", "e", "f", "g"};
  const auto p = random_ranking(ids, 1);
  EXPECT_EQ(p, random_ranking(ids, 1));
  EXPECT_NE(p, random_ranking(ids, 2));
  auto sorted = p;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, ids);
}

TEST_F(RetrainFixture, FullSubsetReproducesTheOriginalModel) {
  const auto r = retrain_eval(cfg, ids(), train_set, test_set, hp, hp.seed, original_preds);
  EXPECT_EQ(r.preserved_pct, 100.0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) correct += original_preds[i] == test_set[i].label;
  EXPECT_EQ(r.accuracy, static_cast<double>(correct) / test_set.size());
  auto shuffled = ids();
  std::reverse(shuffled.begin(), shuffled.end());
  const auto r2 = retrain_eval(cfg, shuffled, train_set, test_set, hp, hp.seed, original_preds);
  EXPECT_EQ(r2.history, r.history);
}

TEST_F(RetrainFixture, DegenerateSubsetStillReports) {
  const auto r = retrain_eval(cfg, {ids()[0]}, train_set, test_set, hp, 0, original_preds);
  EXPECT_GE(r.accuracy, 0.0);
  EXPECT_LE(r.accuracy, 1.0);
  EXPECT_THROW(retrain_eval(cfg, {}, train_set, test_set, hp, 0, original_preds), InvalidArgument);
  EXPECT_THROW(retrain_eval(cfg, {"nope"}, train_set, test_set, hp, 0, original_preds),
               InvalidArgument);
}

TEST_F(RetrainFixture, SweepPointsRerunFromManifests) {
  SweepConfig sc;
  sc.methods = {SweepMethod::kGS, SweepMethod::kRandom};
  sc.fractions = {0.25, 0.5, 1.0};
  sc.seeds = {0, 1};
  sc.jobs = 2;
  AttributionContext ctx(original, train_set);
  std::vector<InstanceScores> per;
  for (const auto& t : test_set.instances) per.push_back(gs_scores(ctx, t));
  const auto gs_rank = global_ranking(per);
  const auto points = sweep(sc, original, hp, train_set, test_set, {{SweepMethod::kGS, gs_rank}});
  ASSERT_EQ(points.size(), 2u * 2u * 3u * 2u);

  std::map<std::uint64_t, double> full_acc;
  std::set<std::string> names;
  for (const auto& p : points) {
    const auto m = subset_manifest(p, cfg, hp, false);
    names.insert(manifest_filename(p));
    const auto again = rerun_manifest(nlohmann::json::parse(m.dump()), train_set, test_set, original_preds);
    EXPECT_EQ(again.accuracy, p.result.accuracy);
    EXPECT_EQ(again.preserved_pct, p.result.preserved_pct);
    const auto want = static_cast<std::size_t>(std::ceil(p.fraction * 24 - 1e-9));
    EXPECT_EQ(p.subset.size(), want);
    if (p.method == SweepMethod::kGS) {
      const auto exp = select_fraction(gs_rank, p.fraction, p.direction);
      EXPECT_EQ(p.subset, exp);
    }
    if (p.fraction == 1.0) {
      if (!full_acc.contains(p.seed)) full_acc[p.seed] = p.result.accuracy;
      EXPECT_EQ(p.result.accuracy, full_acc[p.seed]);
    }
  }
  EXPECT_EQ(names.size(), points.size());

  // most and least at one half partition the training set
  for (const auto& p : points) {
    if (p.method != SweepMethod::kGS || p.fraction != 0.5 || p.direction != Direction::kMost) continue;
    const auto least = select_fraction(gs_rank, 0.5, Direction::kLeast);
    std::set<std::string> all(p.subset.begin(), p.subset.end());
    all.insert(least.begin(), least.end());
    EXPECT_EQ(all.size(), 24u);
  }

  const auto path = std::filesystem::temp_directory_path() / "attrlab_curves.csv";
  write_curve_csv(points, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "method,direction,fraction,seed,accuracy,preserved_pct");
  std::filesystem::remove(path);
  EXPECT_EQ(curves_to_json(points)["series"].size(), 4u);
}

TEST_F(RetrainFixture, SweepRejectsBadInputs) {
  SweepConfig sc;
  sc.methods = {SweepMethod::kIF};
  EXPECT_THROW(sweep(sc, original, hp, train_set, test_set, {}), InvalidArgument);
  sc.methods = {SweepMethod::kRandom};
  sc.fractions = {0.0};
  EXPECT_THROW(sweep(sc, original, hp, train_set, test_set, {}), InvalidArgument);
}

TEST_F(RetrainFixture, CheckpointStartNeedsInit) {
  SweepPoint p;
  p.subset = {ids()[0], ids()[1]};
  p.result = retrain_eval(cfg, p.subset, train_set, test_set, hp, 0, original_preds, &original);
  const auto m = subset_manifest(p, cfg, hp, true);
  EXPECT_THROW(rerun_manifest(m, train_set, test_set, original_preds), InvalidArgument);
  EXPECT_EQ(rerun_manifest(m, train_set, test_set, original_preds, &original).accuracy,
            p.result.accuracy);
}
