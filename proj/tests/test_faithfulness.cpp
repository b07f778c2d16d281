// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "attrlab/faithfulness.hpp"
#include "fixtures.hpp"

using namespace attrlab;
using namespace fixtures;

namespace {

class FaithFixture : public ::testing::Test {
 protected:
  ModelConfig cfg = tiny_config(900);
  Parameters params = random_model(cfg, 0.4);
  Dataset train = random_dataset(901, 12, cfg);
  Dataset test = random_dataset(902, 10, cfg, "te");
  AttributionContext ctx{params, train};

  std::vector<NeuronId> all_neurons() const {
    std::vector<NeuronId> out;
    for (std::uint32_t l = 0; l < cfg.n_layers; ++l)
      for (std::uint32_t u = 0; u < cfg.d_mlp; ++u) out.push_back({l, u});
    return out;
  }
};

}  // namespace

TEST(SelectorNames, ParseAndPrint) {
  for (auto s : {Selector::kNA, Selector::kIFNeuron, Selector::kGSNeuron, Selector::kRandom})
    EXPECT_EQ(parse_selector(to_string(s)), s);
  EXPECT_EQ(parse_selector("if-neuron"), Selector::kIFNeuron);
  EXPECT_EQ(parse_selector("random"), Selector::kRandom);
  EXPECT_THROW(parse_selector("oracle"), InvalidArgument);
}

TEST(RandomSelection, DeterministicDistinctAndComplete) {
  const auto cfg = tiny_config(1);
  const auto a = random_selection(3, "x", 5, cfg);
  EXPECT_EQ(a, random_selection(3, "x", 5, cfg));
  EXPECT_NE(a, random_selection(4, "x", 5, cfg));
  EXPECT_EQ(std::set<NeuronId>(a.begin(), a.end()).size(), 5u);
  auto all = random_selection(3, "x", 12, cfg);
  EXPECT_EQ(std::set<NeuronId>(all.begin(), all.end()).size(), 12u);
  EXPECT_THROW(random_selection(3, "x", 13, cfg), InvalidArgument);
}

TEST(RandomSelection, EachNeuronWithinBinomialBounds) {
  const auto cfg = tiny_config(1);
  const std::size_t draws = 3000, r = 4, total = 12;
  std::map<NeuronId, std::size_t> count;
  for (std::size_t i = 0; i < draws; ++i)
    for (const auto& n : random_selection(7, make_id("id", i), r, cfg)) ++count[n];
  ASSERT_EQ(count.size(), total);
  const double p = static_cast<double>(r) / total;
  const double mean = draws * p, sd = std::sqrt(draws * p * (1 - p));
  for (const auto& [n, c] : count) EXPECT_NEAR(static_cast<double>(c), mean, 3 * sd);
}

TEST_F(FaithFixture, IdentityInterventionsPreserveEverything) {
  for (auto sel : {Selector::kNA, Selector::kRandom, Selector::kGSNeuron}) {
    const auto kept = run_test(ctx, test, Selector::kRandom, TestKind::kSufficiency, 12, 1);
    EXPECT_EQ(kept.preserved_pct, 100.0);
    const auto none = run_test(ctx, test, sel, TestKind::kComprehensiveness, 0, 1);
    EXPECT_EQ(none.preserved_pct, 100.0);
    for (const auto& rec : none.records) EXPECT_EQ(rec.n_selected, 0u);
  }
  const auto na_all = sufficiency(ctx, test, Selector::kNA, 12);
  EXPECT_EQ(na_all.preserved_pct, 100.0);
}

TEST_F(FaithFixture, RecordsMatchManualInterventions) {
  for (auto sel : {Selector::kNA, Selector::kIFNeuron, Selector::kGSNeuron, Selector::kRandom}) {
    for (auto kind : {TestKind::kSufficiency, TestKind::kComprehensiveness}) {
      const std::size_t r = kind == TestKind::kSufficiency ? 1 : 5;
      const auto rep = run_test(ctx, test, sel, kind, r, 2);
      ASSERT_EQ(rep.records.size(), test.size());
      std::size_t kept = 0;
      for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& inst = test[i];
        const auto toks = model_input(inst, cfg.max_seq_len);
        const auto chosen = select_neurons(ctx, sel, inst, r, 2);
        const auto spec = kind == TestKind::kSufficiency ? InterventionSpec::allow(chosen)
                                                         : InterventionSpec::deny(chosen);
        const int orig = forward(params, toks).predicted;
        const int after = forward(params, toks, spec).predicted;
        EXPECT_EQ(rep.records[i].id, inst.id);
        EXPECT_EQ(rep.records[i].original, orig);
        EXPECT_EQ(rep.records[i].intervened, after);
        kept += orig == after;
      }
      EXPECT_EQ(rep.preserved_count(), kept);
      EXPECT_DOUBLE_EQ(rep.preserved_pct, 100.0 * kept / test.size());
      EXPECT_EQ(rep.preserved_pct, preserved_pct_from_records(rep.records));
    }
  }
}

TEST_F(FaithFixture, FlippedSingleInstanceGivesZero) {
  // Look for an instance whose prediction changes when everything is removed.
  for (const auto& inst : test.instances) {
    const auto toks = model_input(inst, cfg.max_seq_len);
    if (forward(params, toks).predicted == forward(params, toks, InterventionSpec::allow({})).predicted)
      continue;
    Dataset one = test.subset({inst.id});
    EXPECT_EQ(run_test(ctx, one, Selector::kRandom, TestKind::kComprehensiveness, 12, 0).preserved_pct, 0.0);
    return;
  }
  GTEST_SKIP() << "no instance flips under full ablation";
}

TEST_F(FaithFixture, SelectorsReturnDistinctNeurons) {
  for (auto sel : {Selector::kNA, Selector::kIFNeuron, Selector::kGSNeuron, Selector::kRandom}) {
    const auto s = select_neurons(ctx, sel, test[0], 3, 0);
    EXPECT_LE(s.size(), 3u);
    EXPECT_EQ(std::set<NeuronId>(s.begin(), s.end()).size(), s.size());
  }
  const auto na = select_neurons(ctx, Selector::kNA, test[0], 3, 0);
  EXPECT_EQ(na, top_r(attribute_neurons(params, test[0]).scores, 3).neurons);
  EXPECT_EQ(na, select_neurons(ctx, Selector::kNA, test[0], 3, 99));
}

TEST_F(FaithFixture, ProtocolAggregatesAndClamps) {
  const std::vector<Selector> sels = {Selector::kNA, Selector::kIFNeuron, Selector::kGSNeuron,
                                      Selector::kRandom};
  const auto res = run_protocol(ctx, test, sels, {0, 1, 2});
  ASSERT_EQ(res.reports.size(), 4u * 2u * 3u);
  ASSERT_EQ(res.rows.size(), 4u * 2u * 4u);
  for (const auto& rep : res.reports) {
    if (rep.test_kind == TestKind::kComprehensiveness) {
      EXPECT_EQ(rep.requested_r, 100u);
      EXPECT_EQ(rep.r, 11u);
    } else {
      EXPECT_EQ(rep.r, 1u);
    }
  }
  // Recompute every row from the per-instance records.
  std::map<std::pair<std::string, std::string>, std::vector<double>> per;
  for (const auto& rep : res.reports)
    per[{to_string(rep.selector), to_string(rep.test_kind)}].push_back(
        preserved_pct_from_records(rep.records));
  for (const auto& row : res.rows) {
    const auto& vals = per.at({to_string(row.selector), to_string(row.test_kind)});
    if (row.seed) {
      EXPECT_EQ(row.preserved_pct, vals.at(*row.seed));
    } else {
      double s = 0.0;
      for (double v : vals) s += v;
      EXPECT_EQ(row.preserved_pct, s / vals.size());
      EXPECT_GE(row.preserved_pct, *std::min_element(vals.begin(), vals.end()));
      EXPECT_LE(row.preserved_pct, *std::max_element(vals.begin(), vals.end()));
      if (row.selector != Selector::kRandom) EXPECT_EQ(row.preserved_pct, vals[0]);
    }
  }
  EXPECT_EQ(aggregate(res.reports).size(), res.rows.size());

  const auto path = std::filesystem::temp_directory_path() / "attrlab_protocol.csv";
  write_protocol_csv(res, path, "hdr");
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') lines.push_back(line);
  ASSERT_EQ(lines.size(), res.rows.size() + 1);
  EXPECT_EQ(lines[0], "selector,test_kind,r,seed,preserved_pct");
  EXPECT_NE(lines[4].find(",mean,"), std::string::npos);
  std::filesystem::remove(path);
  EXPECT_EQ(protocol_to_json(res)["rows"].size(), res.rows.size());
}

TEST_F(FaithFixture, RerunsAreBitExact) {
  const auto a = run_protocol(ctx, test, {Selector::kRandom, Selector::kNA}, {5});
  AttributionContext fresh(params, train);
  const auto b = run_protocol(fresh, test, {Selector::kRandom, Selector::kNA}, {5});
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].preserved_pct, b.rows[i].preserved_pct);
  EXPECT_EQ(protocol_to_json(a).dump(), protocol_to_json(b).dump());
}
