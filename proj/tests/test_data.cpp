// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "attrlab/common.hpp"
#include "attrlab/data.hpp"

using namespace attrlab;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& content) {
  const fs::path dir = fs::temp_directory_path() / "attrlab_test_data";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p, std::ios::binary) << content;
  return p;
}

std::vector<std::string> split_words(const std::string& s) { return tokenize(s); }

}  // namespace

TEST(Tokenize, WhitespaceAndCase) {
  EXPECT_EQ(tokenize("  The cat\tSAT \n"), (std::vector<std::string>{"the", "cat", "sat"}));
  EXPECT_TRUE(tokenize("   ").empty());
}

TEST(Vocab, ReservedIdsAndOov) {
  Vocab v;
  EXPECT_EQ(v.size(), 3u);
  EXPECT_EQ(v.token(Vocab::kPad), "<pad>");
  EXPECT_EQ(v.token(Vocab::kSep), "<sep>");
  const auto id = v.add("dog");
  EXPECT_EQ(id, Vocab::kFirstRegular);
  EXPECT_EQ(v.add("dog"), id);
  EXPECT_EQ(v.lookup("dog"), id);
  EXPECT_EQ(v.lookup("cat"), Vocab::kOov);
  EXPECT_EQ(v.lookup("<sep>"), Vocab::kOov);  // reserved spellings never match text
}

TEST(Vocab, BuildOrdersByFrequencyThenText) {
  const auto v = build_vocab({"b a c a", "b a"}, 10);
  EXPECT_EQ(v.lookup("a"), 3);
  EXPECT_EQ(v.lookup("b"), 4);
  EXPECT_EQ(v.lookup("c"), 5);
  const auto capped = build_vocab({"b a c a", "b a"}, 2);
  EXPECT_EQ(capped.size(), 5u);
  EXPECT_EQ(capped.lookup("c"), Vocab::kOov);
  EXPECT_THROW(build_vocab({}, 5), InvalidArgument);
}

TEST(Vocab, JsonRoundTripAndValidation) {
  const auto v = build_vocab({"x y z y"}, 10);
  EXPECT_EQ(Vocab::from_json(v.to_json()), v);
  const auto p = temp_file("vocab.json", "");
  v.save(p);
  EXPECT_EQ(Vocab::load(p), v);
  EXPECT_THROW(Vocab::from_json(nlohmann::json{{"<pad>", 0}, {"<oov>", 1}, {"<sep>", 3}}),
               ParseError);
  EXPECT_THROW(Vocab::from_json(nlohmann::json{{"a", 0}, {"<oov>", 1}, {"<sep>", 2}}), ParseError);
}

TEST(Encode, JoinsWithSeparatorAndTruncatesPremiseFirst) {
  const TokenSeq prem = {3, 4, 5, 6};
  const TokenSeq hyp = {7, 8};
  EXPECT_EQ(combine(prem, hyp, 10), (TokenSeq{3, 4, 5, 6, Vocab::kSep, 7, 8}));
  EXPECT_EQ(combine(prem, hyp, 5), (TokenSeq{3, 4, Vocab::kSep, 7, 8}));
  EXPECT_EQ(combine(prem, TokenSeq{7, 8, 9, 10}, 4), (TokenSeq{Vocab::kSep, 7, 8, 9}));
  EXPECT_EQ(combine(prem, std::nullopt, 3), (TokenSeq{3, 4, 5}));
  EXPECT_THROW(combine(prem, hyp, 2), InvalidArgument);
  Vocab v;
  v.add("a");
  EXPECT_EQ(encode(v, "A zz", std::string("a"), 8), (TokenSeq{3, Vocab::kOov, Vocab::kSep, 3}));
}

TEST(Jsonl, LoadsAndReportsLineNumbers) {
  const auto good = temp_file("good.jsonl",
                              "{\"id\":\"a\",\"premise\":\"x y\",\"hypothesis\":\"y\",\"label\":\"yes\"}\n"
                              "\n"
                              "{\"id\":\"b\",\"premise\":\"z\",\"hypothesis\":\"z\",\"label\":1}\n");
  JsonlSchema schema;
  schema.hypothesis = "hypothesis";
  schema.id = "id";
  const auto ds = load_jsonl(good, schema, {"yes", "no"}, "train");
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds[0].id, "a");
  EXPECT_EQ(ds[1].label, 1);
  EXPECT_EQ(*ds[0].raw_hypothesis, "y");

  auto expect_line = [&](const std::string& content, std::size_t line) {
    const auto p = temp_file("bad.jsonl", content);
    try {
      load_jsonl(p, schema, {"yes", "no"}, "train");
      FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), line) << e.what();
    }
  };
  expect_line("{\"id\":\"a\",\"premise\":\"x\",\"hypothesis\":\"y\",\"label\":\"yes\"}\n{oops\n", 2);
  expect_line("{\"id\":\"a\",\"hypothesis\":\"y\",\"label\":\"yes\"}\n", 1);
  expect_line("{\"id\":\"a\",\"premise\":\"x\",\"hypothesis\":\"y\",\"label\":\"maybe\"}\n", 1);
  expect_line(
      "{\"id\":\"a\",\"premise\":\"x\",\"hypothesis\":\"y\",\"label\":0}\n"
      "{\"id\":\"a\",\"premise\":\"x\",\"hypothesis\":\"y\",\"label\":0}\n",
      2);
}

TEST(Jsonl, WriteThenReadRoundTrip) {
  auto data = gen_synthetic_nli(GenConfig{}, 5);
  const auto p = temp_file("rt.jsonl", "");
  write_jsonl(data.test, p);
  JsonlSchema schema;
  schema.hypothesis = "hypothesis";
  schema.id = "id";
  auto back = load_jsonl(p, schema, data.test.label_names, "test");
  encode_dataset(back, data.vocab);
  ASSERT_EQ(back.size(), data.test.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].id, data.test[i].id);
    EXPECT_EQ(back[i].premise, data.test[i].premise);
    EXPECT_EQ(back[i].hypothesis, data.test[i].hypothesis);
    EXPECT_EQ(back[i].label, data.test[i].label);
  }
}

TEST(Overlap, JaccardOfTokenSets) {
  Instance inst;
  inst.raw_premise = "a b c d";
  inst.raw_hypothesis = "b d";
  EXPECT_DOUBLE_EQ(lexical_overlap(inst), 0.5);
  inst.raw_hypothesis = "d c b a";
  EXPECT_DOUBLE_EQ(lexical_overlap(inst), 1.0);
  inst.raw_hypothesis = "x";
  EXPECT_DOUBLE_EQ(lexical_overlap(inst), 0.0);
  EXPECT_TRUE(is_ordered_subsequence({4, 6}, {3, 4, 5, 6}));
  EXPECT_FALSE(is_ordered_subsequence({6, 4}, {3, 4, 5, 6}));
}

TEST(Generator, LabelsFollowTheSubsequenceRule) {
  const auto data = gen_synthetic_nli(GenConfig{}, 1);
  for (const Dataset* ds : {&data.train, &data.test, &data.counterexamples}) {
    for (const auto& inst : ds->instances) {
      const auto p = split_words(inst.raw_premise), h = split_words(*inst.raw_hypothesis);
      std::size_t j = 0;
      for (std::size_t i = 0; i < p.size() && j < h.size(); ++i)
        if (p[i] == h[j]) ++j;
      const bool subseq = j == h.size();
      EXPECT_EQ(inst.label == kEntails, subseq) << inst.id;
      // hypothesis words always come from the premise
      const std::set<std::string> ps(p.begin(), p.end());
      for (const auto& w : h) EXPECT_TRUE(ps.contains(w));
    }
  }
  for (const auto& inst : data.counterexamples.instances) {
    EXPECT_EQ(inst.label, kNotEntails);
    EXPECT_DOUBLE_EQ(lexical_overlap(inst), 1.0);
  }
}

TEST(Generator, SizesUniquenessAndDeterminism) {
  GenConfig cfg;
  cfg.n_train = 300;
  const auto a = gen_synthetic_nli(cfg, 9);
  const auto b = gen_synthetic_nli(cfg, 9);
  const auto c = gen_synthetic_nli(cfg, 10);
  EXPECT_EQ(a.train.size(), 300u);
  EXPECT_EQ(a.test.size(), cfg.n_test);
  EXPECT_EQ(a.counterexamples.size(), cfg.n_counterexamples);
  std::set<std::string> seen;
  for (const Dataset* ds : {&a.train, &a.test, &a.counterexamples})
    for (const auto& inst : ds->instances)
      EXPECT_TRUE(seen.insert(inst.raw_premise + "|" + *inst.raw_hypothesis).second);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    same &= a.train[i].raw_hypothesis == b.train[i].raw_hypothesis &&
            a.train[i].raw_premise == b.train[i].raw_premise;
    differs |= a.train[i].raw_premise != c.train[i].raw_premise;
  }
  EXPECT_TRUE(same);
  EXPECT_TRUE(differs);
  EXPECT_EQ(a.vocab, b.vocab);
  EXPECT_NO_THROW(a.train.validate(a.vocab.size()));
}

TEST(Generator, ArtifactRateControlsHighOverlapEntailment) {
  GenConfig cfg;
  cfg.n_train = 2000;
  cfg.vocab_size = 60;
  cfg.artifact_rate = 0.9;
  const auto data = gen_synthetic_nli(cfg, 3);
  std::size_t ent = 0, ent_high = 0, non_high = 0;
  for (const auto& inst : data.train.instances) {
    const bool high = lexical_overlap(inst) >= kHighOverlap;
    if (inst.label == kEntails) {
      ++ent;
      ent_high += high;
    } else {
      non_high += high;
    }
  }
  EXPECT_EQ(non_high, 0u);
  const double rate = static_cast<double>(ent_high) / static_cast<double>(ent);
  const double sd = std::sqrt(0.9 * 0.1 / static_cast<double>(ent));
  EXPECT_NEAR(rate, 0.9, 4 * sd);
}

TEST(Generator, NoArtifactMeansMatchingOverlapDistributions) {
  GenConfig cfg;
  cfg.n_train = 3000;
  cfg.vocab_size = 60;
  cfg.artifact_rate = 0.0;
  const auto data = gen_synthetic_nli(cfg, 4);
  std::map<int, std::vector<double>> by_label;
  for (const auto& inst : data.train.instances) by_label[inst.label].push_back(lexical_overlap(inst));
  auto mean_var = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::make_pair(m, s / static_cast<double>(v.size() - 1));
  };
  const auto [m0, v0] = mean_var(by_label[kEntails]);
  const auto [m1, v1] = mean_var(by_label[kNotEntails]);
  const double se = std::sqrt(v0 / by_label[kEntails].size() + v1 / by_label[kNotEntails].size());
  EXPECT_LT(std::abs(m0 - m1), 4 * se);
  EXPECT_LT(*std::max_element(by_label[kEntails].begin(), by_label[kEntails].end()), kHighOverlap);
}

TEST(Generator, RejectsImpossibleRequests) {
  GenConfig cfg;
  cfg.vocab_size = 5;
  cfg.premise_min_len = 3;
  cfg.premise_max_len = 3;
  cfg.n_train = 1000;
  EXPECT_THROW(gen_synthetic_nli(cfg, 0), InvalidArgument);
  GenConfig bad;
  bad.artifact_rate = 1.5;
  EXPECT_THROW(gen_synthetic_nli(bad, 0), InvalidArgument);
}

TEST(Dataset, SubsetAndValidate) {
  const auto data = gen_synthetic_nli(GenConfig{}, 2);
  const auto sub = data.train.subset({"train-00003", "train-00001"});
  ASSERT_EQ(sub.size(), 2u);
  EXPECT_EQ(sub[0].id, "train-00003");
  EXPECT_EQ(data.train.index_of("train-00007"), 7u);
  EXPECT_THROW(data.train.subset({"nope"}), InvalidArgument);
  EXPECT_THROW(data.train.validate(3), InvalidArgument);
}
