// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "attrlab/experiment.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = ATTRLAB_CLI_PATH;

int run(const std::string& args, const fs::path& cwd) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" + kCli + "' " + args + " >out.log 2>err.log";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) { return attrlab::read_file(p); }

class CliTest : public ::testing::Test {
 protected:
  fs::path dir_ = fs::temp_directory_path() / "attrlab_cli_test";

  void SetUp() override {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    attrlab::ExperimentConfig c;
    c.data.n_train = 30;
    c.data.n_test = 6;
    c.data.n_counterexamples = 6;
    c.model.d_model = 8;
    c.model.d_mlp = 6;
    c.train.epochs = 2;
    c.attribution.ig_steps = 3;
    c.attribution.r = 3;
    attrlab::write_json(dir_ / "cfg.json", c.to_json());
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string err() const { return slurp(dir_ / "err.log"); }
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run("", dir_), 2);
  EXPECT_EQ(run("frobnicate", dir_), 2);
  ASSERT_EQ(run("gen-data --config cfg.json --seed 1 --out data", dir_), 0);
  ASSERT_EQ(run("train --config cfg.json --data data --out m.ckpt", dir_), 0);
  EXPECT_EQ(run("attribute --ckpt m.ckpt --data data --method tracin --out a", dir_), 2);
  EXPECT_NE(err().find("attrlab: error:"), std::string::npos);
  EXPECT_EQ(run("faithfulness --ckpt m.ckpt --data data --selectors oracle --out f.csv", dir_), 2);
  EXPECT_EQ(run("analyze --report table9 --out x.csv", dir_), 2);

  attrlab::write_text(dir_ / "bad.json", R"({"model": {"layers": 3}})");
  EXPECT_EQ(run("gen-data --config bad.json --seed 1 --out d2", dir_), 2);
  EXPECT_NE(err().find("layers"), std::string::npos);
}

TEST_F(CliTest, MissingAndBrokenFiles) {
  ASSERT_EQ(run("gen-data --config cfg.json --seed 1 --out data", dir_), 0);
  // Paths that do not exist are rejected while parsing flags.
  EXPECT_EQ(run("attribute --ckpt missing.ckpt --data data --method gs --out a", dir_), 2);
  EXPECT_EQ(run("train --config cfg.json --data nowhere --out m.ckpt", dir_), 2);
  EXPECT_EQ(err().rfind("attrlab: error:", 0), 0u);
  // Files that exist but cannot be used are runtime failures.
  attrlab::write_text(dir_ / "junk.ckpt", "not a checkpoint");
  EXPECT_EQ(run("attribute --ckpt junk.ckpt --data data --method gs --out a", dir_), 1);
  fs::remove(dir_ / "data" / "train.jsonl");
  EXPECT_EQ(run("train --config cfg.json --data data --out m.ckpt", dir_), 1);
}

TEST_F(CliTest, RerunsAreByteIdentical) {
  for (const char* tag : {"a", "b"}) {
    const std::string t = tag;
    ASSERT_EQ(run("gen-data --config cfg.json --seed 4 --out data_" + t, dir_), 0) << err();
    ASSERT_EQ(run("train --config cfg.json --data data_" + t + " --out m_" + t + ".ckpt", dir_), 0) << err();
    fs::rename(dir_ / "out.log", dir_ / ("train_" + t + ".log"));
    ASSERT_EQ(run("attribute --config cfg.json --ckpt m_" + t + ".ckpt --data data_" + t +
                      " --method na-instances --out att_" + t, dir_), 0) << err();
  }
  EXPECT_EQ(attrlab::directory_hash(dir_ / "data_a"), attrlab::directory_hash(dir_ / "data_b"));
  EXPECT_EQ(slurp(dir_ / "m_a.ckpt"), slurp(dir_ / "m_b.ckpt"));
  EXPECT_EQ(slurp(dir_ / "train_a.log"), slurp(dir_ / "train_b.log"));
  // The data directory name is not part of any artifact.
  EXPECT_EQ(slurp(dir_ / "att_a" / "scores.csv"), slurp(dir_ / "att_b" / "scores.csv"));
  EXPECT_EQ(slurp(dir_ / "att_a" / "rankings.json"), slurp(dir_ / "att_b" / "rankings.json"));
}

TEST_F(CliTest, TrainSeedOverrideChangesTheModel) {
  ASSERT_EQ(run("gen-data --config cfg.json --seed 1 --out data", dir_), 0);
  ASSERT_EQ(run("train --config cfg.json --data data --out a.ckpt", dir_), 0);
  ASSERT_EQ(run("train --config cfg.json --data data --seed 9 --out b.ckpt", dir_), 0);
  EXPECT_NE(slurp(dir_ / "a.ckpt"), slurp(dir_ / "b.ckpt"));
}
