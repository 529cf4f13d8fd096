#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "mmd/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = mmd::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mmd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

const std::vector<std::string> kSubcommands{"synth", "train-uni", "train-fuse", "eval",
                                            "ablate", "gradcheck", "footprint"};

}  // namespace

TEST_F(CliTest, HelpExitsZeroEverywhere) {
  EXPECT_EQ(run({"--help"}).code, 0);
  for (const auto& s : kSubcommands) {
    const Outcome r = run({s, "--help"});
    EXPECT_EQ(r.code, 0) << s;
    EXPECT_NE(r.out.find("--"), std::string::npos) << s;
  }
  const Outcome fuse = run({"train-fuse", "--help"});
  for (const auto* flag : {"--strategy TEXT [mean-vector]", "--dropout-rate FLOAT [0.5]", "--lambda FLOAT [1]",
                           "--batch UINT:POSITIVE [8]", "--lr FLOAT:POSITIVE [0.0005]"}) {
    EXPECT_NE(fuse.out.find(flag), std::string::npos) << flag << "\n" << fuse.out;
  }
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"synth", "--out", path("c.csv")}).code, 1);  // seed is mandatory
  EXPECT_EQ(run({"synth", "--seed", "1", "--out", path("c.csv"), "--bogus"}).code, 1);
  EXPECT_EQ(run({"synth", "--seed", "1", "--out", path("c.csv"), "--missing-rate", "0.1,0.2"}).code, 1);
}

TEST_F(CliTest, SynthIsByteDeterministicAndPrintsConfig) {
  const Outcome a = run({"synth", "--n", "500", "--seed", "7", "--out", path("a.csv")});
  const Outcome b = run({"synth", "--n", "500", "--seed", "7", "--out", path("b.csv")});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
  EXPECT_EQ(slurp(path("a.csv.schema")), slurp(path("b.csv.schema")));
  EXPECT_EQ(a.out.rfind("# resolved configuration: synth", 0), 0u);
  EXPECT_NE(a.out.find("censor-rate = 0.3"), std::string::npos);
  const Outcome q = run({"--quiet", "synth", "--n", "50", "--seed", "7", "--out", path("q.csv")});
  EXPECT_EQ(q.out.find("wrote"), std::string::npos);
}

TEST_F(CliTest, MalformedCohortIsADataError) {
  ASSERT_EQ(run({"synth", "--n", "60", "--seed", "1", "--out", path("c.csv")}).code, 0);
  std::ofstream(path("bad.csv")) << "id,time\nx,1\n";
  const Outcome r = run({"train-uni", "--cohort", path("bad.csv"), "--schema", path("c.csv.schema"), "--seed",
                     "1", "--out", path("enc.txt")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bad.csv"), std::string::npos) << r.err;
}

TEST_F(CliTest, FullWorkflowLeavesInputsUntouched) {
  ASSERT_EQ(run({"synth", "--n", "240", "--seed", "3", "--out", path("c.csv")}).code, 0);
  const std::string cohort = slurp(path("c.csv"));
  const std::vector<std::string> common{"--cohort", path("c.csv"), "--schema", path("c.csv.schema")};

  auto with = [&](std::vector<std::string> head, std::vector<std::string> tail) {
    head.insert(head.end(), common.begin(), common.end());
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
  };
  Outcome r = run(with({"train-uni"}, {"--seed", "1", "--epochs", "5", "--out", path("enc.txt"),
                                   "--embeddings-out", path("emb.csv")}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("enc.txt.genomics.trace.csv")));
  EXPECT_TRUE(fs::exists(path("emb.csv")));

  r = run(with({"train-fuse"}, {"--encoders", path("enc.txt"), "--seed", "2", "--epochs", "3",
                                "--strategy", "tensor", "--no-recon", "--out", path("m.txt")}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("recon = false"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("m.txt.trace.csv")));

  r = run(with({"eval"}, {"--encoders", path("enc.txt"), "--model", path("m.txt"), "--seed", "4",
                          "--bootstrap", "20", "--scenario", "complete", "--scenario",
                          "gene-pathology-missing", "--out", path("e.json")}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("c-index"), std::string::npos);
  const auto j = nlohmann::json::parse(slurp(path("e.json")));
  ASSERT_EQ(j["results"].size(), 2u);
  EXPECT_EQ(j["results"][1]["scenario"], "gene-pathology-missing");

  // Raw cohort without encoders is a usage error, not a crash.
  r = run(with({"eval"}, {"--model", path("m.txt"), "--seed", "4"}));
  EXPECT_EQ(r.code, 1);

  r = run({"footprint", "--model", path("m.txt")});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("hazard_head"), std::string::npos);

  EXPECT_EQ(slurp(path("c.csv")), cohort);
}

TEST_F(CliTest, TrainFuseOnPrecomputedEmbeddings) {
  ASSERT_EQ(run({"synth", "--n", "150", "--seed", "5", "--out", path("c.csv")}).code, 0);
  ASSERT_EQ(run({"train-uni", "--cohort", path("c.csv"), "--schema", path("c.csv.schema"), "--seed", "1",
                 "--epochs", "3", "--out", path("enc.txt"), "--embeddings-out", path("emb.csv")})
                .code,
            0);
  std::ofstream(path("emb.schema")) << "radiology=32\npathology=32\ngenomics=32\ndemographics=32\nembedding=32\n";
  const Outcome r = run({"train-fuse", "--cohort", path("emb.csv"), "--schema", path("emb.schema"), "--seed",
                     "1", "--epochs", "2", "--out", path("m.txt")});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(CliTest, AblateTable3WritesReports) {
  const Outcome r = run({"ablate", "--seed", "1", "--n-train", "150", "--n-test", "80", "--stage1-epochs", "2",
                     "--fusion-epochs", "1", "--bootstrap", "0", "--out-dir", path("out")});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string md = slurp(path("out/report.md"));
  for (const auto* s : {"complete", "pathology-missing", "gene-pathology-missing"}) {
    EXPECT_NE(md.find(s), std::string::npos) << s;
  }
  EXPECT_TRUE(fs::exists(path("out/report.csv")));
  EXPECT_TRUE(fs::exists(path("out/report.json")));
  const std::string csv = slurp(path("out/report.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 18 * 3);
}

TEST_F(CliTest, GradcheckPasses) {
  const Outcome r = run({"gradcheck", "--instances", "5"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("all gradient checks passed"), std::string::npos);
}

TEST_F(CliTest, FootprintTables) {
  const Outcome r = run({"footprint"});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("421089"), std::string::npos);
  EXPECT_NE(r.out.find("50049"), std::string::npos);
  EXPECT_NE(r.out.find("8321"), std::string::npos);
}
