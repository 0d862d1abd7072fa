#include <gtest/gtest.h>

#include <json.hpp>
#include <map>
#include <sstream>

#include "cakt/checkpoint.hpp"
#include "commands.hpp"
#include "support.hpp"

namespace cakt {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run_cli(const std::vector<std::string>& args,
                const std::map<std::string, std::string>& env = {}) {
  std::ostringstream out;
  std::ostringstream err;
  Outcome o;
  o.code = cli::run(args, out, err, [&](const char* k) -> const char* {
    auto it = env.find(k);
    return it == env.end() ? nullptr : it->second.c_str();
  });
  o.out = out.str();
  o.err = err.str();
  return o;
}

void expect_run_record(const fs::path& dir, const std::string& command) {
  ASSERT_TRUE(fs::exists(dir / "config.ini")) << dir;
  ASSERT_TRUE(fs::exists(dir / "manifest.json")) << dir;
  const auto m = nlohmann::json::parse(test::read_file(dir / "manifest.json"));
  EXPECT_EQ(m.at("command"), command);
  EXPECT_TRUE(m.contains("config"));
  EXPECT_TRUE(m.contains("seeds"));
  EXPECT_TRUE(m.contains("outputs"));
  EXPECT_TRUE(m.contains("wall_time_seconds"));
}

nlohmann::json without_timing(nlohmann::json m) {
  m.erase("started_at");
  m.erase("wall_time_seconds");
  return m;
}

// A small synthetic corpus ingested once and shared by the pipeline tests.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir();
    const auto r = run_cli({"ingest", "--synthetic", "--students", "40", "--concepts", "5", "--length",
                            "12", "--synthetic-seed", "4", "--out-dir", (dir_->path() / "data").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static std::string data() { return (dir_->path() / "data" / "synthetic.jsonl").string(); }
  static fs::path root() { return dir_->path(); }

  static std::vector<std::string> small(const std::string& command, const std::string& out) {
    return {command,        "--path",   data(), "--k",         "2",    "--H",
            "3",            "--epochs", "1",    "--max-folds", "1",    "--batch-size",
            "8",            "--seeds",  "1",    "--out-dir",   (root() / out).string()};
  }

  static test::TempDir* dir_;
};

test::TempDir* Pipeline::dir_ = nullptr;

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
  EXPECT_EQ(run_cli({"train", "--no-such-flag", "1"}).code, 1);
  EXPECT_EQ(run_cli({"--version"}).code, 0);
  EXPECT_EQ(run_cli({"train", "--help"}).code, 0);
}

TEST(Cli, MissingInputFailsBeforeWritingAnything) {
  test::TempDir dir;
  const auto out = dir / "run";
  const auto r = run_cli({"train", "--path", "/nonexistent/data.jsonl", "--out-dir", out.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("does not exist"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(out));
  const auto ingest = run_cli({"ingest", "--path", "/nonexistent/x.csv", "--out-dir", out.string()});
  EXPECT_EQ(ingest.code, 1);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, InvalidValuesAreAllReported) {
  test::TempDir dir;
  const auto r = run_cli({"train", "--k", "zero", "--lr", "fast", "--out-dir", (dir / "r").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--k"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("--lr"), std::string::npos) << r.err;
  const auto mismatch =
      run_cli({"train", "--path", "/nonexistent", "--H", "18", "--d-h", "289", "--out-dir", (dir / "r").string()});
  EXPECT_EQ(mismatch.code, 1);
  EXPECT_FALSE(fs::exists(dir / "r"));
}

TEST(Cli, IngestCsvPrintsStatsAndIsIdempotent) {
  test::TempDir dir;
  test::write_file(dir / "raw.csv",
                   "student_id,concept_id,correct\n"
                   "s1,10,1\ns1,12,0\ns2,10,1\ns1,10,1\ns2,11,0\ns3,12,1\n");
  const auto a = run_cli({"ingest", "--path", (dir / "raw.csv").string(), "--format", "assistments_csv",
                          "--out-dir", (dir / "a").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("3, 3, 6, 2"), std::string::npos) << a.out;
  const auto b = run_cli({"ingest", "--path", (dir / "raw.csv").string(), "--format", "assistments_csv",
                          "--out-dir", (dir / "b").string()});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(test::read_file(dir / "a" / "raw.jsonl"), test::read_file(dir / "b" / "raw.jsonl"));
  expect_run_record(dir / "a", "ingest");
  const auto ma = nlohmann::json::parse(test::read_file(dir / "a" / "manifest.json"));
  auto mb = nlohmann::json::parse(test::read_file(dir / "b" / "manifest.json"));
  mb["config"]["output"]["out_dir"] = ma["config"]["output"]["out_dir"];
  EXPECT_EQ(without_timing(ma), without_timing(mb));

  // Re-ingesting the canonical output reproduces it byte for byte.
  const auto c = run_cli({"ingest", "--path", (dir / "a" / "raw.jsonl").string(), "--out-dir",
                          (dir / "c").string()});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(test::read_file(dir / "c" / "raw.jsonl"), test::read_file(dir / "a" / "raw.jsonl"));
}

TEST(Cli, OutputRootComesFromEnvironment) {
  test::TempDir dir;
  const auto r = run_cli({"ingest", "--synthetic", "--students", "5", "--concepts", "3", "--length", "4",
                          "--out-dir", "nested"},
                         {{"CAKT_OUTPUT_ROOT", dir.path().string()}});
  ASSERT_EQ(r.code, 0) << r.err;
  expect_run_record(dir / "nested", "ingest");
}

TEST_F(Pipeline, TrainResolvesFullSizeEmbedding) {
  const auto r = run_cli({"train", "--path", data(), "--k", "6", "--H", "17", "--batch-size", "32",
                          "--epochs", "1", "--max-folds", "1", "--out-dir", (root() / "full").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ckpt = Checkpoint::load(root() / "full" / "best.ckpt");
  EXPECT_EQ(ckpt.model.d_e(), 289);
  EXPECT_EQ(ckpt.model.d_h(), 289);
  EXPECT_EQ(ckpt.model.k, 6);
  EXPECT_EQ(ckpt.train.batch_size, 32);
  expect_run_record(root() / "full", "train");
}

TEST_F(Pipeline, TrainTwiceGivesIdenticalRecords) {
  const auto a = run_cli(small("train", "det_a"));
  const auto b = run_cli(small("train", "det_b"));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(test::read_file(root() / "det_a" / "evaluation.csv"),
            test::read_file(root() / "det_b" / "evaluation.csv"));
  EXPECT_EQ(test::read_file(root() / "det_a" / "best.ckpt"), test::read_file(root() / "det_b" / "best.ckpt"));
  auto ma = nlohmann::json::parse(test::read_file(root() / "det_a" / "manifest.json"));
  auto mb = nlohmann::json::parse(test::read_file(root() / "det_b" / "manifest.json"));
  mb["config"]["output"]["out_dir"] = ma["config"]["output"]["out_dir"];
  EXPECT_EQ(without_timing(ma), without_timing(mb));
  EXPECT_EQ(ma.at("results").at("folds").size(), 1u);
  EXPECT_TRUE(fs::exists(root() / "det_a" / "fold_0" / "history.csv"));
}

TEST_F(Pipeline, EvalAndReportConsumeTrainOutput) {
  ASSERT_EQ(run_cli(small("train", "t")).code, 0);
  const auto ckpt = (root() / "t" / "best.ckpt").string();
  const auto e = run_cli({"eval", "--path", data(), "--checkpoint", ckpt, "--out-dir", (root() / "e").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("test AUC"), std::string::npos);
  EXPECT_TRUE(fs::exists(root() / "e" / "evaluation.csv"));
  EXPECT_TRUE(fs::exists(root() / "e" / "knowledge_state.svg"));
  expect_run_record(root() / "e", "eval");

  const auto rep = run_cli({"report", "--from", (root() / "t").string(), "--path", data(), "--checkpoint",
                            ckpt, "--out-dir", (root() / "rep").string()});
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_TRUE(fs::exists(root() / "rep" / "loss_curve.svg"));
  EXPECT_TRUE(fs::exists(root() / "rep" / "knowledge_state.csv"));
  expect_run_record(root() / "rep", "report");

  const auto missing = run_cli({"eval", "--path", data(), "--checkpoint", (root() / "nope.ckpt").string(),
                                "--out-dir", (root() / "e2").string()});
  EXPECT_EQ(missing.code, 1);
  const auto unknown = run_cli({"report", "--from", (root() / "absent").string(), "--out-dir",
                                (root() / "rep2").string()});
  EXPECT_EQ(unknown.code, 1);
}

TEST_F(Pipeline, SweepAndAblateWriteTables) {
  auto args = small("sweep", "sw");
  for (const char* extra : {"--sweep-axis", "batch_size", "--sweep-values", "4,8"}) args.emplace_back(extra);
  const auto s = run_cli(args);
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_TRUE(fs::exists(root() / "sw" / "sweep.csv"));
  EXPECT_TRUE(fs::exists(root() / "sw" / "auc_vs_batch_size.svg"));
  expect_run_record(root() / "sw", "sweep");

  args = small("ablate", "ab");
  for (const char* extra : {"--variants", "DKT_BASELINE,CAKT"}) args.emplace_back(extra);
  const auto a = run_cli(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("DKT_BASELINE"), std::string::npos) << a.out;
  EXPECT_TRUE(fs::exists(root() / "ab" / "ablation.csv"));
  expect_run_record(root() / "ab", "ablate");

  const auto re = run_cli({"report", "--from", (root() / "sw").string(), "--out-dir", (root() / "sw2").string()});
  ASSERT_EQ(re.code, 0) << re.err;
  EXPECT_EQ(test::read_file(root() / "sw" / "sweep.csv"), test::read_file(root() / "sw2" / "sweep.csv"));
}

}  // namespace
}  // namespace cakt
