#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <set>
#include <sstream>

#include "cakt/error.hpp"
#include "cakt/experiment.hpp"
#include "cakt/report.hpp"
#include "support.hpp"

namespace cakt {
namespace {

struct Fixture {
  DataSplit split;
  ModelConfig model;
  TrainConfig train;
  CvOptions cv;
};

Fixture small_setup() {
  Fixture f;
  const auto ds = test::random_dataset(30, 4, 3, 8, 90);
  f.split = split_train_test(ds, 0.2, 3, 1);
  f.model.num_concepts = 4;
  f.model.k = 2;
  f.model.height = 2;
  f.model.width = 2;
  f.train.epochs = 1;
  f.train.batch_size = 8;
  f.cv.folds = 3;
  f.cv.max_folds = 1;
  f.cv.dataset_tag = "random";
  return f;
}

TEST(Grid, DefaultGrids) {
  EXPECT_EQ(SweepGrid::defaults(SweepAxis::kK).values, (std::vector<int>{4, 6, 8, 10, 12, 14}));
  EXPECT_EQ(SweepGrid::defaults(SweepAxis::kBatchSize).values,
            (std::vector<int>{8, 16, 32, 48, 64, 80, 96}));
  EXPECT_EQ(SweepGrid::defaults(SweepAxis::kHeight).values, (std::vector<int>{11, 13, 15, 17, 19}));
}

TEST(Grid, AxisNamesRoundTrip) {
  for (auto a : {SweepAxis::kK, SweepAxis::kBatchSize, SweepAxis::kHeight}) {
    EXPECT_EQ(parse_axis(axis_name(a)), a);
  }
  EXPECT_THROW(parse_axis("lr"), ValidationError);
}

TEST(Grid, HeightSetsWidthToo) {
  ModelConfig m;
  TrainConfig t;
  apply_axis(SweepAxis::kHeight, 13, m, t);
  EXPECT_EQ(m.height, 13);
  EXPECT_EQ(m.width, 13);
  EXPECT_EQ(m.d_e(), 169);
  apply_axis(SweepAxis::kBatchSize, 48, m, t);
  EXPECT_EQ(t.batch_size, 48);
}

TEST(CrossValidate, RunsRequestedFolds) {
  auto f = small_setup();
  f.cv.max_folds = 2;
  EXPECT_EQ(folds_to_run(f.cv), 2);
  const auto r = cross_validate(f.split, f.model, f.train, f.cv);
  ASSERT_EQ(r.folds.size(), 2u);
  EXPECT_EQ(r.report.fold_aucs.size(), 2u);
  EXPECT_DOUBLE_EQ(r.report.mean_auc, mean(r.report.fold_aucs));
  for (double a : r.report.fold_aucs) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
  f.cv.max_folds = 0;
  EXPECT_EQ(folds_to_run(f.cv), 3);
}

TEST(Sweep, TwoValuesOneSeedGiveTwoSortedRows) {
  const auto f = small_setup();
  SweepGrid grid{SweepAxis::kK, {6, 4}};
  const auto table = sweep(f.split, grid, f.model, f.train, {1}, f.cv);
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_EQ(table.rows[0].value, 4);
  EXPECT_EQ(table.rows[1].value, 6);
  EXPECT_EQ(table.axis, "k");
  ASSERT_EQ(table.summary.size(), 2u);
  EXPECT_EQ(table.summary[0].label, "4");
}

TEST(Sweep, FailedCellsAreMarkedNotDropped) {
  const auto f = small_setup();
  SweepGrid grid{SweepAxis::kK, {0, 2}};
  const auto table = sweep(f.split, grid, f.model, f.train, {1, 2}, f.cv);
  ASSERT_EQ(table.rows.size(), 4u);
  std::size_t failed = 0;
  for (const auto& r : table.rows) {
    if (r.value == 0) {
      EXPECT_TRUE(r.failed);
      EXPECT_TRUE(std::isnan(r.auc));
      EXPECT_FALSE(r.error.empty());
      ++failed;
    } else {
      EXPECT_FALSE(r.failed);
    }
  }
  EXPECT_EQ(failed, 2u);
  std::ostringstream csv;
  write_sweep_csv(table, csv);
  EXPECT_NE(csv.str().find("k,0,1,0,failed"), std::string::npos) << csv.str();
  std::ostringstream summary;
  write_summary_csv(table, summary);
  EXPECT_NE(summary.str().find("0,failed,0,2"), std::string::npos) << summary.str();
}

TEST(Sweep, ThreadCountDoesNotChangeResults) {
  const auto f = small_setup();
  SweepGrid grid{SweepAxis::kBatchSize, {4, 8, 16}};
  const auto serial = sweep(f.split, grid, f.model, f.train, {3}, f.cv, 1);
  const auto parallel = sweep(f.split, grid, f.model, f.train, {3}, f.cv, 3);
  std::ostringstream a;
  std::ostringstream b;
  write_sweep_csv(serial, a);
  write_sweep_csv(parallel, b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Ablation, NineRowsWithSharedSplits) {
  const auto f = small_setup();
  const auto table = ablation_suite(f.split, f.model, f.train, {1}, f.cv);
  ASSERT_EQ(table.rows.size(), 9u);
  ASSERT_EQ(table.summary.size(), 9u);
  std::set<std::string> labels;
  for (const auto& r : table.rows) {
    labels.insert(r.label);
    EXPECT_FALSE(r.failed) << r.label << ": " << r.error;
  }
  EXPECT_EQ(labels.size(), 9u);
  EXPECT_EQ(labels.count("ORIG_CAKT") + labels.count("CAKT"), 1u);
}

TEST(RunJobs, EveryIndexRunsOnce) {
  for (int threads : {1, 2, 5}) {
    std::vector<std::atomic<int>> hits(17);
    run_jobs(hits.size(), threads, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
}

TEST(Summaries, MeanOverSucceededCells) {
  std::vector<ExperimentRow> rows{{"a", 1, 1, 0, 0.6, false, ""},
                                  {"a", 1, 2, 0, 0.8, false, ""},
                                  {"b", 2, 1, 0, std::nan(""), true, "boom"}};
  const auto s = summarize(rows);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_DOUBLE_EQ(s[0].mean_auc, 0.7);
  EXPECT_EQ(s[0].succeeded, 2u);
  EXPECT_TRUE(std::isnan(s[1].mean_auc));
  EXPECT_EQ(s[1].failed, 1u);
}

}  // namespace
}  // namespace cakt
