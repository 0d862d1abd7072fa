#include <gtest/gtest.h>

#include <cmath>

#include "cakt/error.hpp"
#include "cakt/metrics.hpp"
#include "cakt/training.hpp"
#include "support.hpp"

namespace cakt {
namespace {

TEST(Auc, Examples) {
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), 1.0);
  EXPECT_EQ(auc(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}), 0.5);
  EXPECT_EQ(auc(std::vector<double>{0.1, 0.9}, std::vector<int>{1, 0}), 0.0);
}

TEST(Auc, SingleClassNamesTheMissingClass) {
  try {
    auc(std::vector<double>{0.2, 0.4}, std::vector<int>{1, 1});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("negative"), std::string::npos) << e.what();
  }
  try {
    auc(std::vector<double>{0.2, 0.4}, std::vector<int>{0, 0});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("positive"), std::string::npos) << e.what();
  }
  EXPECT_THROW(auc(std::vector<double>{0.2}, std::vector<int>{1, 0}), ValidationError);
}

TEST(Auc, EqualsPairwiseOracle) {
  Rng rng(123);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + rng.below(600);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    const bool coarse = trial % 2 == 0;  // coarse scores force many ties
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = coarse ? static_cast<double>(rng.below(7)) / 7.0 : rng.uniform();
      labels[i] = rng.bernoulli(0.4) ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    EXPECT_NEAR(auc(scores, labels), test::pairwise_auc(scores, labels), 1e-9);
  }
}

TEST(Auc, InvariantUnderMonotoneTransforms) {
  Rng rng(7);
  std::vector<double> scores(300);
  std::vector<int> labels(300);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = rng.uniform(0.01, 0.99);
    labels[i] = rng.bernoulli(0.5 + 0.3 * (scores[i] - 0.5)) ? 1 : 0;
  }
  const double base = auc(scores, labels);
  for (auto f : {+[](double x) { return std::log(x / (1 - x)); }, +[](double x) { return x * x * x; },
                 +[](double x) { return 5.0 * x - 2.0; }, +[](double x) { return std::exp(3.0 * x); }}) {
    std::vector<double> t(scores.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = f(scores[i]);
    EXPECT_EQ(auc(t, labels), base);
  }
}

TEST(Stats, MeanAndPopulationStddev) {
  const std::vector<double> v{2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0};
  EXPECT_DOUBLE_EQ(mean(v), 5.0);
  EXPECT_DOUBLE_EQ(stddev(v), 2.0);
  EXPECT_EQ(stddev(std::vector<double>{3.0}), 0.0);
}

TEST(Evaluate, IsBitwiseRepeatable) {
  const auto ds = test::random_dataset(10, 5, 3, 12, 14);
  Model model(test::tiny_config());
  const auto ckpt = capture(model, TrainConfig{}, nullptr);
  const auto a = evaluate(ckpt, ds, "random");
  const auto b = evaluate(ckpt, ds, "random");
  EXPECT_EQ(a.mean_auc, b.mean_auc);
  EXPECT_EQ(a.n_predictions, b.n_predictions);
  EXPECT_EQ(a.variant, "CAKT");
  EXPECT_EQ(a.dataset, "random");
  EXPECT_EQ(a.fold_aucs.size(), 1u);
}

TEST(Evaluate, PooledAucMatchesOracle) {
  const auto ds = test::random_dataset(12, 5, 3, 12, 15);
  Model model(test::tiny_config(Variant::kDktBaseline));
  const auto pooled = predict_dataset(model, ds, 5);
  std::size_t expected = 0;
  for (const auto& s : ds.sequences) expected += s.size() - 1;
  ASSERT_EQ(pooled.size(), expected);
  const auto report = evaluate(capture(model, TrainConfig{}, nullptr), ds, "x");
  EXPECT_NEAR(report.mean_auc, test::pairwise_auc(pooled.scores, pooled.labels), 1e-12);
}

TEST(Evaluate, RejectsConceptCountMismatch) {
  Model model(test::tiny_config());
  const auto ckpt = capture(model, TrainConfig{}, nullptr);
  const auto ds = test::random_dataset(5, 6, 3, 5, 1);
  EXPECT_THROW(evaluate(ckpt, ds, "x"), ValidationError);
  EXPECT_THROW(predict_dataset(model, ds), ValidationError);
}

// An untrained network carries no information about the labels.
TEST(Evaluate, UntrainedModelIsNearChance) {
  const auto ds = generate_synthetic(300, 10, 30, 77);
  double total = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = test::tiny_config(Variant::kCakt, 10);
    cfg.seed = seed;
    Model model(cfg);
    const auto r = evaluate(capture(model, TrainConfig{}, nullptr), ds, "syn");
    EXPECT_GE(r.mean_auc, 0.45) << "seed " << seed;
    EXPECT_LE(r.mean_auc, 0.55) << "seed " << seed;
    total += r.mean_auc;
  }
  EXPECT_NEAR(total / 5.0, 0.5, 0.05);
}

}  // namespace
}  // namespace cakt
