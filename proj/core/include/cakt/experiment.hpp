#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cakt/data.hpp"
#include "cakt/metrics.hpp"
#include "cakt/model.hpp"
#include "cakt/optim.hpp"
#include "cakt/training.hpp"

namespace cakt {

/// Cross-validation protocol: a held-out test split, the rest divided into
/// folds; each fold in turn is the validation set for a model trained on the
/// others, and every fold's best checkpoint is scored on the test split.
struct CvOptions {
  int folds = 5;
  double test_frac = 0.2;
  std::uint64_t split_seed = 0;
  int max_folds = 0;  // run only the first max_folds folds; 0 runs all
  std::string dataset_tag = "dataset";
};

struct FoldOutcome {
  int fold = 0;
  double val_auc = 0.0;
  double test_auc = 0.0;
  std::size_t n_predictions = 0;
  TrainResult training;
};

struct CvResult {
  EvalReport report;
  std::vector<FoldOutcome> folds;
};

int folds_to_run(const CvOptions& options);

/// `model.seed` and `train.seed` are used as given.
CvResult cross_validate(const DataSplit& split, const ModelConfig& model, const TrainConfig& train,
                        const CvOptions& options, const EpochObserver& observer = {});

/// Runs `count` independent jobs on up to `threads` workers. Each job writes
/// only its own slot, so results do not depend on scheduling.
void run_jobs(std::size_t count, int threads, const std::function<void(std::size_t)>& job);

// ---------------------------------------------------------------- sweeps

enum class SweepAxis { kK, kBatchSize, kHeight };

std::string axis_name(SweepAxis axis);
SweepAxis parse_axis(const std::string& name);

struct SweepGrid {
  SweepAxis axis = SweepAxis::kK;
  std::vector<int> values;

  /// k {4..14 step 2}, batch size {8, 16, 32, 48, 64, 80, 96}, H {11..19 step 2}.
  static SweepGrid defaults(SweepAxis axis);
};

/// Applies one grid value to copies of the base configs. H sets W too.
void apply_axis(SweepAxis axis, int value, ModelConfig& model, TrainConfig& train);

/// One (configuration, seed, fold) cell. A failed cell carries its error and
/// a NaN AUC instead of being dropped.
struct ExperimentRow {
  std::string label;  // grid value or variant name
  int value = 0;
  std::uint64_t seed = 0;
  int fold = 0;
  double auc = 0.0;
  bool failed = false;
  std::string error;
};

struct SummaryRow {
  std::string label;
  int value = 0;
  double mean_auc = 0.0;  // NaN when every cell failed
  std::size_t succeeded = 0;
  std::size_t failed = 0;
};

struct ExperimentTable {
  std::string axis;  // sweep axis, or "variant"
  std::vector<ExperimentRow> rows;
  std::vector<SummaryRow> summary;  // in grid / variant order
};

/// Mean AUC per label over the non-failed rows, in first-appearance order.
std::vector<SummaryRow> summarize(const std::vector<ExperimentRow>& rows);

/// Rows are sorted by grid value, then seed, then fold.
ExperimentTable sweep(const DataSplit& split, const SweepGrid& grid, const ModelConfig& model,
                      const TrainConfig& train, const std::vector<std::uint64_t>& seeds,
                      const CvOptions& options, int threads = 1);

/// Every variant in `variants` (the eight ablations plus the full model by
/// default) under shared seeds and splits.
ExperimentTable ablation_suite(const DataSplit& split, const ModelConfig& model,
                               const TrainConfig& train, const std::vector<std::uint64_t>& seeds,
                               const CvOptions& options, int threads = 1,
                               const std::vector<Variant>& variants = ablation_variants());

}  // namespace cakt
