#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cakt/checkpoint.hpp"
#include "cakt/data.hpp"
#include "cakt/model.hpp"

namespace cakt {

/// Rank-based (Mann-Whitney) AUC; tied scores share their average rank, which
/// counts a tied positive/negative pair as one half.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Every unmasked prediction over a dataset, pooled.
struct PooledPredictions {
  std::vector<double> scores;
  std::vector<int> labels;
  double loss_sum = 0.0;

  std::size_t size() const noexcept { return scores.size(); }
  double mean_loss() const { return scores.empty() ? 0.0 : loss_sum / static_cast<double>(size()); }
};

/// Eval-mode forward over `dataset` in chunks of `batch_size` sequences.
PooledPredictions predict_dataset(Model& model, const SequenceDataset& dataset,
                                  std::size_t batch_size = 64);

struct EvalReport {
  std::string dataset;
  std::string variant;
  int k = 0;
  int batch_size = 0;
  int height = 0;
  std::vector<double> fold_aucs;
  double mean_auc = 0.0;
  double std_auc = 0.0;
  std::size_t n_predictions = 0;
  double runtime_seconds = 0.0;
};

/// Pooled test AUC of a checkpoint. The dataset must have the checkpoint's M.
EvalReport evaluate(const Checkpoint& checkpoint, const SequenceDataset& test,
                    const std::string& dataset_tag);

double mean(std::span<const double> values);
/// Population standard deviation; 0 for fewer than two values.
double stddev(std::span<const double> values);

}  // namespace cakt
