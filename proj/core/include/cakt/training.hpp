#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cakt/batch.hpp"
#include "cakt/checkpoint.hpp"
#include "cakt/data.hpp"
#include "cakt/model.hpp"
#include "cakt/optim.hpp"

namespace cakt {

inline constexpr double kProbabilityClamp = 1e-7;

struct LossValue {
  double sum = 0.0;
  double mean = 0.0;  // sum / count, 0 when nothing is unmasked
  std::size_t count = 0;
};

/// Masked binary cross-entropy. Probabilities are clamped to
/// [1e-7, 1 - 1e-7] before the log.
LossValue bce_loss(std::span<const double> probabilities, std::span<const int> labels,
                   std::span<const std::uint8_t> mask);

/// bce_loss over the unmasked predictions of a forward pass.
LossValue prediction_loss(const BatchPrediction& prediction);

/// d(mean loss)/d(logit) for each entry of `prediction.order`. Uses p - a,
/// the exact derivative of the unclamped loss.
std::vector<double> loss_gradient(const BatchPrediction& prediction);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_auc = 0.0;  // NaN when the validation labels are single-class or absent
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  Checkpoint best;  // highest validation AUC; the last epoch if none was defined
  Checkpoint last;
  int best_epoch = 0;
  double first_batch_loss = 0.0;
};

using EpochObserver = std::function<void(const EpochRecord&)>;

/// Trains a fresh model built from `model_config`. Sequences shorter than two
/// steps are skipped. Batch order per epoch depends only on `train.seed`.
TrainResult train(const SequenceDataset& train_set, const SequenceDataset& val_set,
                  const ModelConfig& model_config, const TrainConfig& train,
                  const EpochObserver& observer = {});

// ---------------------------------------------------------------- grad check

struct GradCheckOptions {
  std::size_t seq_len = 6;
  std::size_t batch = 2;
  std::size_t coords_per_group = 20;
  double step = 1e-5;
};

/// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradCheckFloor = 1e-6;

struct GradCheckEntry {
  std::string group;
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckReport {
  double tolerance = 0.0;
  std::map<std::string, double> worst_by_group;
  std::vector<GradCheckEntry> checked;
  std::vector<GradCheckEntry> offending;  // relative_error >= tolerance
  double max_relative_error = 0.0;

  bool passed() const noexcept { return offending.empty(); }
  std::string summary() const;
};

double gradient_relative_error(double analytic, double numeric);

/// Central finite differences against backward() on a random batch drawn from
/// `seed`, in train mode with batch statistics and without clipping.
GradCheckReport grad_check(const ModelConfig& config, double tolerance, std::uint64_t seed = 0,
                           const GradCheckOptions& options = {});

/// Same check on an existing model and batch.
GradCheckReport grad_check(Model& model, const BatchedSequences& batch, double tolerance,
                           std::uint64_t seed = 0, const GradCheckOptions& options = {});

}  // namespace cakt
