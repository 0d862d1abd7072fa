#include "cakt/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "cakt/batch.hpp"
#include "cakt/error.hpp"
#include "cakt/training.hpp"

namespace cakt {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ValidationError("auc: " + std::to_string(scores.size()) + " scores but " +
                          std::to_string(labels.size()) + " labels");
  }
  std::size_t positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("auc: labels must be 0 or 1");
    if (std::isnan(scores[i])) throw ValidationError("auc: NaN score");
    positives += static_cast<std::size_t>(labels[i]);
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0) throw ValidationError("auc: every label is 0 (no positive class)");
  if (negatives == 0) throw ValidationError("auc: every label is 1 (no negative class)");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::size_t tied_positives = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tied_positives += static_cast<std::size_t>(labels[order[j]]);
      ++j;
    }
    // Ranks i+1 .. j share their mean.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    positive_rank_sum += rank * static_cast<double>(tied_positives);
    i = j;
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

PooledPredictions predict_dataset(Model& model, const SequenceDataset& dataset,
                                  std::size_t batch_size) {
  if (dataset.num_concepts != model.config().num_concepts) {
    throw ValidationError("dataset has M = " + std::to_string(dataset.num_concepts) +
                          " but the model expects M = " +
                          std::to_string(model.config().num_concepts));
  }
  if (batch_size == 0) batch_size = 1;
  PooledPredictions pooled;
  ForwardOptions options;
  options.mode = Mode::kEval;
  std::vector<const EncodedSequence*> chunk;
  for (std::size_t start = 0; start < dataset.sequences.size(); start += batch_size) {
    chunk.clear();
    const std::size_t stop = std::min(dataset.sequences.size(), start + batch_size);
    for (std::size_t i = start; i < stop; ++i) chunk.push_back(&dataset.sequences[i]);
    const auto batch = make_batch(chunk);
    const auto pred = model.forward(batch, options);
    for (std::size_t cell : pred.order) {
      pooled.scores.push_back(pred.probabilities[cell]);
      pooled.labels.push_back(pred.labels[cell]);
    }
    pooled.loss_sum += prediction_loss(pred).sum;
  }
  return pooled;
}

EvalReport evaluate(const Checkpoint& checkpoint, const SequenceDataset& test,
                    const std::string& dataset_tag) {
  if (checkpoint.model.num_concepts != test.num_concepts) {
    throw ValidationError("checkpoint was trained with M = " +
                          std::to_string(checkpoint.model.num_concepts) +
                          " but the test set has M = " + std::to_string(test.num_concepts));
  }
  const auto start = std::chrono::steady_clock::now();
  auto model = restore_model(checkpoint);
  const auto pooled = predict_dataset(*model, test);
  EvalReport report;
  report.dataset = dataset_tag;
  report.variant = variant_name(checkpoint.model.variant);
  report.k = checkpoint.model.k;
  report.batch_size = checkpoint.train.batch_size;
  report.height = checkpoint.model.height;
  report.fold_aucs = {auc(pooled.scores, pooled.labels)};
  report.mean_auc = report.fold_aucs.front();
  report.std_auc = 0.0;
  report.n_predictions = pooled.size();
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double stddev(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double mu = mean(values);
  double sum = 0.0;
  for (double v : values) sum += (v - mu) * (v - mu);
  return std::sqrt(sum / static_cast<double>(values.size()));
}

}  // namespace cakt
