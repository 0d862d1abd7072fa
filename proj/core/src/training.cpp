#include "cakt/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "cakt/error.hpp"
#include "cakt/metrics.hpp"
#include "cakt/rng.hpp"

namespace cakt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double bce_term(double p, int label) {
  p = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return label != 0 ? -std::log(p) : -std::log(1.0 - p);
}

double auc_or_nan(const PooledPredictions& pooled) {
  const bool has_pos = std::find(pooled.labels.begin(), pooled.labels.end(), 1) != pooled.labels.end();
  const bool has_neg = std::find(pooled.labels.begin(), pooled.labels.end(), 0) != pooled.labels.end();
  if (!has_pos || !has_neg) return kNaN;
  return auc(pooled.scores, pooled.labels);
}

}  // namespace

LossValue bce_loss(std::span<const double> probabilities, std::span<const int> labels,
                   std::span<const std::uint8_t> mask) {
  if (probabilities.size() != labels.size() || probabilities.size() != mask.size()) {
    throw ValidationError("bce_loss: shapes differ (" + std::to_string(probabilities.size()) +
                          " probabilities, " + std::to_string(labels.size()) + " labels, " +
                          std::to_string(mask.size()) + " mask entries)");
  }
  LossValue out;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (mask[i] == 0) continue;
    out.sum += bce_term(probabilities[i], labels[i]);
    ++out.count;
  }
  out.mean = out.count > 0 ? out.sum / static_cast<double>(out.count) : 0.0;
  return out;
}

LossValue prediction_loss(const BatchPrediction& prediction) {
  LossValue out;
  for (std::size_t cell : prediction.order) {
    out.sum += bce_term(prediction.probabilities[cell], prediction.labels[cell]);
  }
  out.count = prediction.order.size();
  out.mean = out.count > 0 ? out.sum / static_cast<double>(out.count) : 0.0;
  return out;
}

std::vector<double> loss_gradient(const BatchPrediction& prediction) {
  std::vector<double> grad(prediction.order.size());
  const double scale = grad.empty() ? 0.0 : 1.0 / static_cast<double>(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const std::size_t cell = prediction.order[i];
    grad[i] = (prediction.probabilities[cell] - static_cast<double>(prediction.labels[cell])) * scale;
  }
  return grad;
}

TrainResult train(const SequenceDataset& train_set, const SequenceDataset& val_set,
                  const ModelConfig& model_config, const TrainConfig& config,
                  const EpochObserver& observer) {
  model_config.validate();
  config.validate();
  if (train_set.num_concepts != model_config.num_concepts) {
    throw ValidationError("training set has M = " + std::to_string(train_set.num_concepts) +
                          " but the model expects M = " +
                          std::to_string(model_config.num_concepts));
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < train_set.sequences.size(); ++i) {
    if (train_set.sequences[i].size() >= 2) eligible.push_back(i);
  }
  if (eligible.empty()) throw ValidationError("training set has no sequence with two or more steps");

  auto model = build_variant(model_config);
  Adam optimizer(model->parameters());
  TrainResult result;
  double best_auc = -1.0;
  int stale = 0;
  const auto batch_size = static_cast<std::size_t>(config.batch_size);

  ForwardOptions options;
  options.mode = Mode::kTrain;
  options.update_running_stats = true;
  options.keep_tape = true;

  std::vector<const EncodedSequence*> chunk;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.learning_rate(epoch);
    std::vector<std::size_t> order = eligible;
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch) + 1));
    rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size, ++batch_index) {
      chunk.clear();
      const std::size_t stop = std::min(order.size(), start + batch_size);
      for (std::size_t i = start; i < stop; ++i) chunk.push_back(&train_set.sequences[order[i]]);
      const auto batch = make_batch(chunk);

      model->parameters().zero_grad();
      const auto pred = model->forward(batch, options);
      const auto loss = prediction_loss(pred);
      if (!std::isfinite(loss.sum)) {
        std::ostringstream os;
        os << "non-finite loss in epoch " << epoch + 1 << ", batch " << batch_index
           << " (sequences";
        for (const auto* seq : chunk) os << ' ' << seq->student();
        os << ")";
        throw RuntimeFailure(os.str());
      }
      if (epoch == 0 && batch_index == 0) result.first_batch_loss = loss.mean;
      loss_sum += loss.sum;
      loss_count += loss.count;
      model->backward(loss_gradient(pred));
      clip_gradients(model->parameters(), config.clip_norm);
      optimizer.step(lr, config.l2);
    }

    EpochRecord record;
    record.epoch = epoch + 1;
    record.lr = lr;
    record.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
    record.val_loss = kNaN;
    record.val_auc = kNaN;
    if (!val_set.sequences.empty()) {
      const auto pooled = predict_dataset(*model, val_set);
      record.val_loss = pooled.size() > 0 ? pooled.mean_loss() : kNaN;
      record.val_auc = auc_or_nan(pooled);
    }
    result.history.push_back(record);
    if (observer) observer(record);

    if (!std::isnan(record.val_auc) && record.val_auc > best_auc) {
      best_auc = record.val_auc;
      result.best_epoch = record.epoch;
      result.best = capture(*model, config, &optimizer.state(), record.epoch, record.val_auc);
      stale = 0;
    } else if (config.early_stop_patience && ++stale >= *config.early_stop_patience) {
      break;
    }
  }
  const auto& final_record = result.history.back();
  result.last = capture(*model, config, &optimizer.state(), final_record.epoch, final_record.val_auc);
  if (result.best_epoch == 0) {
    result.best = result.last;
    result.best_epoch = final_record.epoch;
  }
  return result;
}

// ---------------------------------------------------------------- grad check

double gradient_relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / scale;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << std::setprecision(3) << std::scientific;
  os << "gradient check: " << checked.size() << " coordinates, max relative error "
     << max_relative_error << " (tolerance " << tolerance << ")\n";
  for (const auto& [group, worst] : worst_by_group) os << "  " << group << ": " << worst << '\n';
  if (!offending.empty()) {
    os << "offending coordinates:\n";
    for (const auto& e : offending) {
      os << "  " << e.parameter << '[' << e.index << "] analytic " << e.analytic << " numeric "
         << e.numeric << " rel " << e.relative_error << '\n';
    }
  }
  return os.str();
}

GradCheckReport grad_check(const ModelConfig& config, double tolerance, std::uint64_t seed,
                           const GradCheckOptions& options) {
  auto model = build_variant(config);
  Rng rng(derive_seed(seed, 0x67726164ULL));
  std::vector<EncodedSequence> sequences;
  for (std::size_t r = 0; r < options.batch; ++r) {
    std::vector<int> concepts(options.seq_len);
    std::vector<int> responses(options.seq_len);
    for (std::size_t t = 0; t < options.seq_len; ++t) {
      concepts[t] = static_cast<int>(rng.below(static_cast<std::size_t>(config.num_concepts)));
      responses[t] = rng.bernoulli(0.5) ? 1 : 0;
    }
    sequences.emplace_back("g" + std::to_string(r), std::move(concepts), std::move(responses),
                           config.num_concepts);
  }
  return grad_check(*model, make_batch(sequences), tolerance, seed, options);
}

GradCheckReport grad_check(Model& model, const BatchedSequences& batch, double tolerance,
                           std::uint64_t seed, const GradCheckOptions& options) {
  ForwardOptions forward;
  forward.mode = Mode::kTrain;
  forward.update_running_stats = false;
  forward.keep_tape = true;

  auto& params = model.parameters();
  params.zero_grad();
  const auto pred = model.forward(batch, forward);
  model.backward(loss_gradient(pred));

  forward.keep_tape = false;
  auto loss_at = [&]() { return prediction_loss(model.forward(batch, forward)).mean; };

  GradCheckReport report;
  report.tolerance = tolerance;
  Rng rng(derive_seed(seed, 0x636f6f7264ULL));
  for (const auto& group : params.groups()) {
    std::vector<std::pair<Parameter*, std::size_t>> coords;
    for (auto& p : params) {
      if (!p.trainable || p.group != group) continue;
      for (std::size_t i = 0; i < p.value.size(); ++i) coords.emplace_back(&p, i);
    }
    rng.shuffle(std::span(coords));
    if (coords.size() > options.coords_per_group) coords.resize(options.coords_per_group);
    double worst = 0.0;
    for (auto [p, i] : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + options.step;
      const double up = loss_at();
      p->value[i] = saved - options.step;
      const double down = loss_at();
      p->value[i] = saved;
      GradCheckEntry entry{group, p->name, i, p->grad[i], (up - down) / (2.0 * options.step), 0.0};
      entry.relative_error = gradient_relative_error(entry.analytic, entry.numeric);
      worst = std::max(worst, entry.relative_error);
      if (!(entry.relative_error < tolerance)) report.offending.push_back(entry);
      report.checked.push_back(std::move(entry));
    }
    report.worst_by_group[group] = worst;
    report.max_relative_error = std::max(report.max_relative_error, worst);
  }
  return report;
}

}  // namespace cakt
