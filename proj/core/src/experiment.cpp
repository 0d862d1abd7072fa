#include "cakt/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

#include "cakt/error.hpp"

namespace cakt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Job {
  std::string label;
  int value = 0;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
};

std::vector<ExperimentRow> run_grid(const DataSplit& split, const std::vector<Job>& jobs,
                                    const CvOptions& options, int threads) {
  const int folds = folds_to_run(options);
  std::vector<std::vector<ExperimentRow>> results(jobs.size());
  run_jobs(jobs.size(), threads, [&](std::size_t i) {
    const Job& job = jobs[i];
    auto& rows = results[i];
    try {
      const auto cv = cross_validate(split, job.model, job.train, options);
      for (const auto& f : cv.folds) {
        rows.push_back({job.label, job.value, job.seed, f.fold, f.test_auc, false, {}});
      }
    } catch (const std::exception& e) {
      for (int f = 0; f < folds; ++f) {
        rows.push_back({job.label, job.value, job.seed, f, kNaN, true, e.what()});
      }
    }
  });
  std::vector<ExperimentRow> rows;
  for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
  return rows;
}

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<ExperimentRow>& rows) {
  std::vector<SummaryRow> out;
  for (const auto& row : rows) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const SummaryRow& s) { return s.label == row.label; });
    if (it == out.end()) {
      out.push_back({row.label, row.value, 0.0, 0, 0});
      it = out.end() - 1;
    }
    if (row.failed) {
      ++it->failed;
    } else {
      it->mean_auc += row.auc;
      ++it->succeeded;
    }
  }
  for (auto& s : out) {
    s.mean_auc = s.succeeded > 0 ? s.mean_auc / static_cast<double>(s.succeeded) : kNaN;
  }
  return out;
}

int folds_to_run(const CvOptions& options) {
  if (options.folds < 2) throw ValidationError("cross validation needs at least 2 folds");
  if (options.max_folds < 0) throw ValidationError("max_folds must be non-negative");
  return options.max_folds > 0 ? std::min(options.max_folds, options.folds) : options.folds;
}

CvResult cross_validate(const DataSplit& split, const ModelConfig& model, const TrainConfig& train,
                        const CvOptions& options, const EpochObserver& observer) {
  const int folds = folds_to_run(options);
  if (static_cast<int>(split.cv_folds.size()) < folds) {
    throw ValidationError("split has " + std::to_string(split.cv_folds.size()) +
                          " folds but " + std::to_string(folds) + " were requested");
  }
  const auto start = std::chrono::steady_clock::now();
  CvResult result;
  result.report.dataset = options.dataset_tag;
  result.report.variant = variant_name(model.variant);
  result.report.k = model.k;
  result.report.batch_size = train.batch_size;
  result.report.height = model.height;
  for (int f = 0; f < folds; ++f) {
    const auto& [train_set, val_set] = split.cv_folds[static_cast<std::size_t>(f)];
    FoldOutcome outcome;
    outcome.fold = f;
    outcome.training = cakt::train(train_set, val_set, model, train, observer);
    outcome.val_auc = outcome.training.best.val_auc;
    auto best = restore_model(outcome.training.best);
    const auto pooled = predict_dataset(*best, split.test);
    outcome.test_auc = auc(pooled.scores, pooled.labels);
    outcome.n_predictions = pooled.size();
    result.report.fold_aucs.push_back(outcome.test_auc);
    result.report.n_predictions += outcome.n_predictions;
    result.folds.push_back(std::move(outcome));
  }
  result.report.mean_auc = mean(result.report.fold_aucs);
  result.report.std_auc = stddev(result.report.fold_aucs);
  result.report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void run_jobs(std::size_t count, int threads, const std::function<void(std::size_t)>& job) {
  const std::size_t workers =
      std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kK:
      return "k";
    case SweepAxis::kBatchSize:
      return "batch_size";
    case SweepAxis::kHeight:
      return "H";
  }
  return "k";
}

SweepAxis parse_axis(const std::string& name) {
  if (name == "k") return SweepAxis::kK;
  if (name == "batch_size" || name == "b") return SweepAxis::kBatchSize;
  if (name == "H" || name == "h") return SweepAxis::kHeight;
  throw ValidationError("unknown sweep axis '" + name + "' (expected k, batch_size or H)");
}

SweepGrid SweepGrid::defaults(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kK:
      return {axis, {4, 6, 8, 10, 12, 14}};
    case SweepAxis::kBatchSize:
      return {axis, {8, 16, 32, 48, 64, 80, 96}};
    case SweepAxis::kHeight:
      return {axis, {11, 13, 15, 17, 19}};
  }
  return {axis, {}};
}

void apply_axis(SweepAxis axis, int value, ModelConfig& model, TrainConfig& train) {
  switch (axis) {
    case SweepAxis::kK:
      model.k = value;
      break;
    case SweepAxis::kBatchSize:
      train.batch_size = value;
      break;
    case SweepAxis::kHeight:
      model.height = value;
      model.width = value;
      model.embed_dim = 0;
      model.hidden_dim = 0;
      break;
  }
}

ExperimentTable sweep(const DataSplit& split, const SweepGrid& grid, const ModelConfig& model,
                      const TrainConfig& train, const std::vector<std::uint64_t>& seeds,
                      const CvOptions& options, int threads) {
  if (grid.values.empty()) throw ValidationError("sweep grid is empty");
  if (seeds.empty()) throw ValidationError("sweep needs at least one seed");
  std::vector<int> values = grid.values;
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<Job> jobs;
  for (int value : values) {
    for (auto seed : seeds) {
      Job job{std::to_string(value), value, model, train, seed};
      apply_axis(grid.axis, value, job.model, job.train);
      job.model.seed = seed;
      job.train.seed = seed;
      jobs.push_back(std::move(job));
    }
  }
  ExperimentTable table;
  table.axis = axis_name(grid.axis);
  table.rows = run_grid(split, jobs, options, threads);
  table.summary = summarize(table.rows);
  return table;
}

ExperimentTable ablation_suite(const DataSplit& split, const ModelConfig& model,
                               const TrainConfig& train, const std::vector<std::uint64_t>& seeds,
                               const CvOptions& options, int threads,
                               const std::vector<Variant>& variants) {
  if (variants.empty()) throw ValidationError("ablation suite needs at least one variant");
  if (seeds.empty()) throw ValidationError("ablation suite needs at least one seed");
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    for (auto seed : seeds) {
      Job job{variant_name(variants[i]), static_cast<int>(i), model, train, seed};
      job.model.variant = variants[i];
      job.model.seed = seed;
      job.train.seed = seed;
      jobs.push_back(std::move(job));
    }
  }
  ExperimentTable table;
  table.axis = "variant";
  table.rows = run_grid(split, jobs, options, threads);
  table.summary = summarize(table.rows);
  return table;
}

}  // namespace cakt
