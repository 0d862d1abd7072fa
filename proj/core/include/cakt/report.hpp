#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cakt/experiment.hpp"
#include "cakt/metrics.hpp"
#include "cakt/model.hpp"
#include "cakt/training.hpp"

namespace cakt {

// CSV writers. Numbers use fixed formatting so equal inputs give equal bytes.
void write_history_csv(const std::vector<EpochRecord>& history, std::ostream& out);
void write_sweep_csv(const ExperimentTable& table, std::ostream& out);
void write_ablation_csv(const ExperimentTable& table, std::ostream& out);
void write_eval_csv(const std::vector<EvalReport>& reports, std::ostream& out);
/// Table-shaped summary: label, mean AUC in percent, succeeded, failed.
void write_summary_csv(const ExperimentTable& table, std::ostream& out);

// Readers for the CSVs above, used to re-render reports from a run directory.
std::vector<EpochRecord> read_history_csv(std::istream& in);
/// Reads either the sweep or the ablation schema; summary rows are rebuilt.
ExperimentTable read_experiment_csv(std::istream& in);

/// y_t for one sequence as an M x (T - 1) matrix: row c is concept c, column t
/// is the state after step t.
std::vector<std::vector<double>> knowledge_state_matrix(const PredictionTrace& trace,
                                                        int num_concepts);

// SVG plots. All refuse empty inputs.
std::string loss_curve_svg(const std::vector<EpochRecord>& history);
std::string sweep_svg(const ExperimentTable& table);
std::string heatmap_svg(const std::vector<std::vector<double>>& matrix, const std::string& title);

/// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& text);

struct ReportInputs {
  const std::vector<EpochRecord>* history = nullptr;
  const ExperimentTable* sweep = nullptr;
  const ExperimentTable* ablation = nullptr;
  const std::vector<EvalReport>* evaluations = nullptr;
  const std::vector<std::vector<double>>* heatmap = nullptr;
  std::string heatmap_title = "knowledge state";
};

/// Writes every provided input as CSV plus its plot; returns the files written.
std::vector<std::filesystem::path> emit_reports(const ReportInputs& inputs,
                                                const std::filesystem::path& out_dir);

}  // namespace cakt
