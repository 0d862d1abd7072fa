#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cakt/checkpoint.hpp"
#include "cakt/data.hpp"
#include "cakt/error.hpp"
#include "cakt/experiment.hpp"
#include "cakt/metrics.hpp"
#include "cakt/report.hpp"
#include "cakt/run_config.hpp"
#include "cakt/training.hpp"
#include "cakt/version.hpp"

namespace cakt::cli {

namespace {

namespace fs = std::filesystem;

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string percent(double auc) {
  if (std::isnan(auc)) return "failed";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * auc;
  return os.str();
}

/// State shared by every subcommand: resolved config, output bookkeeping and
/// the manifest written at the end.
struct Session {
  std::string command;
  RunConfig config;
  std::ostream& out;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  std::string started_at = utc_timestamp();
  std::vector<std::string> outputs;
  nlohmann::ordered_json results = nlohmann::ordered_json::object();

  Session(std::string name, std::ostream& stream) : command(std::move(name)), out(stream) {}

  fs::path out_dir() const { return fs::path(config.out_dir); }

  void record(const fs::path& path) {
    outputs.push_back(fs::relative(path, out_dir()).generic_string());
  }

  void write_text(const fs::path& name, const std::string& text) {
    write_text_file(out_dir() / name, text);
    record(out_dir() / name);
  }

  void write_manifest(const nlohmann::ordered_json& extra_inputs = {}) {
    write_text("config.ini", to_ini(config));
    nlohmann::ordered_json m;
    m["tool"] = "cakt";
    m["version"] = kVersion;
    m["command"] = command;
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [section, keys] : config_table(config)) {
      for (const auto& [key, value] : keys) cfg[section][key] = value;
    }
    m["config"] = cfg;
    if (!extra_inputs.is_null()) m["inputs"] = extra_inputs;
    m["seeds"] = config.seeds;
    m["results"] = results;
    m["outputs"] = outputs;
    m["started_at"] = started_at;
    m["wall_time_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text_file(out_dir() / "manifest.json", m.dump(2) + "\n");
  }
};

SequenceDataset load_dataset(const RunConfig& config) {
  auto ds = parse_dataset(config.data_path, config.format);
  ds = fold_long_sequences(ds, static_cast<std::size_t>(config.max_len));
  if (config.max_students > 0) {
    ds = subsample_students(ds, static_cast<std::size_t>(config.max_students), config.split_seed);
  }
  return ds;
}

DataSplit make_split(const SequenceDataset& ds, const RunConfig& config) {
  return split_train_test(ds, config.test_frac, config.folds, config.split_seed);
}

void print_table(std::ostream& out, const ExperimentTable& table) {
  out << std::left << std::setw(14) << table.axis << "AUC (%)  ok/failed\n";
  for (const auto& s : table.summary) {
    out << std::left << std::setw(14) << s.label << std::setw(9) << percent(s.mean_auc)
        << s.succeeded << '/' << s.failed << '\n';
  }
}

// ---------------------------------------------------------------- commands

struct IngestOptions {
  bool synthetic = false;
  int students = 2000;
  int concepts = 20;
  int length = 100;
  std::uint64_t synthetic_seed = 0;
};

void cmd_ingest(Session& s, const IngestOptions& opts) {
  const auto& c = s.config;
  std::vector<std::string> problems;
  if (!opts.synthetic) {
    if (c.data_path.empty()) {
      problems.push_back("ingest needs --path (or --synthetic)");
    } else if (!fs::is_regular_file(c.data_path)) {
      problems.push_back("input file '" + c.data_path + "' does not exist");
    }
  }
  if (c.max_len < 2) problems.push_back("max_len must be at least 2");
  if (c.out_dir.empty()) problems.push_back("out_dir must not be empty");
  if (!problems.empty()) {
    std::string msg = "invalid ingest arguments:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
  }

  SequenceDataset ds;
  std::string stem;
  nlohmann::ordered_json inputs;
  if (opts.synthetic) {
    ds = generate_synthetic(opts.students, opts.concepts, opts.length, opts.synthetic_seed);
    stem = "synthetic";
    inputs = {{"synthetic", true},
              {"students", opts.students},
              {"concepts", opts.concepts},
              {"length", opts.length},
              {"synthetic_seed", opts.synthetic_seed}};
  } else {
    ds = parse_dataset(c.data_path, c.format);
    stem = fs::path(c.data_path).stem().string();
  }
  ds = fold_long_sequences(ds, static_cast<std::size_t>(c.max_len));
  const auto stats = dataset_stats(ds);

  std::ostringstream canonical;
  write_canonical_jsonl(ds, canonical);
  std::ostringstream mapping;
  write_concept_mapping(ds, mapping);
  s.write_text(stem + ".jsonl", canonical.str());
  s.write_text(stem + ".mapping.json", mapping.str());

  s.out << "questions, students, interactions, interactions/student\n"
        << format_stats_line(stats) << '\n';
  s.results = {{"questions", stats.questions},
               {"students", stats.students},
               {"interactions", stats.interactions},
               {"interactions_per_student", stats.interactions_per_student}};
  s.write_manifest(inputs);
}

void cmd_train(Session& s) {
  require_valid(s.config, PathNeed::kDataset);
  const auto ds = load_dataset(s.config);
  const auto split = make_split(ds, s.config);
  auto model = s.config.model_config();
  model.num_concepts = ds.num_concepts;
  model.validate();

  int current_fold = -1;
  const auto observer = [&](const EpochRecord& r) {
    if (r.epoch == 1) ++current_fold;
    s.out << "fold " << current_fold << " epoch " << r.epoch << "  train_loss "
          << std::fixed << std::setprecision(4) << r.train_loss << "  val_loss " << r.val_loss
          << "  val_auc " << r.val_auc << "  lr " << std::setprecision(6) << r.lr << '\n'
          << std::defaultfloat;
  };
  auto cv = cross_validate(split, model, s.config.train, s.config.cv_options(), observer);
  const auto& outcomes = cv.folds;
  const auto& report = cv.report;
  std::size_t best = 0;
  nlohmann::ordered_json fold_results = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    const fs::path dir = "fold_" + std::to_string(o.fold);
    std::ostringstream history;
    write_history_csv(o.training.history, history);
    s.write_text(dir / "history.csv", history.str());
    s.write_text(dir / "loss_curve.svg", loss_curve_svg(o.training.history));
    s.write_text(dir / "checkpoint.ckpt", o.training.best.serialize());
    if (o.val_auc > outcomes[best].val_auc) best = i;
    fold_results.push_back({{"fold", o.fold},
                            {"best_epoch", o.training.best_epoch},
                            {"val_auc", o.val_auc},
                            {"test_auc", o.test_auc},
                            {"checkpoint_digest", o.training.best.digest()},
                            {"first_epoch_loss", o.training.history.front().train_loss}});
  }
  s.write_text("best.ckpt", outcomes[best].training.best.serialize());
  std::ostringstream eval;
  write_eval_csv({report}, eval);
  s.write_text("evaluation.csv", eval.str());

  s.out << "test AUC " << std::fixed << std::setprecision(4) << report.mean_auc << " +/- "
        << report.std_auc << " over " << report.fold_aucs.size() << " fold(s)\n"
        << std::defaultfloat;
  s.results = {{"num_concepts", ds.num_concepts},
               {"mean_test_auc", report.mean_auc},
               {"std_test_auc", report.std_auc},
               {"best_fold", outcomes[best].fold},
               {"folds", fold_results}};
  s.write_manifest();
}

void cmd_eval(Session& s) {
  require_valid(s.config, PathNeed::kCheckpoint);
  const auto checkpoint = Checkpoint::load(s.config.checkpoint);
  const auto ds = load_dataset(s.config);
  const auto split = make_split(ds, s.config);
  const auto report = evaluate(checkpoint, split.test, s.config.cv_options().dataset_tag);

  std::vector<std::vector<double>> heatmap;
  std::string title;
  auto model = restore_model(checkpoint);
  for (const auto& seq : split.test.sequences) {
    if (seq.size() < 2) continue;
    heatmap = knowledge_state_matrix(model->predict(seq), checkpoint.model.num_concepts);
    title = "knowledge state, student " + seq.student();
    break;
  }
  ReportInputs inputs;
  const std::vector<EvalReport> reports{report};
  inputs.evaluations = &reports;
  if (!heatmap.empty()) {
    inputs.heatmap = &heatmap;
    inputs.heatmap_title = title;
  }
  for (const auto& path : emit_reports(inputs, s.out_dir())) s.record(path);

  s.out << "test AUC " << std::fixed << std::setprecision(4) << report.mean_auc << " over "
        << report.n_predictions << " predictions\n"
        << std::defaultfloat;
  s.results = {{"auc", report.mean_auc},
               {"n_predictions", report.n_predictions},
               {"checkpoint_digest", checkpoint.digest()}};
  s.write_manifest();
}

void cmd_experiment(Session& s, bool is_sweep) {
  require_valid(s.config, PathNeed::kDataset);
  const auto ds = load_dataset(s.config);
  const auto split = make_split(ds, s.config);
  auto model = s.config.model_config();
  model.num_concepts = ds.num_concepts;
  const auto options = s.config.cv_options();
  const auto table =
      is_sweep ? sweep(split, s.config.sweep_grid(), model, s.config.train, s.config.seeds, options,
                       s.config.threads)
               : ablation_suite(split, model, s.config.train, s.config.seeds, options,
                                s.config.threads, s.config.variant_list());
  ReportInputs inputs;
  (is_sweep ? inputs.sweep : inputs.ablation) = &table;
  for (const auto& path : emit_reports(inputs, s.out_dir())) s.record(path);
  print_table(s.out, table);

  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (const auto& row : table.summary) {
    summary.push_back({{table.axis, row.label},
                       {"mean_auc", std::isnan(row.mean_auc) ? nlohmann::ordered_json(nullptr)
                                                             : nlohmann::ordered_json(row.mean_auc)},
                       {"failed", row.failed}});
  }
  s.results = {{"summary", summary}};
  s.write_manifest();
  for (const auto& row : table.rows) {
    if (row.failed) {
      s.out << "failed: " << table.axis << '=' << row.label << " seed " << row.seed << ": "
            << row.error << '\n';
    }
  }
}

struct ReportOptions {
  std::string from;
  std::string student;
};

void cmd_report(Session& s, const ReportOptions& opts) {
  const fs::path from(opts.from);
  if (opts.from.empty() || !fs::is_directory(from)) {
    throw ValidationError("report needs --from pointing at an existing run directory");
  }
  auto read = [](const fs::path& path, auto reader) {
    std::ifstream in(path);
    return reader(in);
  };
  std::optional<std::vector<EpochRecord>> history;
  std::optional<ExperimentTable> sweep_table;
  std::optional<ExperimentTable> ablation_table;
  for (const fs::path& candidate : {from / "history.csv", from / "fold_0" / "history.csv"}) {
    if (fs::is_regular_file(candidate)) {
      history = read(candidate, [](std::istream& in) { return read_history_csv(in); });
      break;
    }
  }
  if (fs::is_regular_file(from / "sweep.csv")) {
    sweep_table = read(from / "sweep.csv", [](std::istream& in) { return read_experiment_csv(in); });
  }
  if (fs::is_regular_file(from / "ablation.csv")) {
    ablation_table =
        read(from / "ablation.csv", [](std::istream& in) { return read_experiment_csv(in); });
  }

  std::vector<std::vector<double>> heatmap;
  std::string title;
  if (!s.config.checkpoint.empty()) {
    require_valid(s.config, PathNeed::kCheckpoint);
    const auto checkpoint = Checkpoint::load(s.config.checkpoint);
    const auto ds = load_dataset(s.config);
    const EncodedSequence* chosen = nullptr;
    for (const auto& seq : ds.sequences) {
      if (seq.size() < 2) continue;
      if (opts.student.empty() || seq.student() == opts.student) {
        chosen = &seq;
        break;
      }
    }
    if (chosen == nullptr) {
      throw ValidationError(opts.student.empty() ? "dataset has no sequence with two or more steps"
                                                 : "student '" + opts.student + "' not found");
    }
    auto model = restore_model(checkpoint);
    heatmap = knowledge_state_matrix(model->predict(*chosen), checkpoint.model.num_concepts);
    title = "knowledge state, student " + chosen->student();
  }

  ReportInputs inputs;
  if (history) inputs.history = &*history;
  if (sweep_table) inputs.sweep = &*sweep_table;
  if (ablation_table) inputs.ablation = &*ablation_table;
  if (!heatmap.empty()) {
    inputs.heatmap = &heatmap;
    inputs.heatmap_title = title;
  }
  for (const auto& path : emit_reports(inputs, s.out_dir())) {
    s.record(path);
    s.out << "wrote " << path.string() << '\n';
  }
  if (sweep_table) print_table(s.out, *sweep_table);
  if (ablation_table) print_table(s.out, *ablation_table);
  s.write_manifest({{"from", opts.from}, {"student", opts.student}});
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const Getenv& getenv) {
  CLI::App app{"Convolution-augmented knowledge tracing: ingest, train, evaluate and report"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  std::string config_file;
  std::vector<std::pair<const ConfigField*, std::string>> flag_values;
  IngestOptions ingest_opts;
  ReportOptions report_opts;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "INI config file with [data] [model] [train] [eval] [output]");
    for (const auto& field : config_fields()) {
      const ConfigField* f = &field;
      sub->add_option_function<std::string>(
             f->flag(), [&flag_values, f](const std::string& v) { flag_values.emplace_back(f, v); },
             f->help + " [" + f->section + "." + f->key + "]")
          ->group(f->section);
    }
  };

  auto* ingest = app.add_subcommand("ingest", "parse and fold a dataset into canonical JSONL");
  add_common(ingest);
  ingest->add_flag("--synthetic", ingest_opts.synthetic, "generate a learning-curve corpus instead");
  ingest->add_option("--students", ingest_opts.students, "synthetic students")->check(CLI::PositiveNumber);
  ingest->add_option("--concepts", ingest_opts.concepts, "synthetic concepts (M)")->check(CLI::PositiveNumber);
  ingest->add_option("--length", ingest_opts.length, "synthetic sequence length")->check(CLI::PositiveNumber);
  ingest->add_option("--synthetic-seed", ingest_opts.synthetic_seed, "synthetic corpus seed");
  auto* train_cmd = app.add_subcommand("train", "cross-validated training with checkpoints");
  add_common(train_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the test split");
  add_common(eval_cmd);
  auto* sweep_cmd = app.add_subcommand("sweep", "sensitivity sweep over k, batch_size or H");
  add_common(sweep_cmd);
  auto* ablate_cmd = app.add_subcommand("ablate", "train every model variant under shared seeds");
  add_common(ablate_cmd);
  auto* report_cmd = app.add_subcommand("report", "re-render plots and tables from a run directory");
  add_common(report_cmd);
  report_cmd->add_option("--from", report_opts.from, "run directory to read");
  report_cmd->add_option("--student", report_opts.student, "student for the knowledge-state heatmap");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidationFailure;
  }

  CLI::App* chosen = app.get_subcommands().front();
  Session session(chosen->get_name(), out);
  try {
    if (!config_file.empty()) apply_config_file(session.config, config_file);
    std::vector<std::string> problems;
    for (const auto& [field, value] : flag_values) {
      try {
        field->set(session.config, value);
      } catch (const std::exception& e) {
        problems.push_back(field->flag() + ": " + e.what());
      }
    }
    if (!problems.empty()) {
      std::string msg = "invalid arguments:";
      for (const auto& p : problems) msg += "\n  - " + p;
      throw ValidationError(msg);
    }
    apply_environment(session.config, getenv);
    apply_desk_scale(session.config);

    if (chosen == ingest) {
      cmd_ingest(session, ingest_opts);
    } else if (chosen == train_cmd) {
      cmd_train(session);
    } else if (chosen == eval_cmd) {
      cmd_eval(session);
    } else if (chosen == sweep_cmd) {
      cmd_experiment(session, true);
    } else if (chosen == ablate_cmd) {
      cmd_experiment(session, false);
    } else {
      cmd_report(session, report_opts);
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kValidationFailure;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kValidationFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kOk;
}

}  // namespace cakt::cli
