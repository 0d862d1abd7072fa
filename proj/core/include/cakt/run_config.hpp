#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "cakt/data.hpp"
#include "cakt/experiment.hpp"
#include "cakt/model.hpp"
#include "cakt/optim.hpp"

namespace cakt {

/// Everything a CLI run needs. Values resolve in the order defaults, config
/// file, command-line flags, environment (CAKT_OUTPUT_ROOT, CAKT_THREADS).
struct RunConfig {
  // [data]
  std::string data_path;
  DatasetFormat format = DatasetFormat::kCanonicalJsonl;
  int max_len = 200;
  double test_frac = 0.2;
  int folds = 5;
  std::uint64_t split_seed = 0;
  int max_students = 0;  // 0 keeps every student

  // [model]
  Variant variant = Variant::kCakt;
  int k = 6;
  int height = 17;
  int width = 0;  // 0 means square (W = H)
  int embed_dim = 0;
  int hidden_dim = 0;

  // [train]
  TrainConfig train;

  // [eval]
  std::vector<std::uint64_t> seeds{0};
  int max_folds = 0;
  SweepAxis sweep_axis = SweepAxis::kK;
  std::vector<int> sweep_values;  // empty means the default grid for the axis
  std::vector<Variant> variants;  // empty means the full ablation suite
  std::string checkpoint;
  int threads = 1;

  // [output]
  std::string out_dir = "runs";
  bool desk_scale = false;

  ModelConfig model_config() const;
  CvOptions cv_options() const;
  SweepGrid sweep_grid() const;
  std::vector<Variant> variant_list() const;
};

/// Limits applied when desk_scale is set.
struct DeskScaleCaps {
  int max_students = 500;
  int max_epochs = 5;
  int max_folds = 1;
  std::size_t max_seeds = 2;
  std::size_t max_grid_values = 3;
};

/// One settable key. Flags mirror keys: section.batch_size <-> --batch-size.
struct ConfigField {
  std::string section;
  std::string key;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;

  std::string flag() const;
};

const std::vector<ConfigField>& config_fields();
const ConfigField* find_field(const std::string& key);

/// Parses "[section]" headers and "key = value" lines; '#' and ';' start
/// comments. Unknown sections or keys are errors naming the line.
void apply_config_text(RunConfig& config, std::istream& in);
void apply_config_file(RunConfig& config, const std::filesystem::path& path);
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Reads CAKT_OUTPUT_ROOT and CAKT_THREADS through `getenv`.
void apply_environment(RunConfig& config,
                       const std::function<const char*(const char*)>& getenv);

void apply_desk_scale(RunConfig& config, const DeskScaleCaps& caps = {});

enum class PathNeed { kNone, kDataset, kCheckpoint };

/// All violated constraints at once.
std::vector<std::string> validate_run_config(const RunConfig& config, PathNeed need);
/// Throws ValidationError listing every violation.
void require_valid(const RunConfig& config, PathNeed need);

/// Resolved config as an INI document readable by apply_config_text.
std::string to_ini(const RunConfig& config);
/// section -> key -> value, for manifests.
std::map<std::string, std::map<std::string, std::string>> config_table(const RunConfig& config);

}  // namespace cakt
