#include "cakt/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cakt/error.hpp"

namespace cakt {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_integer(const std::string& key, const std::string& text) {
  T value{};
  const auto s = trim(text);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ValidationError(key + ": '" + text + "' is not an integer");
  }
  return value;
}

double parse_double(const std::string& key, const std::string& text) {
  const auto s = trim(text);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(key + ": '" + text + "' is not a number");
  }
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto s = trim(text);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ValidationError(key + ": '" + text + "' is not a boolean");
}

// Shortest text that reads back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::ostringstream os;
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
  return os.str();
}

ConfigField int_field(std::string section, std::string key, std::string help, int RunConfig::*member) {
  const std::string k = key;
  return {std::move(section), std::move(key), std::move(help),
          [member, k](RunConfig& c, const std::string& v) { c.*member = parse_integer<int>(k, v); },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

ConfigField train_int(std::string key, std::string help, int TrainConfig::*member) {
  const std::string k = key;
  return {"train", std::move(key), std::move(help),
          [member, k](RunConfig& c, const std::string& v) { c.train.*member = parse_integer<int>(k, v); },
          [member](const RunConfig& c) { return std::to_string(c.train.*member); }};
}

ConfigField train_double(std::string key, std::string help, double TrainConfig::*member) {
  const std::string k = key;
  return {"train", std::move(key), std::move(help),
          [member, k](RunConfig& c, const std::string& v) { c.train.*member = parse_double(k, v); },
          [member](const RunConfig& c) { return format_double(c.train.*member); }};
}

std::vector<ConfigField> build_fields() {
  std::vector<ConfigField> f;
  f.push_back({"data", "path", "dataset file (assistments CSV or canonical JSONL)",
               [](RunConfig& c, const std::string& v) { c.data_path = trim(v); },
               [](const RunConfig& c) { return c.data_path; }});
  f.push_back({"data", "format", "assistments_csv or canonical_jsonl",
               [](RunConfig& c, const std::string& v) { c.format = parse_format(trim(v)); },
               [](const RunConfig& c) { return format_name(c.format); }});
  f.push_back(int_field("data", "max_len", "fold sequences longer than this", &RunConfig::max_len));
  f.push_back({"data", "test_frac", "fraction of sequences held out for testing",
               [](RunConfig& c, const std::string& v) { c.test_frac = parse_double("test_frac", v); },
               [](const RunConfig& c) { return format_double(c.test_frac); }});
  f.push_back(int_field("data", "folds", "cross-validation folds", &RunConfig::folds));
  f.push_back({"data", "split_seed", "seed of the test/fold split",
               [](RunConfig& c, const std::string& v) {
                 c.split_seed = parse_integer<std::uint64_t>("split_seed", v);
               },
               [](const RunConfig& c) { return std::to_string(c.split_seed); }});
  f.push_back(int_field("data", "max_students", "subsample to at most this many students (0 = all)",
                        &RunConfig::max_students));

  f.push_back({"model", "variant", "CAKT, DKT_BASELINE or an ablation name",
               [](RunConfig& c, const std::string& v) { c.variant = parse_variant(trim(v)); },
               [](const RunConfig& c) { return variant_name(c.variant); }});
  f.push_back(int_field("model", "k", "same-concept history length", &RunConfig::k));
  f.push_back(int_field("model", "H", "history tensor height", &RunConfig::height));
  f.push_back(int_field("model", "W", "history tensor width (0 = H)", &RunConfig::width));
  f.push_back(int_field("model", "d_e", "embedding size (0 = H*W)", &RunConfig::embed_dim));
  f.push_back(int_field("model", "d_h", "LSTM hidden size (0 = d_e)", &RunConfig::hidden_dim));

  f.push_back(train_double("lr", "initial learning rate", &TrainConfig::lr));
  f.push_back(train_double("lr_decay", "learning-rate factor per decay step", &TrainConfig::lr_decay));
  f.push_back(train_int("decay_every", "epochs between learning-rate decays", &TrainConfig::decay_every));
  f.push_back(train_double("l2", "decoupled weight decay", &TrainConfig::l2));
  f.push_back(train_int("batch_size", "sequences per batch", &TrainConfig::batch_size));
  f.push_back(train_int("epochs", "training epochs", &TrainConfig::epochs));
  f.push_back({"train", "seed", "model initialisation and batch-order seed",
               [](RunConfig& c, const std::string& v) {
                 c.train.seed = parse_integer<std::uint64_t>("seed", v);
               },
               [](const RunConfig& c) { return std::to_string(c.train.seed); }});
  f.push_back({"train", "early_stop_patience", "stop after this many epochs without improvement (0 = off)",
               [](RunConfig& c, const std::string& v) {
                 const int p = parse_integer<int>("early_stop_patience", v);
                 c.train.early_stop_patience = p > 0 ? std::optional<int>(p) : std::nullopt;
               },
               [](const RunConfig& c) {
                 return std::to_string(c.train.early_stop_patience.value_or(0));
               }});
  f.push_back(train_double("clip_norm", "global gradient-norm clip (0 = off)", &TrainConfig::clip_norm));

  f.push_back({"eval", "seeds", "comma-separated seeds for sweeps and ablations",
               [](RunConfig& c, const std::string& v) {
                 c.seeds.clear();
                 for (const auto& s : split_list(v)) c.seeds.push_back(parse_integer<std::uint64_t>("seeds", s));
               },
               [](const RunConfig& c) { return join(c.seeds); }});
  f.push_back(int_field("eval", "max_folds", "run only the first N folds (0 = all)", &RunConfig::max_folds));
  f.push_back({"eval", "sweep_axis", "k, batch_size or H",
               [](RunConfig& c, const std::string& v) { c.sweep_axis = parse_axis(trim(v)); },
               [](const RunConfig& c) { return axis_name(c.sweep_axis); }});
  f.push_back({"eval", "sweep_values", "comma-separated grid (empty = default grid)",
               [](RunConfig& c, const std::string& v) {
                 c.sweep_values.clear();
                 for (const auto& s : split_list(v)) c.sweep_values.push_back(parse_integer<int>("sweep_values", s));
               },
               [](const RunConfig& c) { return join(c.sweep_values); }});
  f.push_back({"eval", "variants", "comma-separated variants for ablate (empty = all nine)",
               [](RunConfig& c, const std::string& v) {
                 c.variants.clear();
                 for (const auto& s : split_list(v)) c.variants.push_back(parse_variant(s));
               },
               [](const RunConfig& c) {
                 std::vector<std::string> names;
                 for (auto v : c.variants) names.push_back(variant_name(v));
                 return join(names);
               }});
  f.push_back({"eval", "checkpoint", "checkpoint to evaluate",
               [](RunConfig& c, const std::string& v) { c.checkpoint = trim(v); },
               [](const RunConfig& c) { return c.checkpoint; }});
  f.push_back(int_field("eval", "threads", "parallel experiment jobs", &RunConfig::threads));

  f.push_back({"output", "out_dir", "output directory",
               [](RunConfig& c, const std::string& v) { c.out_dir = trim(v); },
               [](const RunConfig& c) { return c.out_dir; }});
  f.push_back({"output", "desk_scale", "cap students, epochs, folds, seeds and grids",
               [](RunConfig& c, const std::string& v) { c.desk_scale = parse_bool("desk_scale", v); },
               [](const RunConfig& c) { return std::string(c.desk_scale ? "true" : "false"); }});
  return f;
}

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.k = k;
  m.height = height;
  m.width = width > 0 ? width : height;
  m.embed_dim = embed_dim;
  m.hidden_dim = hidden_dim;
  m.variant = variant;
  m.seed = train.seed;
  return m;
}

CvOptions RunConfig::cv_options() const {
  CvOptions o;
  o.folds = folds;
  o.test_frac = test_frac;
  o.split_seed = split_seed;
  o.max_folds = max_folds;
  o.dataset_tag = data_path.empty() ? "dataset" : std::filesystem::path(data_path).stem().string();
  return o;
}

SweepGrid RunConfig::sweep_grid() const {
  if (sweep_values.empty()) return SweepGrid::defaults(sweep_axis);
  return {sweep_axis, sweep_values};
}

std::vector<Variant> RunConfig::variant_list() const {
  return variants.empty() ? ablation_variants() : variants;
}

std::string ConfigField::flag() const {
  std::string name = key;
  std::replace(name.begin(), name.end(), '_', '-');
  return "--" + name;
}

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = build_fields();
  return fields;
}

const ConfigField* find_field(const std::string& key) {
  for (const auto& f : config_fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const auto* field = find_field(key);
  if (field == nullptr) throw ValidationError("unknown config key '" + key + "'");
  field->set(config, value);
}

void apply_config_text(RunConfig& config, std::istream& in) {
  std::string line;
  std::string section;
  int line_no = 0;
  std::vector<std::string> problems;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') {
        problems.push_back(where + "unterminated section header");
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      const auto& fields = config_fields();
      if (std::none_of(fields.begin(), fields.end(),
                       [&](const ConfigField& f) { return f.section == section; })) {
        problems.push_back(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(where + "expected key = value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto* field = find_field(key);
    if (field == nullptr) {
      problems.push_back(where + "unknown key '" + key + "'");
      continue;
    }
    if (field->section != section) {
      problems.push_back(where + "key '" + key + "' belongs in [" + field->section + "]");
      continue;
    }
    try {
      field->set(config, value);
    } catch (const std::exception& e) {
      problems.push_back(where + e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid config file:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  apply_config_text(config, in);
}

void apply_environment(RunConfig& config,
                       const std::function<const char*(const char*)>& getenv) {
  if (const char* root = getenv("CAKT_OUTPUT_ROOT"); root != nullptr && *root != '\0') {
    const std::filesystem::path dir(config.out_dir);
    config.out_dir = (std::filesystem::path(root) / (dir.is_absolute() ? dir.relative_path() : dir)).string();
  }
  if (const char* threads = getenv("CAKT_THREADS"); threads != nullptr && *threads != '\0') {
    config.threads = parse_integer<int>("CAKT_THREADS", threads);
  }
}

void apply_desk_scale(RunConfig& config, const DeskScaleCaps& caps) {
  if (!config.desk_scale) return;
  if (config.max_students == 0 || config.max_students > caps.max_students) {
    config.max_students = caps.max_students;
  }
  config.train.epochs = std::min(config.train.epochs, caps.max_epochs);
  if (config.max_folds == 0 || config.max_folds > caps.max_folds) config.max_folds = caps.max_folds;
  if (config.seeds.size() > caps.max_seeds) config.seeds.resize(caps.max_seeds);
  if (config.sweep_values.empty()) config.sweep_values = SweepGrid::defaults(config.sweep_axis).values;
  if (config.sweep_values.size() > caps.max_grid_values) {
    // Keep the ends and the middle of the grid.
    std::vector<int> v = config.sweep_values;
    std::sort(v.begin(), v.end());
    std::vector<int> kept;
    const std::size_t n = caps.max_grid_values;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = n == 1 ? v.size() / 2 : i * (v.size() - 1) / (n - 1);
      if (kept.empty() || kept.back() != v[idx]) kept.push_back(v[idx]);
    }
    config.sweep_values = kept;
  }
}

std::vector<std::string> validate_run_config(const RunConfig& config, PathNeed need) {
  std::vector<std::string> out;
  auto model = config.model_config();
  model.num_concepts = 1;  // M comes from the dataset
  for (auto& p : model.violations()) out.push_back(std::move(p));
  for (auto& p : config.train.violations()) out.push_back(std::move(p));
  if (config.max_len < 2) out.push_back("max_len must be at least 2");
  if (!(config.test_frac > 0.0 && config.test_frac < 1.0)) out.push_back("test_frac must lie in (0, 1)");
  if (config.folds < 2) out.push_back("folds must be at least 2");
  if (config.max_students < 0) out.push_back("max_students must be non-negative");
  if (config.max_folds < 0) out.push_back("max_folds must be non-negative");
  if (config.max_folds > config.folds) out.push_back("max_folds cannot exceed folds");
  if (config.seeds.empty()) out.push_back("seeds must list at least one seed");
  if (config.threads < 1) out.push_back("threads must be at least 1");
  if (config.out_dir.empty()) out.push_back("out_dir must not be empty");
  for (int v : config.sweep_values) {
    if (v < 1) out.push_back("sweep_values must be positive (got " + std::to_string(v) + ")");
  }
  if (need == PathNeed::kDataset) {
    if (config.data_path.empty()) {
      out.push_back("data path is required (--path)");
    } else if (!std::filesystem::is_regular_file(config.data_path)) {
      out.push_back("data path '" + config.data_path + "' does not exist");
    }
  }
  if (need == PathNeed::kCheckpoint) {
    if (config.checkpoint.empty()) {
      out.push_back("checkpoint path is required (--checkpoint)");
    } else if (!std::filesystem::is_regular_file(config.checkpoint)) {
      out.push_back("checkpoint '" + config.checkpoint + "' does not exist");
    }
    if (config.data_path.empty()) {
      out.push_back("data path is required (--path)");
    } else if (!std::filesystem::is_regular_file(config.data_path)) {
      out.push_back("data path '" + config.data_path + "' does not exist");
    }
  }
  return out;
}

void require_valid(const RunConfig& config, PathNeed need) {
  const auto problems = validate_run_config(config, need);
  if (problems.empty()) return;
  std::string msg = "invalid configuration (" + std::to_string(problems.size()) + " problem" +
                    (problems.size() == 1 ? "" : "s") + "):";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ValidationError(msg);
}

std::map<std::string, std::map<std::string, std::string>> config_table(const RunConfig& config) {
  std::map<std::string, std::map<std::string, std::string>> out;
  for (const auto& f : config_fields()) out[f.section][f.key] = f.get(config);
  return out;
}

std::string to_ini(const RunConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : config_fields()) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get(config) << '\n';
  }
  return os.str();
}

}  // namespace cakt
