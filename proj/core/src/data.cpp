#include "cakt/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "cakt/error.hpp"
#include "cakt/rng.hpp"

namespace cakt {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename T>
bool parse_number(std::string_view text, T& value) {
  if (text.empty()) return false;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc{} && ptr == end;
}

SequenceDataset parse_assistments_csv(std::istream& in, std::string provenance) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  bool with_timestamp = false;

  struct RawRow {
    std::size_t student;
    long long concept_id;
    int correct;
  };
  std::vector<std::string> student_order;
  std::unordered_map<std::string, std::size_t> student_index;
  std::vector<RawRow> rows;

  while (std::getline(in, line)) {
    ++line_no;
    const auto content = trim(line);
    if (content.empty()) continue;
    auto fields = split_fields(content);
    if (!have_header) {
      const bool base = fields.size() >= 3 && fields[0] == "student_id" &&
                        fields[1] == "concept_id" && fields[2] == "correct";
      if (!base || fields.size() > 4 || (fields.size() == 4 && fields[3] != "timestamp")) {
        throw ParseError(line_no,
                         "expected header 'student_id,concept_id,correct[,timestamp]'");
      }
      with_timestamp = fields.size() == 4;
      have_header = true;
      continue;
    }
    const std::size_t expected = with_timestamp ? 4 : 3;
    if (fields.size() != expected) {
      throw ParseError(line_no, "expected " + std::to_string(expected) + " fields, found " +
                                    std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw ParseError(line_no, "missing student_id");
    if (fields[1].empty()) throw ValidationError("line " + std::to_string(line_no) + ": missing concept_id");
    long long concept_id = 0;
    if (!parse_number(fields[1], concept_id)) {
      throw ParseError(line_no, "concept_id '" + std::string(fields[1]) + "' is not an integer");
    }
    if (concept_id < 0) {
      throw ValidationError("line " + std::to_string(line_no) + ": negative concept_id " +
                            std::to_string(concept_id));
    }
    int correct = 0;
    if (!parse_number(fields[2], correct)) {
      throw ParseError(line_no, "correct '" + std::string(fields[2]) + "' is not an integer");
    }
    if (correct != 0 && correct != 1) {
      throw ValidationError("line " + std::to_string(line_no) + ": correct must be 0 or 1, got " +
                            std::to_string(correct));
    }
    if (with_timestamp && !fields[3].empty()) {
      double ts = 0.0;  // parsed for validation only; the model uses step order
      if (!parse_number(fields[3], ts)) {
        throw ParseError(line_no, "timestamp '" + std::string(fields[3]) + "' is not numeric");
      }
    }
    std::string sid(fields[0]);
    auto [it, inserted] = student_index.try_emplace(sid, student_order.size());
    if (inserted) student_order.push_back(sid);
    rows.push_back({it->second, concept_id, correct});
  }
  if (!have_header) throw ParseError(0, "empty file");
  if (rows.empty()) throw ParseError(0, "file contains a header but no interactions");

  SequenceDataset ds;
  ds.provenance = std::move(provenance);
  for (const auto& row : rows) ds.concept_mapping.emplace(row.concept_id, 0);
  int dense = 0;
  for (auto& [original, id] : ds.concept_mapping) id = dense++;
  ds.num_concepts = dense;

  std::vector<std::vector<int>> concepts(student_order.size());
  std::vector<std::vector<int>> responses(student_order.size());
  for (const auto& row : rows) {
    concepts[row.student].push_back(ds.concept_mapping.at(row.concept_id));
    responses[row.student].push_back(row.correct);
  }
  ds.sequences.reserve(student_order.size());
  for (std::size_t s = 0; s < student_order.size(); ++s) {
    ds.sequences.emplace_back(student_order[s], std::move(concepts[s]), std::move(responses[s]),
                              ds.num_concepts);
  }
  return ds;
}

SequenceDataset parse_canonical_jsonl(std::istream& in, std::string provenance) {
  using nlohmann::json;
  std::string line;
  std::size_t line_no = 0;
  SequenceDataset ds;
  ds.provenance = std::move(provenance);
  bool have_meta = false;

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(line_no, "expected a JSON object");
    if (!have_meta) {
      if (!obj.contains("M") || !obj["M"].is_number_integer()) {
        throw ParseError(line_no, "first line must be a metadata object with integer \"M\"");
      }
      ds.num_concepts = obj["M"].get<int>();
      if (ds.num_concepts < 1) {
        throw ValidationError("line " + std::to_string(line_no) + ": M must be positive");
      }
      if (obj.contains("provenance") && obj["provenance"].is_string()) {
        ds.provenance = obj["provenance"].get<std::string>();
      }
      for (int c = 0; c < ds.num_concepts; ++c) ds.concept_mapping.emplace(c, c);
      if (obj.contains("concept_mapping") && obj["concept_mapping"].is_object()) {
        ds.concept_mapping.clear();
        for (const auto& [key, value] : obj["concept_mapping"].items()) {
          long long original = 0;
          if (!parse_number(std::string_view(key), original) || !value.is_number_integer()) {
            throw ParseError(line_no, "malformed concept_mapping entry '" + key + "'");
          }
          ds.concept_mapping.emplace(original, value.get<int>());
        }
      }
      have_meta = true;
      continue;
    }
    if (!obj.contains("student") || !obj["student"].is_string() || !obj.contains("concepts") ||
        !obj["concepts"].is_array() || !obj.contains("responses") ||
        !obj["responses"].is_array()) {
      throw ParseError(line_no, "expected {\"student\": str, \"concepts\": [int], \"responses\": [int]}");
    }
    std::vector<int> concepts;
    std::vector<int> responses;
    for (const auto& c : obj["concepts"]) {
      if (!c.is_number_integer()) throw ParseError(line_no, "non-integer concept id");
      const auto value = c.get<long long>();
      if (value < 0 || value >= ds.num_concepts) {
        throw ValidationError("line " + std::to_string(line_no) + ": concept id " +
                              std::to_string(value) + " outside [0, " +
                              std::to_string(ds.num_concepts) + ")");
      }
      concepts.push_back(static_cast<int>(value));
    }
    for (const auto& r : obj["responses"]) {
      if (!r.is_number_integer()) throw ParseError(line_no, "non-integer response");
      const auto value = r.get<long long>();
      if (value != 0 && value != 1) {
        throw ValidationError("line " + std::to_string(line_no) +
                              ": response must be 0 or 1, got " + std::to_string(value));
      }
      responses.push_back(static_cast<int>(value));
    }
    if (concepts.size() != responses.size() || concepts.empty()) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": concepts and responses must be non-empty and of equal length");
    }
    ds.sequences.emplace_back(obj["student"].get<std::string>(), std::move(concepts),
                              std::move(responses), ds.num_concepts);
  }
  if (!have_meta) throw ParseError(0, "empty file");
  return ds;
}

}  // namespace

EncodedSequence::EncodedSequence(std::string student, std::vector<int> concepts,
                                 std::vector<int> responses, int num_concepts)
    : student_(std::move(student)),
      concepts_(std::move(concepts)),
      responses_(std::move(responses)),
      num_concepts_(num_concepts) {
  if (num_concepts_ < 1) throw ValidationError("number of concepts must be positive");
  if (concepts_.empty() || concepts_.size() != responses_.size()) {
    throw ValidationError("sequence '" + student_ +
                          "': concepts and responses must be non-empty and of equal length");
  }
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    if (concepts_[i] < 0 || concepts_[i] >= num_concepts_) {
      throw ValidationError("sequence '" + student_ + "': concept " +
                            std::to_string(concepts_[i]) + " outside [0, " +
                            std::to_string(num_concepts_) + ")");
    }
    if (responses_[i] != 0 && responses_[i] != 1) {
      throw ValidationError("sequence '" + student_ + "': response must be 0 or 1");
    }
  }
}

std::vector<std::uint8_t> EncodedSequence::one_hot(std::size_t step) const {
  return encode_one_hot(concepts_.at(step), responses_.at(step), num_concepts_);
}

std::vector<std::vector<std::uint8_t>> EncodedSequence::onehots() const {
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(one_hot(i));
  return out;
}

std::vector<Interaction> EncodedSequence::interactions() const {
  std::vector<Interaction> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) {
    out.push_back({student_, concepts_[i], responses_[i], i});
  }
  return out;
}

std::size_t SequenceDataset::num_interactions() const {
  std::size_t total = 0;
  for (const auto& seq : sequences) total += seq.size();
  return total;
}

DatasetFormat parse_format(const std::string& name) {
  if (name == "assistments_csv") return DatasetFormat::kAssistmentsCsv;
  if (name == "canonical_jsonl") return DatasetFormat::kCanonicalJsonl;
  throw ValidationError("unknown dataset format '" + name +
                        "' (expected assistments_csv or canonical_jsonl)");
}

std::string format_name(DatasetFormat format) {
  return format == DatasetFormat::kAssistmentsCsv ? "assistments_csv" : "canonical_jsonl";
}

std::vector<std::uint8_t> encode_one_hot(int concept_id, int correct, int num_concepts) {
  if (num_concepts < 1) throw ValidationError("number of concepts must be positive");
  if (concept_id < 0 || concept_id >= num_concepts) {
    throw ValidationError("concept id " + std::to_string(concept_id) + " outside [0, " +
                          std::to_string(num_concepts) + ")");
  }
  if (correct != 0 && correct != 1) throw ValidationError("correct must be 0 or 1");
  std::vector<std::uint8_t> out(2 * static_cast<std::size_t>(num_concepts), 0);
  out[static_cast<std::size_t>(concept_id + correct * num_concepts)] = 1;
  return out;
}

std::pair<int, int> decode_one_hot(std::span<const std::uint8_t> onehot, int num_concepts) {
  if (onehot.size() != 2 * static_cast<std::size_t>(num_concepts)) {
    throw ValidationError("one-hot vector has length " + std::to_string(onehot.size()) +
                          ", expected " + std::to_string(2 * num_concepts));
  }
  std::size_t hot = onehot.size();
  for (std::size_t i = 0; i < onehot.size(); ++i) {
    if (onehot[i] == 0) continue;
    if (onehot[i] != 1 || hot != onehot.size()) throw ValidationError("not a one-hot vector");
    hot = i;
  }
  if (hot == onehot.size()) throw ValidationError("not a one-hot vector");
  const int index = static_cast<int>(hot);
  return index < num_concepts ? std::pair{index, 0} : std::pair{index - num_concepts, 1};
}

SequenceDataset parse_dataset(const std::filesystem::path& path, DatasetFormat format) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset file '" + path.string() + "'");
  return parse_dataset(in, format, path.string());
}

SequenceDataset parse_dataset(std::istream& in, DatasetFormat format, std::string provenance) {
  return format == DatasetFormat::kAssistmentsCsv
             ? parse_assistments_csv(in, std::move(provenance))
             : parse_canonical_jsonl(in, std::move(provenance));
}

SequenceDataset fold_long_sequences(const SequenceDataset& ds, std::size_t max_len) {
  if (max_len < 2) throw ValidationError("max_len must be at least 2");
  SequenceDataset out;
  out.num_concepts = ds.num_concepts;
  out.provenance = ds.provenance;
  out.concept_mapping = ds.concept_mapping;
  for (const auto& seq : ds.sequences) {
    if (seq.size() <= max_len) {
      out.sequences.push_back(seq);
      continue;
    }
    std::size_t chunk = 0;
    for (std::size_t start = 0; start < seq.size(); start += max_len, ++chunk) {
      const std::size_t end = std::min(seq.size(), start + max_len);
      std::vector<int> concepts(seq.concepts().begin() + static_cast<std::ptrdiff_t>(start),
                                seq.concepts().begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<int> responses(seq.responses().begin() + static_cast<std::ptrdiff_t>(start),
                                 seq.responses().begin() + static_cast<std::ptrdiff_t>(end));
      out.sequences.emplace_back(seq.student() + "#" + std::to_string(chunk), std::move(concepts),
                                 std::move(responses), seq.num_concepts());
    }
  }
  return out;
}

namespace {

SequenceDataset select(const SequenceDataset& ds, std::vector<std::size_t> indices) {
  std::sort(indices.begin(), indices.end());
  SequenceDataset out;
  out.num_concepts = ds.num_concepts;
  out.provenance = ds.provenance;
  out.concept_mapping = ds.concept_mapping;
  out.sequences.reserve(indices.size());
  for (auto i : indices) out.sequences.push_back(ds.sequences[i]);
  return out;
}

}  // namespace

DataSplit split_train_test(const SequenceDataset& ds, double test_frac, int folds,
                           std::uint64_t seed) {
  if (!(test_frac >= 0.0 && test_frac < 1.0)) throw ValidationError("test_frac must lie in [0, 1)");
  if (folds < 2) throw ValidationError("need at least 2 cross-validation folds");
  const std::size_t n = ds.sequences.size();
  const auto test_count = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_frac));
  const std::size_t rest = n - test_count;
  if (rest < static_cast<std::size_t>(folds)) {
    throw ValidationError("too few sequences: " + std::to_string(n) + " sequences leave " +
                          std::to_string(rest) + " after the test hold-out, fewer than " +
                          std::to_string(folds) + " folds");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));

  DataSplit split;
  split.test = select(ds, {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_count)});

  const auto fold_count = static_cast<std::size_t>(folds);
  std::vector<std::vector<std::size_t>> fold_members(fold_count);
  std::size_t cursor = test_count;
  for (std::size_t f = 0; f < fold_count; ++f) {
    const std::size_t size = rest / fold_count + (f < rest % fold_count ? 1 : 0);
    fold_members[f].assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                           order.begin() + static_cast<std::ptrdiff_t>(cursor + size));
    cursor += size;
  }
  for (std::size_t f = 0; f < fold_count; ++f) {
    std::vector<std::size_t> train;
    for (std::size_t g = 0; g < fold_count; ++g) {
      if (g != f) train.insert(train.end(), fold_members[g].begin(), fold_members[g].end());
    }
    split.cv_folds.emplace_back(select(ds, std::move(train)), select(ds, fold_members[f]));
  }
  return split;
}

SequenceDataset subsample_students(const SequenceDataset& ds, std::size_t max_students,
                                   std::uint64_t seed) {
  if (ds.sequences.size() <= max_students) return ds;
  std::vector<std::size_t> order(ds.sequences.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));
  order.resize(max_students);
  return select(ds, std::move(order));
}

double learning_curve_error(const LearningCurve& curve, int attempt) {
  const double raw = curve.scale * std::pow(static_cast<double>(attempt), -curve.exponent);
  return std::clamp(raw, kSyntheticEpsilon, 1.0 - kSyntheticEpsilon);
}

SyntheticCorpus generate_synthetic_corpus(int num_students, int num_concepts, int seq_len,
                                          std::uint64_t seed, Interval difficulty_range,
                                          Interval learn_rate_range) {
  if (num_students < 1 || num_concepts < 1 || seq_len < 1) {
    throw ValidationError("synthetic generator counts must be positive");
  }
  if (!(difficulty_range.lo > 0.0 && difficulty_range.lo <= difficulty_range.hi &&
        std::isfinite(difficulty_range.hi))) {
    throw ValidationError("difficulty range must satisfy 0 < lo <= hi < inf");
  }
  if (!(learn_rate_range.lo > 0.0 && learn_rate_range.lo <= learn_rate_range.hi &&
        learn_rate_range.hi <= 2.0)) {
    throw ValidationError("learning-rate range must satisfy 0 < lo <= hi <= 2");
  }

  const auto m = static_cast<std::size_t>(num_concepts);
  SyntheticCorpus corpus;
  corpus.dataset.num_concepts = num_concepts;
  corpus.dataset.provenance = "synthetic:seed=" + std::to_string(seed);
  for (int c = 0; c < num_concepts; ++c) corpus.dataset.concept_mapping.emplace(c, c);
  corpus.curves.resize(static_cast<std::size_t>(num_students) * m);

  for (int s = 0; s < num_students; ++s) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    auto* curves = corpus.curves.data() + static_cast<std::size_t>(s) * m;
    for (std::size_t c = 0; c < m; ++c) {
      curves[c].scale = rng.uniform(difficulty_range.lo, difficulty_range.hi);
      curves[c].exponent = rng.uniform(learn_rate_range.lo, learn_rate_range.hi);
    }
    std::vector<int> attempts(m, 0);
    std::vector<int> concepts(static_cast<std::size_t>(seq_len));
    std::vector<int> responses(static_cast<std::size_t>(seq_len));
    for (std::size_t i = 0; i < concepts.size(); ++i) {
      const std::size_t c = rng.below(m);
      const double p_error = learning_curve_error(curves[c], ++attempts[c]);
      concepts[i] = static_cast<int>(c);
      responses[i] = rng.bernoulli(p_error) ? 0 : 1;
    }
    corpus.dataset.sequences.emplace_back("syn" + std::to_string(s), std::move(concepts),
                                          std::move(responses), num_concepts);
  }
  return corpus;
}

SequenceDataset generate_synthetic(int num_students, int num_concepts, int seq_len,
                                   std::uint64_t seed, Interval difficulty_range,
                                   Interval learn_rate_range) {
  return generate_synthetic_corpus(num_students, num_concepts, seq_len, seed, difficulty_range,
                                   learn_rate_range)
      .dataset;
}

void write_canonical_jsonl(const SequenceDataset& ds, std::ostream& out) {
  nlohmann::ordered_json meta;
  meta["M"] = ds.num_concepts;
  meta["format"] = "cakt-canonical";
  meta["version"] = 1;
  meta["provenance"] = ds.provenance;
  nlohmann::ordered_json mapping = nlohmann::ordered_json::object();
  for (const auto& [original, dense] : ds.concept_mapping) mapping[std::to_string(original)] = dense;
  meta["concept_mapping"] = mapping;
  out << meta.dump() << '\n';
  for (const auto& seq : ds.sequences) {
    nlohmann::ordered_json row;
    row["student"] = seq.student();
    row["concepts"] = seq.concepts();
    row["responses"] = seq.responses();
    out << row.dump() << '\n';
  }
}

void write_concept_mapping(const SequenceDataset& ds, std::ostream& out) {
  nlohmann::ordered_json mapping = nlohmann::ordered_json::object();
  for (const auto& [original, dense] : ds.concept_mapping) mapping[std::to_string(original)] = dense;
  out << mapping.dump(2) << '\n';
}

DatasetStats dataset_stats(const SequenceDataset& ds) {
  DatasetStats stats;
  stats.questions = ds.num_concepts;
  stats.students = ds.sequences.size();
  stats.interactions = ds.num_interactions();
  stats.interactions_per_student =
      stats.students == 0 ? 0
                          : std::llround(static_cast<double>(stats.interactions) /
                                         static_cast<double>(stats.students));
  return stats;
}

std::string format_stats_line(const DatasetStats& stats) {
  std::ostringstream os;
  os << stats.questions << ", " << stats.students << ", " << stats.interactions << ", "
     << stats.interactions_per_student;
  return os.str();
}

}  // namespace cakt
