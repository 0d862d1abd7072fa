#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cakt {

/// One answered question in a student's sequence.
struct Interaction {
  std::string student_id;
  int concept_id = 0;
  int correct = 0;
  std::size_t step_index = 0;
};

/// A student's interaction sequence together with its one-hot encoding.
///
/// The one-hot vector of step i has length 2M and a single 1 at
/// `concept` when the response was wrong and at `M + concept` when it was
/// right. Only the index of the 1 (the token) is stored; `one_hot()`
/// materializes the vector.
class EncodedSequence {
 public:
  EncodedSequence(std::string student, std::vector<int> concepts, std::vector<int> responses,
                  int num_concepts);

  const std::string& student() const noexcept { return student_; }
  std::size_t size() const noexcept { return concepts_.size(); }
  int num_concepts() const noexcept { return num_concepts_; }
  const std::vector<int>& concepts() const noexcept { return concepts_; }
  const std::vector<int>& responses() const noexcept { return responses_; }

  /// Index of the single nonzero one-hot entry at `step`.
  std::size_t token(std::size_t step) const {
    return static_cast<std::size_t>(concepts_[step] + num_concepts_ * responses_[step]);
  }
  std::vector<std::uint8_t> one_hot(std::size_t step) const;
  std::vector<std::vector<std::uint8_t>> onehots() const;

  std::vector<Interaction> interactions() const;

 private:
  std::string student_;
  std::vector<int> concepts_;
  std::vector<int> responses_;
  int num_concepts_;
};

struct SequenceDataset {
  int num_concepts = 0;
  std::vector<EncodedSequence> sequences;
  std::string provenance;
  /// original concept id -> dense id in [0, num_concepts)
  std::map<long long, int> concept_mapping;

  std::size_t num_interactions() const;
};

enum class DatasetFormat { kAssistmentsCsv, kCanonicalJsonl };

DatasetFormat parse_format(const std::string& name);
std::string format_name(DatasetFormat format);

std::vector<std::uint8_t> encode_one_hot(int concept_id, int correct, int num_concepts);
/// Inverse of encode_one_hot; returns (concept, correct).
std::pair<int, int> decode_one_hot(std::span<const std::uint8_t> onehot, int num_concepts);

SequenceDataset parse_dataset(const std::filesystem::path& path, DatasetFormat format);
SequenceDataset parse_dataset(std::istream& in, DatasetFormat format, std::string provenance);

/// Splits sequences longer than `max_len` greedily from the left. Chunks
/// become independent students named "<student>#<chunk>".
SequenceDataset fold_long_sequences(const SequenceDataset& ds, std::size_t max_len = 200);

struct DataSplit {
  SequenceDataset test;
  /// (train, validation) pairs; the validation parts partition the non-test
  /// sequences.
  std::vector<std::pair<SequenceDataset, SequenceDataset>> cv_folds;
};

DataSplit split_train_test(const SequenceDataset& ds, double test_frac, int folds,
                           std::uint64_t seed);

/// Keeps at most `max_students` sequences, chosen uniformly without
/// replacement by `seed`, in their original order.
SequenceDataset subsample_students(const SequenceDataset& ds, std::size_t max_students,
                                   std::uint64_t seed);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Power-law curve parameters for one (student, concept) pair.
struct LearningCurve {
  double scale = 0.0;     // a
  double exponent = 0.0;  // b
};

struct SyntheticCorpus {
  SequenceDataset dataset;
  /// curves[s * M + c] drives student s on concept c.
  std::vector<LearningCurve> curves;
};

inline constexpr double kSyntheticEpsilon = 0.01;
inline constexpr Interval kDefaultDifficulty{0.2, 0.9};
inline constexpr Interval kDefaultLearnRate{0.2, 1.0};

/// P(error) at the n-th attempt (n >= 1): clamp(a * n^-b, eps, 1 - eps).
double learning_curve_error(const LearningCurve& curve, int attempt);

SyntheticCorpus generate_synthetic_corpus(int num_students, int num_concepts, int seq_len,
                                          std::uint64_t seed, Interval difficulty_range = kDefaultDifficulty,
                                          Interval learn_rate_range = kDefaultLearnRate);

SequenceDataset generate_synthetic(int num_students, int num_concepts, int seq_len,
                                   std::uint64_t seed, Interval difficulty_range = kDefaultDifficulty,
                                   Interval learn_rate_range = kDefaultLearnRate);

void write_canonical_jsonl(const SequenceDataset& ds, std::ostream& out);
void write_concept_mapping(const SequenceDataset& ds, std::ostream& out);

struct DatasetStats {
  int questions = 0;
  std::size_t students = 0;
  std::size_t interactions = 0;
  long long interactions_per_student = 0;  // rounded
};

DatasetStats dataset_stats(const SequenceDataset& ds);
std::string format_stats_line(const DatasetStats& stats);

}  // namespace cakt
