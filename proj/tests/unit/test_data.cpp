#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "cakt/data.hpp"
#include "cakt/error.hpp"
#include "cakt/rng.hpp"
#include "support.hpp"

namespace cakt {
namespace {

SequenceDataset parse_csv(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in, DatasetFormat::kAssistmentsCsv, "inline");
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
  Rng rng(3);
  std::set<std::size_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = rng.below(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng rng(9);
  std::vector<int> items(50);
  std::iota(items.begin(), items.end(), 0);
  rng.shuffle(std::span<int>(items));
  auto sorted = items;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Rng, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 1), derive_seed(2, 1));
  EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
}

TEST(OneHot, ExamplesMatchLayout) {
  EXPECT_EQ(encode_one_hot(1, 1, 3), (std::vector<std::uint8_t>{0, 0, 0, 0, 1, 0}));
  EXPECT_EQ(encode_one_hot(0, 0, 3), (std::vector<std::uint8_t>{1, 0, 0, 0, 0, 0}));
  EXPECT_THROW(encode_one_hot(3, 0, 3), ValidationError);
  EXPECT_THROW(encode_one_hot(-1, 0, 3), ValidationError);
  EXPECT_THROW(encode_one_hot(0, 2, 3), ValidationError);
}

TEST(OneHot, RoundTripsForEveryConceptAndResponse) {
  for (int m : {1, 2, 7}) {
    for (int c = 0; c < m; ++c) {
      for (int a : {0, 1}) {
        const auto v = encode_one_hot(c, a, m);
        ASSERT_EQ(v.size(), static_cast<std::size_t>(2 * m));
        EXPECT_EQ(std::count(v.begin(), v.end(), 1), 1);
        EXPECT_EQ(decode_one_hot(v, m), std::make_pair(c, a));
      }
    }
  }
}

TEST(OneHot, SequenceTokensAgreeWithEncoding) {
  EncodedSequence seq("s", {2, 0, 1}, {1, 0, 1}, 3);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto v = seq.one_hot(t);
    EXPECT_EQ(v, encode_one_hot(seq.concepts()[t], seq.responses()[t], 3));
    EXPECT_EQ(v[seq.token(t)], 1);
  }
}

TEST(ParseCsv, GroupsByStudentAndReindexesDensely) {
  const auto ds = parse_csv("student_id,concept_id,correct\ns1,7,1\ns1,7,0\ns2,3,1\n");
  EXPECT_EQ(ds.num_concepts, 2);
  ASSERT_EQ(ds.sequences.size(), 2u);
  EXPECT_EQ(ds.sequences[0].student(), "s1");
  EXPECT_EQ(ds.sequences[0].concepts(), (std::vector<int>{1, 1}));
  EXPECT_EQ(ds.sequences[0].responses(), (std::vector<int>{1, 0}));
  EXPECT_EQ(ds.sequences[1].concepts(), (std::vector<int>{0}));
  EXPECT_EQ(ds.concept_mapping.at(7), 1);
  EXPECT_EQ(ds.concept_mapping.at(3), 0);
}

TEST(ParseCsv, SingleRow) {
  const auto ds = parse_csv("student_id,concept_id,correct\ns1,0,1\n");
  EXPECT_EQ(ds.num_concepts, 1);
  ASSERT_EQ(ds.sequences.size(), 1u);
  EXPECT_EQ(ds.sequences[0].one_hot(0), (std::vector<std::uint8_t>{0, 1}));
}

TEST(ParseCsv, KeepsFileOrderWithinInterleavedStudents) {
  const auto ds = parse_csv(
      "student_id,concept_id,correct,timestamp\n"
      "a,1,1,10\nb,2,0,11\na,2,0,12\nb,1,1,13\na,1,1,14\n");
  ASSERT_EQ(ds.sequences.size(), 2u);
  EXPECT_EQ(ds.sequences[0].concepts(), (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(ds.sequences[0].responses(), (std::vector<int>{1, 0, 1}));
  EXPECT_EQ(ds.sequences[1].concepts(), (std::vector<int>{1, 0}));
}

TEST(ParseCsv, RejectsBadResponseAsValidationError) {
  try {
    parse_csv("student_id,concept_id,correct\ns1,0,1\ns1,0,2\n");
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(ParseCsv, RejectsNegativeAndMissingConcepts) {
  EXPECT_THROW(parse_csv("student_id,concept_id,correct\ns1,-4,1\n"), ValidationError);
  EXPECT_THROW(parse_csv("student_id,concept_id,correct\ns1,,1\n"), ValidationError);
}

TEST(ParseCsv, MalformedRowNamesItsLine) {
  try {
    parse_csv("student_id,concept_id,correct\ns1,0,1\ns1,0\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(ParseCsv, EmptyInputIsAnError) {
  EXPECT_THROW(parse_csv(""), ParseError);
  EXPECT_THROW(parse_csv("student_id,concept_id,correct\n"), ParseError);
}

TEST(ParseFile, MissingFileIsAnError) {
  EXPECT_ANY_THROW(parse_dataset("/nonexistent/cakt/data.csv", DatasetFormat::kAssistmentsCsv));
}

TEST(CanonicalJsonl, RoundTripsThroughWriter) {
  auto ds = test::random_dataset(12, 6, 1, 9, 4);
  std::ostringstream out;
  write_canonical_jsonl(ds, out);
  std::istringstream in(out.str());
  const auto back = parse_dataset(in, DatasetFormat::kCanonicalJsonl, "x");
  EXPECT_EQ(back.num_concepts, ds.num_concepts);
  ASSERT_EQ(back.sequences.size(), ds.sequences.size());
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    EXPECT_EQ(back.sequences[i].student(), ds.sequences[i].student());
    EXPECT_EQ(back.sequences[i].concepts(), ds.sequences[i].concepts());
    EXPECT_EQ(back.sequences[i].responses(), ds.sequences[i].responses());
  }
  std::ostringstream again;
  write_canonical_jsonl(back, again);
  EXPECT_EQ(again.str(), out.str());
}

TEST(CanonicalJsonl, RejectsOutOfRangeConcept) {
  std::istringstream in("{\"M\": 2}\n{\"student\": \"a\", \"concepts\": [2], \"responses\": [1]}\n");
  EXPECT_THROW(parse_dataset(in, DatasetFormat::kCanonicalJsonl, "x"), ValidationError);
}

TEST(CanonicalJsonl, RequiresMetadataLine) {
  std::istringstream in("{\"student\": \"a\", \"concepts\": [0], \"responses\": [1]}\n");
  EXPECT_THROW(parse_dataset(in, DatasetFormat::kCanonicalJsonl, "x"), ParseError);
}

TEST(Fold, SplitsGreedilyFromTheLeft) {
  std::vector<int> concepts(450);
  std::vector<int> responses(450);
  for (int i = 0; i < 450; ++i) {
    concepts[i] = i % 4;
    responses[i] = (i / 3) % 2;
  }
  SequenceDataset ds;
  ds.num_concepts = 4;
  ds.sequences.emplace_back("s", concepts, responses, 4);
  ds.sequences.emplace_back("short", std::vector<int>{1}, std::vector<int>{0}, 4);
  ds.sequences.emplace_back("exact", std::vector<int>(200, 2), std::vector<int>(200, 1), 4);

  const auto folded = fold_long_sequences(ds, 200);
  ASSERT_EQ(folded.sequences.size(), 5u);
  EXPECT_EQ(folded.sequences[0].size(), 200u);
  EXPECT_EQ(folded.sequences[1].size(), 200u);
  EXPECT_EQ(folded.sequences[2].size(), 50u);
  EXPECT_EQ(folded.sequences[3].size(), 1u);
  EXPECT_EQ(folded.sequences[4].size(), 200u);
  EXPECT_EQ(folded.num_interactions(), ds.num_interactions());

  std::vector<int> rejoined;
  std::vector<int> rejoined_responses;
  for (int i = 0; i < 3; ++i) {
    const auto& s = folded.sequences[i];
    rejoined.insert(rejoined.end(), s.concepts().begin(), s.concepts().end());
    rejoined_responses.insert(rejoined_responses.end(), s.responses().begin(),
                              s.responses().end());
  }
  EXPECT_EQ(rejoined, concepts);
  EXPECT_EQ(rejoined_responses, responses);
}

TEST(Fold, EverySequenceRespectsTheCap) {
  const auto ds = test::random_dataset(30, 5, 1, 120, 8);
  for (std::size_t cap : {2u, 7u, 50u}) {
    const auto folded = fold_long_sequences(ds, cap);
    EXPECT_EQ(folded.num_interactions(), ds.num_interactions());
    for (const auto& s : folded.sequences) EXPECT_LE(s.size(), cap);
  }
}

TEST(Split, SizesMatchArithmetic) {
  const auto ds = test::random_dataset(100, 4, 2, 5, 1);
  const auto split = split_train_test(ds, 0.2, 5, 11);
  EXPECT_EQ(split.test.sequences.size(), 20u);
  ASSERT_EQ(split.cv_folds.size(), 5u);
  for (const auto& [train, val] : split.cv_folds) {
    EXPECT_EQ(train.sequences.size(), 64u);
    EXPECT_EQ(val.sequences.size(), 16u);
  }
}

TEST(Split, IsAPartitionAndDeterministic) {
  const auto ds = test::random_dataset(53, 4, 2, 5, 2);
  const auto a = split_train_test(ds, 0.2, 5, 7);
  const auto b = split_train_test(ds, 0.2, 5, 7);

  std::multiset<std::string> test_names;
  for (const auto& s : a.test.sequences) test_names.insert(s.student());
  std::multiset<std::string> val_names;
  for (std::size_t f = 0; f < a.cv_folds.size(); ++f) {
    const auto& [train, val] = a.cv_folds[f];
    std::set<std::string> train_names;
    for (const auto& s : train.sequences) {
      train_names.insert(s.student());
      EXPECT_EQ(test_names.count(s.student()), 0u);
    }
    for (const auto& s : val.sequences) {
      val_names.insert(s.student());
      EXPECT_EQ(train_names.count(s.student()), 0u);
      EXPECT_EQ(test_names.count(s.student()), 0u);
    }
    EXPECT_EQ(train.sequences.size() + val.sequences.size() + a.test.sequences.size(), 53u);

    ASSERT_EQ(b.cv_folds[f].second.sequences.size(), val.sequences.size());
    for (std::size_t i = 0; i < val.sequences.size(); ++i) {
      EXPECT_EQ(b.cv_folds[f].second.sequences[i].student(), val.sequences[i].student());
    }
  }
  // Validation folds are disjoint and, with the test split, cover everything.
  std::set<std::string> unique_val(val_names.begin(), val_names.end());
  EXPECT_EQ(unique_val.size(), val_names.size());
  EXPECT_EQ(val_names.size() + test_names.size(), 53u);
}

TEST(Split, TooFewSequencesIsAnError) {
  const auto ds = test::random_dataset(4, 3, 2, 3, 1);
  EXPECT_ANY_THROW(split_train_test(ds, 0.2, 5, 1));
}

TEST(Subsample, KeepsOriginalOrder) {
  const auto ds = test::random_dataset(40, 3, 2, 3, 1);
  const auto sub = subsample_students(ds, 10, 5);
  ASSERT_EQ(sub.sequences.size(), 10u);
  std::size_t cursor = 0;
  for (const auto& s : sub.sequences) {
    while (cursor < ds.sequences.size() && ds.sequences[cursor].student() != s.student()) ++cursor;
    ASSERT_LT(cursor, ds.sequences.size()) << "order not preserved at " << s.student();
  }
  EXPECT_EQ(subsample_students(ds, 100, 5).sequences.size(), 40u);
}

TEST(Synthetic, LearningCurveArithmetic) {
  const LearningCurve curve{0.5, 1.0};
  EXPECT_DOUBLE_EQ(learning_curve_error(curve, 1), 0.5);
  EXPECT_DOUBLE_EQ(learning_curve_error(curve, 2), 0.25);
  EXPECT_DOUBLE_EQ(learning_curve_error({5.0, 0.1}, 1), 1.0 - kSyntheticEpsilon);
  EXPECT_DOUBLE_EQ(learning_curve_error({0.5, 2.0}, 1000), kSyntheticEpsilon);
}

TEST(Synthetic, SameSeedGivesIdenticalCorpus) {
  std::ostringstream a;
  std::ostringstream b;
  write_canonical_jsonl(generate_synthetic(30, 5, 20, 99), a);
  write_canonical_jsonl(generate_synthetic(30, 5, 20, 99), b);
  EXPECT_EQ(a.str(), b.str());
  std::ostringstream c;
  write_canonical_jsonl(generate_synthetic(30, 5, 20, 100), c);
  EXPECT_NE(a.str(), c.str());
}

TEST(Synthetic, RejectsInvalidRanges) {
  EXPECT_ANY_THROW(generate_synthetic(5, 3, 10, 1, {0.0, 0.5}, {0.2, 1.0}));
  EXPECT_ANY_THROW(generate_synthetic(5, 3, 10, 1, {0.2, 0.5}, {0.2, 2.5}));
  EXPECT_ANY_THROW(generate_synthetic(0, 3, 10, 1));
}

// Monte-Carlo check of the generator: pool every (student, concept, attempt)
// and compare the empirical error rate per attempt with the mean of the
// per-pair curves it was drawn from.
TEST(Synthetic, EmpiricalErrorRateFollowsTheCurves) {
  const int students = 10000;
  const int m = 4;
  const auto corpus = generate_synthetic_corpus(students, m, 24, 2024, {0.5, 0.5}, {1.0, 1.0});
  const int max_attempt = 4;
  std::vector<double> errors(max_attempt + 1, 0.0);
  std::vector<double> expected(max_attempt + 1, 0.0);
  std::vector<double> counts(max_attempt + 1, 0.0);
  for (int s = 0; s < students; ++s) {
    const auto& seq = corpus.dataset.sequences[s];
    std::vector<int> attempts(m, 0);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const int c = seq.concepts()[t];
      const int n = ++attempts[c];
      if (n > max_attempt) continue;
      errors[n] += seq.responses()[t] == 0 ? 1.0 : 0.0;
      expected[n] += learning_curve_error(corpus.curves[s * m + c], n);
      counts[n] += 1.0;
    }
  }
  for (int n = 1; n <= max_attempt; ++n) {
    EXPECT_NEAR(errors[n] / counts[n], 0.5 / n, 0.02) << "attempt " << n;
    EXPECT_NEAR(expected[n] / counts[n], 0.5 / n, 1e-12);
  }
  for (int n = 2; n <= max_attempt; ++n) EXPECT_LT(errors[n] / counts[n], errors[n - 1] / counts[n - 1]);
}

TEST(Stats, FormatsTableRow) {
  EXPECT_EQ(format_stats_line({110, 4151, 325637, 78}), "110, 4151, 325637, 78");
}

TEST(Stats, RoundsInteractionsPerStudent) {
  SequenceDataset ds;
  ds.num_concepts = 3;
  ds.sequences.emplace_back("a", std::vector<int>{0, 1, 2}, std::vector<int>{1, 1, 0}, 3);
  ds.sequences.emplace_back("b", std::vector<int>{0, 1, 2, 0}, std::vector<int>{1, 0, 0, 1}, 3);
  const auto stats = dataset_stats(ds);
  EXPECT_EQ(stats.questions, 3);
  EXPECT_EQ(stats.students, 2u);
  EXPECT_EQ(stats.interactions, 7u);
  EXPECT_EQ(stats.interactions_per_student, 4);  // 3.5 rounds half away from zero
}

}  // namespace
}  // namespace cakt
