#include <gtest/gtest.h>

#include <cmath>

#include "cakt/batch.hpp"
#include "cakt/error.hpp"
#include "cakt/model.hpp"
#include "support.hpp"

namespace cakt {
namespace {

// Copies every tensor of `from` whose name also exists in `to`.
void copy_shared_parameters(const Model& from, Model& to) {
  for (auto& p : to.parameters()) {
    if (const auto* src = from.parameters().find(p.name)) p.value = src->value;
  }
}

BatchPrediction eval_forward(Model& model, const BatchedSequences& batch, bool internals = false) {
  ForwardOptions options;
  options.mode = Mode::kEval;
  options.record_internals = internals;
  options.record_mastery = internals;
  return model.forward(batch, options);
}

std::vector<Variant> all_variants() {
  auto v = ablation_variants();
  v.push_back(Variant::kDktBaseline);
  return v;
}

TEST(Variants, NamesRoundTrip) {
  for (auto v : all_variants()) EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_EQ(parse_variant("ORIG_CAKT"), Variant::kCakt);
  EXPECT_THROW(parse_variant("RESNET"), ValidationError);
}

TEST(Variants, AblationSuiteHasNineEntriesEndingWithFullModel) {
  const auto v = ablation_variants();
  ASSERT_EQ(v.size(), 9u);
  EXPECT_EQ(v.back(), Variant::kCakt);
}

TEST(ModelConfig, DerivedDimensions) {
  ModelConfig c;
  c.num_concepts = 110;
  c.k = 6;
  c.height = 17;
  c.width = 17;
  EXPECT_EQ(c.d_e(), 289);
  EXPECT_EQ(c.d_h(), 289);
  EXPECT_TRUE(c.violations().empty());
}

TEST(ModelConfig, EnumeratesEveryViolation) {
  ModelConfig c;
  c.num_concepts = 0;
  c.k = 0;
  c.height = 18;
  c.width = 17;
  c.embed_dim = 300;
  c.hidden_dim = 289;
  const auto v = c.violations();
  EXPECT_GE(v.size(), 4u);
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(ModelConfig, RejectsHiddenDifferentFromEmbedding) {
  ModelConfig c = test::tiny_config();
  c.hidden_dim = 17;
  EXPECT_FALSE(c.violations().empty());
}

TEST(Fuse, ZeroParametersAverage) {
  const std::vector<double> m{1.0, -2.0};
  const std::vector<double> h{3.0, 4.0};
  const std::vector<double> w(8, 0.0);
  const std::vector<double> b(2, 0.0);
  const auto r = fuse(m, h, w, b, w, b);
  EXPECT_EQ(r.fused, (std::vector<double>{2.0, 1.0}));
  EXPECT_EQ(r.gate_m, (std::vector<double>{0.5, 0.5}));
}

TEST(Fuse, SaturatedGatesSelectConceptState) {
  const std::vector<double> m{1.5, -0.25};
  const std::vector<double> h{3.0, 4.0};
  const std::vector<double> w(8, 0.0);
  const auto r = fuse(m, h, w, std::vector<double>(2, 800.0), w, std::vector<double>(2, -800.0));
  EXPECT_EQ(r.fused, m);
}

TEST(Fuse, ZeroStatesGiveZero) {
  Rng rng(1);
  std::vector<double> w1(18);
  std::vector<double> w2(18);
  for (auto& x : w1) x = rng.normal();
  for (auto& x : w2) x = rng.normal();
  const std::vector<double> zero(3, 0.0);
  const auto r = fuse(zero, zero, w1, std::vector<double>{0.1, 0.2, 0.3}, w2, zero);
  EXPECT_EQ(r.fused, zero);
}

TEST(Fuse, GateDecompositionIsExact) {
  Rng rng(2);
  const std::size_t d = 5;
  std::vector<double> m(d), h(d), w1(2 * d * d), w2(2 * d * d), b1(d), b2(d);
  for (auto* v : {&m, &h, &w1, &w2, &b1, &b2}) {
    for (auto& x : *v) x = rng.uniform(-1.0, 1.0);
  }
  const auto r = fuse(m, h, w1, b1, w2, b2);
  for (std::size_t j = 0; j < d; ++j) {
    EXPECT_EQ(r.fused[j] - r.gate_m[j] * m[j] - r.gate_h[j] * h[j], 0.0);
    EXPECT_GT(r.gate_m[j], 0.0);
    EXPECT_LT(r.gate_h[j], 1.0);
  }
}

TEST(Fuse, RejectsLengthMismatch) {
  const std::vector<double> m(2, 0.0);
  const std::vector<double> h(3, 0.0);
  const std::vector<double> w(8, 0.0);
  EXPECT_THROW(fuse(m, h, w, m, w, m), ValidationError);
}

TEST(TimePool, AveragesSlices) {
  Tensor t({1, 2, 2, 2});
  const double values[] = {1, 3, 2, 4, 3, 5, 4, 6};
  for (std::size_t i = 0; i < 8; ++i) t[i] = values[i];
  EXPECT_EQ(global_time_pool(t), (std::vector<double>{2, 4, 3, 5}));
}

TEST(TimePool, IdenticalAndZeroSlices) {
  Tensor t({3, 2, 2});
  for (std::size_t i = 0; i < 12; ++i) t[i] = static_cast<double>(i % 4) + 0.5;
  EXPECT_EQ(global_time_pool(t), (std::vector<double>{0.5, 1.5, 2.5, 3.5}));
  EXPECT_EQ(global_time_pool(Tensor({1, 4, 3, 3})), std::vector<double>(9, 0.0));
  EXPECT_THROW(global_time_pool(Tensor({2, 4, 3, 3})), ValidationError);
}

TEST(Embed, LengthAndLinearity) {
  ModelConfig c;
  c.num_concepts = 4;
  c.k = 2;
  c.height = 17;
  c.width = 17;
  c.variant = Variant::kDktBaseline;
  Model model(c);
  const auto e = model.embed(encode_one_hot(1, 1, 4));
  EXPECT_EQ(e.size(), 289u);
  EXPECT_EQ(model.embed(encode_one_hot(1, 1, 4)), e);
  model.parameters().find("embedding.bias")->value.fill(0.0);
  EXPECT_EQ(model.embed(std::vector<std::uint8_t>(8, 0)), std::vector<double>(289, 0.0));
  EXPECT_THROW(model.embed(std::vector<std::uint8_t>(3, 0)), ValidationError);
}

TEST(Model, DktHasFewerParametersAndNoDecay) {
  Model cakt(test::tiny_config(Variant::kCakt));
  Model dkt(test::tiny_config(Variant::kDktBaseline));
  EXPECT_LT(dkt.parameters().trainable_count(), cakt.parameters().trainable_count());
  EXPECT_FALSE(dkt.has_decay());
  EXPECT_EQ(dkt.parameters().find("decay.theta_raw"), nullptr);
  EXPECT_NEAR(cakt.theta(), 3.0, 1e-9);  // initialized at k
}

TEST(Model, EveryVariantPredictsInOpenUnitInterval) {
  const auto ds = test::random_dataset(4, 5, 2, 9, 3);
  const auto batch = make_batch(ds.sequences);
  for (auto v : all_variants()) {
    Model model(test::tiny_config(v));
    const auto pred = eval_forward(model, batch);
    EXPECT_EQ(pred.rows, 4u);
    EXPECT_EQ(pred.steps, batch.max_len - 1);
    std::size_t expected = 0;
    for (const auto& s : ds.sequences) expected += s.size() - 1;
    EXPECT_EQ(pred.count(), expected) << variant_name(v);
    for (auto cell : pred.order) {
      EXPECT_GT(pred.probabilities[cell], 0.0);
      EXPECT_LT(pred.probabilities[cell], 1.0);
    }
  }
}

TEST(Model, TwoStepsGiveOnePrediction) {
  Model model(test::tiny_config());
  const EncodedSequence seq("s", {1, 1}, {0, 1}, 5);
  const auto trace = model.predict(seq);
  ASSERT_EQ(trace.probabilities.size(), 1u);
  EXPECT_EQ(trace.labels[0], 1);
  EXPECT_EQ(trace.target_concepts[0], 1);
  ASSERT_EQ(trace.mastery.size(), 1u);
  EXPECT_EQ(trace.mastery[0].size(), 5u);
  // The prediction is read from y_t at the next concept.
  EXPECT_EQ(trace.mastery[0][1], trace.probabilities[0]);
}

TEST(Model, EvalForwardIsBitwiseDeterministic) {
  const auto ds = test::random_dataset(3, 5, 4, 12, 8);
  const auto batch = make_batch(ds.sequences);
  for (auto v : all_variants()) {
    Model model(test::tiny_config(v));
    const auto a = eval_forward(model, batch);
    const auto b = eval_forward(model, batch);
    EXPECT_EQ(a.probabilities, b.probabilities) << variant_name(v);
  }
}

// Prediction t (for step t+1) must not see the response at t+1 nor anything
// after it.
TEST(Model, PredictionsAreCausal) {
  Rng rng(44);
  for (auto v : all_variants()) {
    Model model(test::tiny_config(v));
    const auto base = test::random_dataset(1, 5, 10, 10, 9).sequences[0];
    const auto reference = model.predict(base);
    for (std::size_t t = 0; t + 1 < base.size(); ++t) {
      auto concepts = base.concepts();
      auto responses = base.responses();
      responses[t + 1] = 1 - responses[t + 1];
      for (std::size_t s = t + 2; s < base.size(); ++s) {
        concepts[s] = static_cast<int>(rng.below(5));
        responses[s] = static_cast<int>(rng.below(2));
      }
      const auto changed = model.predict(EncodedSequence("s", concepts, responses, 5));
      for (std::size_t u = 0; u <= t; ++u) {
        EXPECT_EQ(changed.probabilities[u], reference.probabilities[u])
            << variant_name(v) << " t=" << t << " u=" << u;
      }
    }
  }
}

TEST(Model, PaddingDoesNotChangePredictions) {
  const auto ds = test::random_dataset(3, 5, 3, 8, 12);
  for (auto v : all_variants()) {
    Model model(test::tiny_config(v));
    const auto tight = eval_forward(model, make_batch(ds.sequences));
    const auto padded = eval_forward(model, make_batch(ds.sequences, 15));
    ASSERT_EQ(tight.count(), padded.count());
    for (std::size_t i = 0; i < tight.count(); ++i) {
      const std::size_t a = tight.order[i];
      const std::size_t b = padded.order[i];
      EXPECT_EQ(a / tight.steps, b / padded.steps);
      EXPECT_EQ(tight.probabilities[a], padded.probabilities[b]) << variant_name(v);
    }
  }
}

TEST(Model, FusedStateDecomposesThroughGates) {
  Model model(test::tiny_config());
  const auto ds = test::random_dataset(2, 5, 6, 6, 1);
  const auto pred = eval_forward(model, make_batch(ds.sequences), true);
  ASSERT_EQ(pred.fused_state.size(), pred.count());
  for (std::size_t i = 0; i < pred.count(); ++i) {
    for (std::size_t j = 0; j < 16; ++j) {
      EXPECT_EQ(pred.fused_state[i][j] - pred.gate_m[i][j] * pred.concept_state[i][j] -
                    pred.gate_h[i][j] * pred.overall_state[i][j],
                0.0);
    }
  }
}

TEST(Model, MeanFusionEqualsFrozenGates) {
  const auto ds = test::random_dataset(3, 5, 4, 9, 2);
  const auto batch = make_batch(ds.sequences);
  Model cakt(test::tiny_config(Variant::kCakt));
  Model mean(test::tiny_config(Variant::kMeanFusion));
  copy_shared_parameters(cakt, mean);
  cakt.set_fusion_frozen(true);
  const auto a = eval_forward(cakt, batch, true);
  const auto b = eval_forward(mean, batch, true);
  EXPECT_EQ(a.probabilities, b.probabilities);
  for (std::size_t i = 0; i < b.count(); ++i) {
    for (std::size_t j = 0; j < 16; ++j) {
      EXPECT_EQ(b.fused_state[i][j], 0.5 * (b.concept_state[i][j] + b.overall_state[i][j]));
    }
  }
}

TEST(Model, NoDecayEqualsInfiniteTimeConstant) {
  const auto ds = test::random_dataset(3, 5, 4, 9, 6);
  const auto batch = make_batch(ds.sequences);
  Model cakt(test::tiny_config(Variant::kCakt));
  Model plain(test::tiny_config(Variant::kNoExpDecay));
  copy_shared_parameters(cakt, plain);
  cakt.parameters().find("decay.theta_raw")->value[0] = 1e30;
  const auto a = eval_forward(cakt, batch);
  const auto b = eval_forward(plain, batch);
  EXPECT_EQ(a.probabilities, b.probabilities);
}

TEST(Model, RejectsBatchWithDifferentConceptCount) {
  Model model(test::tiny_config());
  const auto ds = test::random_dataset(2, 6, 3, 4, 1);
  EXPECT_THROW(eval_forward(model, make_batch(ds.sequences)), ValidationError);
}

TEST(Model, BackwardRequiresTape) {
  Model model(test::tiny_config());
  std::vector<double> grads(3, 0.0);
  EXPECT_THROW(model.backward(grads), ValidationError);
}

}  // namespace
}  // namespace cakt
