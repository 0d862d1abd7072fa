#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cakt/batch.hpp"
#include "cakt/conv3d.hpp"
#include "cakt/parameters.hpp"
#include "cakt/tensor.hpp"

namespace cakt {

enum class Variant {
  kCakt,
  kDktBaseline,
  kLstmLc,
  kFcLc,
  kC2dLc,
  kSaLc,
  kNoExpDecay,
  kFcPooling,
  kFcOutput,
  kMeanFusion,
};

std::string variant_name(Variant variant);
/// Accepts the names printed by variant_name plus ORIG_CAKT for kCakt.
Variant parse_variant(const std::string& name);
/// The eight ablations followed by the full model.
std::vector<Variant> ablation_variants();

/// Model hyperparameters. embed_dim (d_e) and hidden_dim (d_h) default to H*W
/// when left at 0; any explicit value must equal H*W.
struct ModelConfig {
  int num_concepts = 0;  // M
  int k = 6;
  int height = 17;
  int width = 17;
  int embed_dim = 0;
  int hidden_dim = 0;
  Variant variant = Variant::kCakt;
  std::uint64_t seed = 0;

  int d_e() const noexcept { return embed_dim > 0 ? embed_dim : height * width; }
  int d_h() const noexcept { return hidden_dim > 0 ? hidden_dim : d_e(); }

  /// Every violated constraint, empty when valid.
  std::vector<std::string> violations() const;
  void validate() const;
};

/// Output of the fusion gate for one prediction.
struct FusionResult {
  std::vector<double> gate_m;  // z1
  std::vector<double> gate_h;  // z2
  std::vector<double> fused;
};

/// z1 = sigmoid([m, h] W1 + b1), z2 = sigmoid([m, h] W2 + b2),
/// fused = z1 * m + z2 * h. W1 and W2 are (2d x d), row-major.
FusionResult fuse(std::span<const double> m, std::span<const double> h,
                  std::span<const double> w1, std::span<const double> b1,
                  std::span<const double> w2, std::span<const double> b2);

/// Mean over the time axis of a 1 x k x H x W (or k x H x W) tensor, flattened
/// row-major to length H*W.
std::vector<double> global_time_pool(const Tensor& tensor);

struct ForwardOptions {
  Mode mode = Mode::kEval;
  bool update_running_stats = false;
  bool record_mastery = false;    // full y_t per prediction
  bool record_internals = false;  // m_t, h_t, gates, fused state per prediction
  bool keep_tape = false;         // required before backward()
};

/// Per-prediction outputs of one batch, laid out rows x (max_len - 1). Entry
/// (r, t) predicts step t + 1 of row r from steps 0..t.
struct BatchPrediction {
  std::size_t rows = 0;
  std::size_t steps = 0;
  std::vector<double> probabilities;
  std::vector<double> logits;
  std::vector<int> target_concepts;
  std::vector<int> labels;
  std::vector<std::uint8_t> mask;
  /// Flat index (r * steps + t) of every unmasked prediction, in the order the
  /// model processed them.
  std::vector<std::size_t> order;

  // Filled on request, one row per entry of `order`.
  std::vector<std::vector<double>> mastery;
  std::vector<std::vector<double>> concept_state;  // m_t
  std::vector<std::vector<double>> overall_state;  // h_t
  std::vector<std::vector<double>> gate_m;
  std::vector<std::vector<double>> gate_h;
  std::vector<std::vector<double>> fused_state;

  std::size_t count() const noexcept { return order.size(); }
};

/// Predictions for a single sequence.
struct PredictionTrace {
  std::vector<double> probabilities;  // p_{t+1}
  std::vector<int> target_concepts;
  std::vector<int> labels;
  std::vector<std::uint8_t> mask;
  std::vector<std::vector<double>> mastery;  // y_t, (T-1) x M
};

/// The knowledge-tracing network and all of its ablation variants.
class Model {
 public:
  explicit Model(const ModelConfig& config);
  ~Model();
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return config_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  /// Re-draws all parameters from `seed`.
  void initialize(std::uint64_t seed);

  /// Affine embedding of a 2M one-hot (or all-zero) vector.
  std::vector<double> embed(std::span<const std::uint8_t> onehot) const;

  BatchPrediction forward(const BatchedSequences& batch, const ForwardOptions& options);

  /// Back-propagates d(loss)/d(logit) for each entry of the last forward's
  /// `order`, accumulating into parameter gradients. Requires keep_tape.
  void backward(std::span<const double> grad_logits);

  /// Eval-mode forward over one sequence, recording y_t.
  PredictionTrace predict(const EncodedSequence& sequence);

  /// Current decay constant; 0 for variants without decay.
  double theta() const;
  bool has_decay() const noexcept;

  /// Overrides the fusion gates with the constant 0.5 (as MEAN_FUSION does).
  void set_fusion_frozen(bool frozen) noexcept { fusion_frozen_ = frozen; }

 private:
  struct Tape;
  struct Layers;

  ModelConfig config_;
  ParameterSet params_;
  std::unique_ptr<Layers> layers_;
  std::unique_ptr<Tape> tape_;
  bool fusion_frozen_ = false;
};

std::unique_ptr<Model> build_variant(const ModelConfig& config);

}  // namespace cakt
