#include "cakt/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cakt/attention.hpp"
#include "cakt/error.hpp"
#include "cakt/history.hpp"
#include "cakt/lstm.hpp"
#include "cakt/rng.hpp"

namespace cakt {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct VariantName {
  Variant variant;
  const char* name;
};

constexpr VariantName kVariantNames[] = {
    {Variant::kCakt, "CAKT"},
    {Variant::kDktBaseline, "DKT_BASELINE"},
    {Variant::kLstmLc, "LSTM_LC"},
    {Variant::kFcLc, "FC_LC"},
    {Variant::kC2dLc, "C2D_LC"},
    {Variant::kSaLc, "SA_LC"},
    {Variant::kNoExpDecay, "NO_EXP_DECAY"},
    {Variant::kFcPooling, "FC_POOLING"},
    {Variant::kFcOutput, "FC_OUTPUT"},
    {Variant::kMeanFusion, "MEAN_FUSION"},
};

bool uses_conv(Variant v) {
  switch (v) {
    case Variant::kCakt:
    case Variant::kC2dLc:
    case Variant::kNoExpDecay:
    case Variant::kFcPooling:
    case Variant::kFcOutput:
    case Variant::kMeanFusion:
      return true;
    default:
      return false;
  }
}

bool uses_decay(Variant v) { return uses_conv(v) && v != Variant::kNoExpDecay; }
bool uses_history(Variant v) { return v != Variant::kDktBaseline; }
bool uses_fusion_gate(Variant v) { return uses_history(v) && v != Variant::kMeanFusion; }
bool uses_output_lstm(Variant v) {
  return v != Variant::kDktBaseline && v != Variant::kFcOutput;
}

}  // namespace

std::string variant_name(Variant variant) {
  for (const auto& entry : kVariantNames) {
    if (entry.variant == variant) return entry.name;
  }
  return "UNKNOWN";
}

Variant parse_variant(const std::string& name) {
  if (name == "ORIG_CAKT") return Variant::kCakt;
  for (const auto& entry : kVariantNames) {
    if (name == entry.name) return entry.variant;
  }
  throw ValidationError("unknown model variant '" + name + "'");
}

std::vector<Variant> ablation_variants() {
  return {Variant::kLstmLc,     Variant::kFcLc,      Variant::kC2dLc,
          Variant::kSaLc,       Variant::kNoExpDecay, Variant::kFcPooling,
          Variant::kFcOutput,   Variant::kMeanFusion, Variant::kCakt};
}

std::vector<std::string> ModelConfig::violations() const {
  std::vector<std::string> out;
  if (num_concepts < 1) out.push_back("M (num_concepts) must be at least 1");
  if (k < 1) out.push_back("k must be at least 1");
  if (height < 1) out.push_back("H must be at least 1");
  if (width < 1) out.push_back("W must be at least 1");
  if (embed_dim != 0 && embed_dim != height * width) {
    out.push_back("d_e = " + std::to_string(embed_dim) + " must equal H*W = " +
                  std::to_string(height * width));
  }
  if (hidden_dim != 0 && hidden_dim != d_e()) {
    out.push_back("d_h = " + std::to_string(hidden_dim) + " must equal d_e = " +
                  std::to_string(d_e()));
  }
  return out;
}

void ModelConfig::validate() const {
  const auto problems = violations();
  if (problems.empty()) return;
  std::ostringstream os;
  os << "invalid model config:";
  for (const auto& p : problems) os << "\n  - " << p;
  throw ValidationError(os.str());
}

FusionResult fuse(std::span<const double> m, std::span<const double> h,
                  std::span<const double> w1, std::span<const double> b1,
                  std::span<const double> w2, std::span<const double> b2) {
  const std::size_t d = m.size();
  if (h.size() != d) {
    throw ValidationError("fusion inputs differ in length: " + std::to_string(d) + " vs " +
                          std::to_string(h.size()));
  }
  if (w1.size() != 2 * d * d || w2.size() != 2 * d * d || b1.size() != d || b2.size() != d) {
    throw ValidationError("fusion gate parameters do not match state length");
  }
  FusionResult out{std::vector<double>(b1.begin(), b1.end()),
                   std::vector<double>(b2.begin(), b2.end()), std::vector<double>(d)};
  for (std::size_t i = 0; i < 2 * d; ++i) {
    const double x = i < d ? m[i] : h[i - d];
    const double* r1 = w1.data() + i * d;
    const double* r2 = w2.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      out.gate_m[j] += x * r1[j];
      out.gate_h[j] += x * r2[j];
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    out.gate_m[j] = sigmoid(out.gate_m[j]);
    out.gate_h[j] = sigmoid(out.gate_h[j]);
    out.fused[j] = out.gate_m[j] * m[j] + out.gate_h[j] * h[j];
  }
  return out;
}

std::vector<double> global_time_pool(const Tensor& tensor) {
  std::size_t depth = 0;
  std::size_t plane = 0;
  if (tensor.rank() == 4) {
    if (tensor.dim(0) != 1) throw ValidationError("time pooling expects a single channel");
    depth = tensor.dim(1);
    plane = tensor.dim(2) * tensor.dim(3);
  } else if (tensor.rank() == 3) {
    depth = tensor.dim(0);
    plane = tensor.dim(1) * tensor.dim(2);
  } else {
    throw ValidationError("time pooling expects a 1 x k x H x W tensor");
  }
  std::vector<double> out(plane, 0.0);
  for (std::size_t i = 0; i < depth; ++i) {
    for (std::size_t p = 0; p < plane; ++p) out[p] += tensor[i * plane + p];
  }
  for (auto& v : out) v /= static_cast<double>(depth);
  return out;
}

// ---------------------------------------------------------------- layers

struct Model::Layers {
  Parameter* embed_weight = nullptr;  // d_e x 2M
  Parameter* embed_bias = nullptr;
  std::unique_ptr<Lstm> overall;

  std::unique_ptr<ConvStack> conv;
  Parameter* pool_weight = nullptr;  // d_e x (k*H*W)
  Parameter* pool_bias = nullptr;
  std::unique_ptr<Lstm> history_lstm;
  Parameter* history_fc_weight = nullptr;  // d_e x (k*d_e)
  Parameter* history_fc_bias = nullptr;
  std::unique_ptr<SelfAttentionPool> attention;
  Parameter* theta_raw = nullptr;

  Parameter* fusion_w1 = nullptr;  // 2d_e x d_e
  Parameter* fusion_b1 = nullptr;
  Parameter* fusion_w2 = nullptr;
  Parameter* fusion_b2 = nullptr;

  std::unique_ptr<Lstm> output_lstm;
  Parameter* out_weight = nullptr;  // M x d_h
  Parameter* out_bias = nullptr;
};

struct Model::Tape {
  ForwardOptions options;
  std::size_t steps = 0;
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> predictions;  // per row
  std::vector<std::size_t> row_offset;   // first sample of each row
  std::vector<std::vector<double>> embeddings;
  std::vector<std::vector<std::size_t>> tokens;
  std::vector<Lstm::Trace> overall;
  std::vector<Lstm::Trace> output;

  std::vector<std::size_t> sample_row;
  std::vector<std::size_t> sample_step;
  std::vector<int> sample_target;
  std::vector<SameConceptWindow> windows;
  std::vector<double> factors;  // S x k

  ConvStack::Cache conv;
  std::vector<Lstm::Trace> history_lstm;
  std::vector<SelfAttentionPool::Trace> attention;
  std::vector<double> slots;  // S x k x d_e, undecayed

  std::vector<double> concept_state;  // m, S x d_e
  std::vector<double> gate_m;
  std::vector<double> gate_h;
  std::vector<double> fused;
  std::vector<double> head_input;  // S x d_h, the vector fed to the output map
};

Model::Model(const ModelConfig& config) : config_(config), layers_(std::make_unique<Layers>()) {
  config_.validate();
  const auto v = config_.variant;
  const auto m = static_cast<std::size_t>(config_.num_concepts);
  const auto de = static_cast<std::size_t>(config_.d_e());
  const auto dh = static_cast<std::size_t>(config_.d_h());
  const auto k = static_cast<std::size_t>(config_.k);
  const VolumeShape shape{k, static_cast<std::size_t>(config_.height),
                          static_cast<std::size_t>(config_.width)};
  auto& L = *layers_;

  L.embed_weight = &params_.add("embedding.weight", "embedding", {de, 2 * m});
  L.embed_bias = &params_.add("embedding.bias", "embedding", {de}, {.weight_decay = false});
  L.overall = std::make_unique<Lstm>(params_, "lstm_overall", "lstm_overall", de, dh);

  if (uses_conv(v)) {
    const KernelShape kernel = v == Variant::kC2dLc ? KernelShape{1, 3, 3} : KernelShape{3, 3, 3};
    L.conv = std::make_unique<ConvStack>(params_, v == Variant::kC2dLc ? "conv2d" : "conv3d",
                                         kernel, shape);
    if (v == Variant::kFcPooling) {
      L.pool_weight = &params_.add("pooling.weight", "pooling", {de, shape.voxels()});
      L.pool_bias = &params_.add("pooling.bias", "pooling", {de}, {.weight_decay = false});
    }
  } else if (v == Variant::kLstmLc) {
    L.history_lstm = std::make_unique<Lstm>(params_, "history_lstm", "history_lstm", de, de);
  } else if (v == Variant::kFcLc) {
    L.history_fc_weight = &params_.add("history_fc.weight", "history_fc", {de, k * de});
    L.history_fc_bias =
        &params_.add("history_fc.bias", "history_fc", {de}, {.weight_decay = false});
  } else if (v == Variant::kSaLc) {
    L.attention =
        std::make_unique<SelfAttentionPool>(params_, "history_attention", "history_attention", de);
  }
  if (uses_decay(v)) {
    L.theta_raw = &params_.add("decay.theta_raw", "decay", {1}, {.weight_decay = false});
  }
  if (uses_fusion_gate(v)) {
    L.fusion_w1 = &params_.add("fusion.W1", "fusion", {2 * de, de});
    L.fusion_b1 = &params_.add("fusion.b1", "fusion", {de}, {.weight_decay = false});
    L.fusion_w2 = &params_.add("fusion.W2", "fusion", {2 * de, de});
    L.fusion_b2 = &params_.add("fusion.b2", "fusion", {de}, {.weight_decay = false});
  }
  if (uses_output_lstm(v)) {
    L.output_lstm = std::make_unique<Lstm>(params_, "lstm_output", "lstm_output", de, dh);
  }
  const std::size_t head_in = v == Variant::kFcOutput ? de : dh;
  L.out_weight = &params_.add("output.weight", "output", {m, head_in});
  L.out_bias = &params_.add("output.bias", "output", {m}, {.weight_decay = false});

  if (v == Variant::kMeanFusion) fusion_frozen_ = true;
  initialize(config_.seed);
}

Model::~Model() = default;

void Model::initialize(std::uint64_t seed) {
  Rng rng(seed);
  auto& L = *layers_;
  const double m2 = 2.0 * config_.num_concepts;
  init_uniform(L.embed_weight->value, 1.0 / std::sqrt(m2), rng);
  L.embed_bias->value.fill(0.0);
  L.overall->init(rng);
  if (L.conv) L.conv->init(rng);
  if (L.pool_weight != nullptr) {
    init_uniform(L.pool_weight->value,
                 1.0 / std::sqrt(static_cast<double>(L.pool_weight->value.dim(1))), rng);
    L.pool_bias->value.fill(0.0);
  }
  if (L.history_lstm) L.history_lstm->init(rng);
  if (L.history_fc_weight != nullptr) {
    init_uniform(L.history_fc_weight->value,
                 1.0 / std::sqrt(static_cast<double>(L.history_fc_weight->value.dim(1))), rng);
    L.history_fc_bias->value.fill(0.0);
  }
  if (L.attention) L.attention->init(rng);
  if (L.theta_raw != nullptr) {
    L.theta_raw->value[0] = inverse_softplus(static_cast<double>(config_.k));
  }
  if (L.fusion_w1 != nullptr) {
    const double bound = 1.0 / std::sqrt(2.0 * config_.d_e());
    init_uniform(L.fusion_w1->value, bound, rng);
    init_uniform(L.fusion_w2->value, bound, rng);
    L.fusion_b1->value.fill(0.0);
    L.fusion_b2->value.fill(0.0);
  }
  if (L.output_lstm) L.output_lstm->init(rng);
  init_uniform(L.out_weight->value,
               1.0 / std::sqrt(static_cast<double>(L.out_weight->value.dim(1))), rng);
  L.out_bias->value.fill(0.0);
}

double Model::theta() const {
  return layers_->theta_raw != nullptr ? softplus(layers_->theta_raw->value[0]) : 0.0;
}

bool Model::has_decay() const noexcept { return layers_->theta_raw != nullptr; }

std::vector<double> Model::embed(std::span<const std::uint8_t> onehot) const {
  const auto de = static_cast<std::size_t>(config_.d_e());
  const std::size_t width = 2 * static_cast<std::size_t>(config_.num_concepts);
  if (onehot.size() != width) throw ValidationError("embedding input must have length 2M");
  const auto& L = *layers_;
  std::vector<double> out(L.embed_bias->value.values().begin(), L.embed_bias->value.values().end());
  for (std::size_t j = 0; j < width; ++j) {
    if (onehot[j] == 0) continue;
    for (std::size_t e = 0; e < de; ++e) {
      out[e] += L.embed_weight->value[e * width + j] * static_cast<double>(onehot[j]);
    }
  }
  return out;
}

// ---------------------------------------------------------------- forward

BatchPrediction Model::forward(const BatchedSequences& batch, const ForwardOptions& options) {
  if (batch.num_concepts != config_.num_concepts && batch.rows > 0) {
    throw ValidationError("batch has M = " + std::to_string(batch.num_concepts) +
                          " but the model was built for M = " +
                          std::to_string(config_.num_concepts));
  }
  auto& L = *layers_;
  const Variant v = config_.variant;
  const auto m_count = static_cast<std::size_t>(config_.num_concepts);
  const auto de = static_cast<std::size_t>(config_.d_e());
  const auto dh = static_cast<std::size_t>(config_.d_h());
  const auto k = static_cast<std::size_t>(config_.k);
  const std::size_t plane = static_cast<std::size_t>(config_.height * config_.width);
  const std::size_t one_hot_width = 2 * m_count;

  auto tape = std::make_unique<Tape>();
  Tape& T = *tape;
  T.options = options;
  T.steps = batch.max_len > 0 ? batch.max_len - 1 : 0;

  BatchPrediction pred;
  pred.rows = batch.rows;
  pred.steps = T.steps;
  const std::size_t cells = pred.rows * pred.steps;
  pred.probabilities.assign(cells, 0.0);
  pred.logits.assign(cells, 0.0);
  pred.target_concepts.assign(cells, 0);
  pred.labels.assign(cells, 0);
  pred.mask.assign(cells, 0);

  // Embeddings, overall LSTM and same-concept windows, row by row.
  T.lengths.resize(batch.rows);
  T.predictions.resize(batch.rows);
  T.row_offset.resize(batch.rows);
  T.embeddings.resize(batch.rows);
  T.tokens.resize(batch.rows);
  T.overall.resize(batch.rows);
  const double theta = L.theta_raw != nullptr ? softplus(L.theta_raw->value[0]) : 0.0;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const std::size_t len = batch.length(r);
    const std::size_t preds = len > 1 ? len - 1 : 0;
    T.lengths[r] = len;
    T.predictions[r] = preds;
    T.row_offset[r] = T.sample_row.size();
    auto& emb = T.embeddings[r];
    auto& tokens = T.tokens[r];
    emb.resize(len * de);
    tokens.resize(len);
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t token = batch.token(r, t);
      tokens[t] = token;
      for (std::size_t e = 0; e < de; ++e) {
        emb[t * de + e] =
            L.embed_weight->value[e * one_hot_width + token] + L.embed_bias->value[e];
      }
    }
    if (preds == 0) continue;
    L.overall->forward(emb, preds, T.overall[r]);

    ConceptHistoryIndex index(config_.num_concepts);
    for (std::size_t t = 0; t < preds; ++t) {
      index.append(t, batch.concept_at(r, t));
      const int target = batch.concept_at(r, t + 1);
      T.sample_row.push_back(r);
      T.sample_step.push_back(t);
      T.sample_target.push_back(target);
      const std::size_t cell = r * T.steps + t;
      pred.order.push_back(cell);
      pred.mask[cell] = 1;
      pred.target_concepts[cell] = target;
      pred.labels[cell] = batch.response_at(r, t + 1);
      if (!uses_history(v)) continue;
      auto window = gather_same_concept(index, t, target, k);
      for (std::size_t j = 0; j < k; ++j) {
        double factor = 0.0;
        if (!window.pad_mask[j]) factor = L.theta_raw != nullptr ? decay_factor(window.gaps[j], theta) : 1.0;
        T.factors.push_back(factor);
      }
      T.windows.push_back(std::move(window));
    }
  }
  const std::size_t samples = T.sample_row.size();

  // Same-concept path -> m_t.
  if (uses_history(v) && samples > 0) {
    T.concept_state.assign(samples * de, 0.0);
    if (L.conv) {
      Volume input(1, k * plane, samples);
      for (std::size_t n = 0; n < samples; ++n) {
        const auto& emb = T.embeddings[T.sample_row[n]];
        const auto& window = T.windows[n];
        for (std::size_t j = 0; j < k; ++j) {
          if (window.pad_mask[j]) continue;
          const double f = T.factors[n * k + j];
          const double* src = emb.data() + window.steps[j] * de;
          for (std::size_t e = 0; e < de; ++e) input.at(0, j * plane + e, n) = src[e] * f;
        }
      }
      const Volume& out = L.conv->forward(std::move(input), options.mode,
                                          options.update_running_stats, T.conv);
      if (L.pool_weight != nullptr) {
        const std::size_t voxels = k * plane;
        for (std::size_t n = 0; n < samples; ++n) {
          double* mrow = T.concept_state.data() + n * de;
          for (std::size_t e = 0; e < de; ++e) {
            const double* w = L.pool_weight->value.data() + e * voxels;
            double acc = L.pool_bias->value[e];
            for (std::size_t vx = 0; vx < voxels; ++vx) acc += w[vx] * out.at(0, vx, n);
            mrow[e] = acc;
          }
        }
      } else {
        const double inv_k = 1.0 / static_cast<double>(k);
        for (std::size_t n = 0; n < samples; ++n) {
          double* mrow = T.concept_state.data() + n * de;
          for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t e = 0; e < de; ++e) mrow[e] += out.at(0, j * plane + e, n);
          }
          for (std::size_t e = 0; e < de; ++e) mrow[e] *= inv_k;
        }
      }
    } else {
      T.slots.assign(samples * k * de, 0.0);
      for (std::size_t n = 0; n < samples; ++n) {
        const auto& emb = T.embeddings[T.sample_row[n]];
        const auto& window = T.windows[n];
        for (std::size_t j = 0; j < k; ++j) {
          if (window.pad_mask[j]) continue;
          std::copy_n(emb.data() + window.steps[j] * de, de, T.slots.data() + (n * k + j) * de);
        }
      }
      if (L.history_lstm) {
        T.history_lstm.resize(samples);
        for (std::size_t n = 0; n < samples; ++n) {
          L.history_lstm->forward(std::span(T.slots).subspan(n * k * de, k * de), k,
                                  T.history_lstm[n]);
          std::copy_n(T.history_lstm[n].hidden.data() + (k - 1) * de, de,
                      T.concept_state.data() + n * de);
        }
      } else if (L.history_fc_weight != nullptr) {
        const std::size_t width = k * de;
        for (std::size_t n = 0; n < samples; ++n) {
          const double* x = T.slots.data() + n * width;
          for (std::size_t e = 0; e < de; ++e) {
            const double* w = L.history_fc_weight->value.data() + e * width;
            double acc = L.history_fc_bias->value[e];
            for (std::size_t i = 0; i < width; ++i) acc += w[i] * x[i];
            T.concept_state[n * de + e] = acc;
          }
        }
      } else if (L.attention) {
        T.attention.resize(samples);
        for (std::size_t n = 0; n < samples; ++n) {
          L.attention->forward(std::span(T.slots).subspan(n * k * de, k * de), k,
                               std::span(T.concept_state).subspan(n * de, de), T.attention[n]);
        }
      }
    }
  }

  // Fusion of m_t with h_t.
  const bool frozen = fusion_frozen_ || L.fusion_w1 == nullptr;
  if (uses_history(v) && samples > 0) {
    T.gate_m.assign(samples * de, 0.5);
    T.gate_h.assign(samples * de, 0.5);
    T.fused.assign(samples * de, 0.0);
    for (std::size_t n = 0; n < samples; ++n) {
      const double* mrow = T.concept_state.data() + n * de;
      const double* hrow = T.overall[T.sample_row[n]].hidden.data() + T.sample_step[n] * dh;
      double* z1 = T.gate_m.data() + n * de;
      double* z2 = T.gate_h.data() + n * de;
      if (!frozen) {
        std::copy_n(L.fusion_b1->value.data(), de, z1);
        std::copy_n(L.fusion_b2->value.data(), de, z2);
        for (std::size_t i = 0; i < 2 * de; ++i) {
          const double x = i < de ? mrow[i] : hrow[i - de];
          const double* r1 = L.fusion_w1->value.data() + i * de;
          const double* r2 = L.fusion_w2->value.data() + i * de;
          for (std::size_t j = 0; j < de; ++j) {
            z1[j] += x * r1[j];
            z2[j] += x * r2[j];
          }
        }
        for (std::size_t j = 0; j < de; ++j) {
          z1[j] = sigmoid(z1[j]);
          z2[j] = sigmoid(z2[j]);
        }
      }
      double* f = T.fused.data() + n * de;
      for (std::size_t j = 0; j < de; ++j) f[j] = z1[j] * mrow[j] + z2[j] * hrow[j];
    }
  }

  // Output head input: right LSTM over fused states, the fused state itself,
  // or h_t for the baseline.
  const std::size_t head = L.out_weight->value.dim(1);
  T.head_input.assign(samples * head, 0.0);
  if (L.output_lstm) {
    T.output.resize(batch.rows);
    for (std::size_t r = 0; r < batch.rows; ++r) {
      const std::size_t preds = T.predictions[r];
      if (preds == 0) continue;
      const std::size_t first = T.row_offset[r];
      L.output_lstm->forward(std::span(T.fused).subspan(first * de, preds * de), preds,
                             T.output[r]);
      std::copy(T.output[r].hidden.begin(), T.output[r].hidden.end(),
                T.head_input.begin() + static_cast<std::ptrdiff_t>(first * head));
    }
  } else if (v == Variant::kFcOutput) {
    T.head_input = T.fused;
  } else {
    for (std::size_t n = 0; n < samples; ++n) {
      const double* hrow = T.overall[T.sample_row[n]].hidden.data() + T.sample_step[n] * dh;
      std::copy_n(hrow, dh, T.head_input.data() + n * head);
    }
  }

  for (std::size_t n = 0; n < samples; ++n) {
    const double* o = T.head_input.data() + n * head;
    const auto c = static_cast<std::size_t>(T.sample_target[n]);
    const double* w = L.out_weight->value.data() + c * head;
    double logit = L.out_bias->value[c];
    for (std::size_t i = 0; i < head; ++i) logit += w[i] * o[i];
    const std::size_t cell = pred.order[n];
    pred.logits[cell] = logit;
    pred.probabilities[cell] = sigmoid(logit);
    if (options.record_mastery) {
      std::vector<double> y(m_count);
      for (std::size_t cc = 0; cc < m_count; ++cc) {
        const double* wc = L.out_weight->value.data() + cc * head;
        double acc = L.out_bias->value[cc];
        for (std::size_t i = 0; i < head; ++i) acc += wc[i] * o[i];
        y[cc] = sigmoid(acc);
      }
      pred.mastery.push_back(std::move(y));
    }
  }

  if (options.record_internals) {
    for (std::size_t n = 0; n < samples; ++n) {
      const double* hrow = T.overall[T.sample_row[n]].hidden.data() + T.sample_step[n] * dh;
      pred.overall_state.emplace_back(hrow, hrow + dh);
      if (!uses_history(v)) continue;
      auto slice = [&](const std::vector<double>& src) {
        return std::vector<double>(src.begin() + static_cast<std::ptrdiff_t>(n * de),
                                   src.begin() + static_cast<std::ptrdiff_t>((n + 1) * de));
      };
      pred.concept_state.push_back(slice(T.concept_state));
      pred.gate_m.push_back(slice(T.gate_m));
      pred.gate_h.push_back(slice(T.gate_h));
      pred.fused_state.push_back(slice(T.fused));
    }
  }

  if (options.keep_tape) {
    tape_ = std::move(tape);
  } else {
    tape_.reset();
  }
  return pred;
}

// ---------------------------------------------------------------- backward

void Model::backward(std::span<const double> grad_logits) {
  if (!tape_) throw ValidationError("backward() requires a forward pass with keep_tape");
  Tape& T = *tape_;
  auto& L = *layers_;
  const Variant v = config_.variant;
  const auto de = static_cast<std::size_t>(config_.d_e());
  const auto dh = static_cast<std::size_t>(config_.d_h());
  const auto k = static_cast<std::size_t>(config_.k);
  const std::size_t plane = static_cast<std::size_t>(config_.height * config_.width);
  const std::size_t one_hot_width = 2 * static_cast<std::size_t>(config_.num_concepts);
  const std::size_t samples = T.sample_row.size();
  if (grad_logits.size() != samples) {
    throw ValidationError("expected " + std::to_string(samples) + " logit gradients, got " +
                          std::to_string(grad_logits.size()));
  }
  const std::size_t rows = T.lengths.size();

  // Output map.
  const std::size_t head = L.out_weight->value.dim(1);
  std::vector<double> grad_head(samples * head, 0.0);
  for (std::size_t n = 0; n < samples; ++n) {
    const double g = grad_logits[n];
    const auto c = static_cast<std::size_t>(T.sample_target[n]);
    const double* o = T.head_input.data() + n * head;
    const double* w = L.out_weight->value.data() + c * head;
    double* dw = L.out_weight->grad.data() + c * head;
    double* go = grad_head.data() + n * head;
    L.out_bias->grad[c] += g;
    for (std::size_t i = 0; i < head; ++i) {
      dw[i] += g * o[i];
      go[i] = g * w[i];
    }
  }

  std::vector<double> grad_overall(samples * dh, 0.0);  // d/d h_t per sample
  std::vector<std::vector<double>> grad_emb(rows);
  for (std::size_t r = 0; r < rows; ++r) grad_emb[r].assign(T.lengths[r] * de, 0.0);

  if (!uses_history(v)) {
    grad_overall = std::move(grad_head);
  } else {
    std::vector<double> grad_fused(samples * de, 0.0);
    if (L.output_lstm) {
      std::vector<double> dx;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t preds = T.predictions[r];
        if (preds == 0) continue;
        const std::size_t first = T.row_offset[r];
        dx.assign(preds * de, 0.0);
        L.output_lstm->backward(T.output[r], std::span(grad_head).subspan(first * dh, preds * dh),
                                dx);
        std::copy(dx.begin(), dx.end(), grad_fused.begin() + static_cast<std::ptrdiff_t>(first * de));
      }
    } else {
      grad_fused = std::move(grad_head);
    }

    // Fusion gate.
    std::vector<double> grad_m(samples * de, 0.0);
    std::vector<double> g1(de);
    std::vector<double> g2(de);
    for (std::size_t n = 0; n < samples; ++n) {
      const double* mrow = T.concept_state.data() + n * de;
      const double* hrow = T.overall[T.sample_row[n]].hidden.data() + T.sample_step[n] * dh;
      const double* z1 = T.gate_m.data() + n * de;
      const double* z2 = T.gate_h.data() + n * de;
      const double* gf = grad_fused.data() + n * de;
      double* gm = grad_m.data() + n * de;
      double* gh = grad_overall.data() + n * dh;
      for (std::size_t j = 0; j < de; ++j) {
        gm[j] += gf[j] * z1[j];
        gh[j] += gf[j] * z2[j];
      }
      if (fusion_frozen_ || L.fusion_w1 == nullptr) continue;
      for (std::size_t j = 0; j < de; ++j) {
        g1[j] = gf[j] * mrow[j] * z1[j] * (1.0 - z1[j]);
        g2[j] = gf[j] * hrow[j] * z2[j] * (1.0 - z2[j]);
        L.fusion_b1->grad[j] += g1[j];
        L.fusion_b2->grad[j] += g2[j];
      }
      for (std::size_t i = 0; i < 2 * de; ++i) {
        const double x = i < de ? mrow[i] : hrow[i - de];
        const double* r1 = L.fusion_w1->value.data() + i * de;
        const double* r2 = L.fusion_w2->value.data() + i * de;
        double* d1 = L.fusion_w1->grad.data() + i * de;
        double* d2 = L.fusion_w2->grad.data() + i * de;
        double acc = 0.0;
        for (std::size_t j = 0; j < de; ++j) {
          d1[j] += x * g1[j];
          d2[j] += x * g2[j];
          acc += r1[j] * g1[j] + r2[j] * g2[j];
        }
        if (i < de) {
          gm[i] += acc;
        } else {
          gh[i - de] += acc;
        }
      }
    }

    // Same-concept path back to the window slots.
    std::vector<double> grad_slots(samples * k * de, 0.0);
    if (L.conv) {
      const std::size_t voxels = k * plane;
      Volume grad_out(1, voxels, samples);
      if (L.pool_weight != nullptr) {
        const Volume& out = T.conv.activations.back();
        for (std::size_t n = 0; n < samples; ++n) {
          const double* gm = grad_m.data() + n * de;
          for (std::size_t e = 0; e < de; ++e) {
            const double g = gm[e];
            L.pool_bias->grad[e] += g;
            const double* w = L.pool_weight->value.data() + e * voxels;
            double* dw = L.pool_weight->grad.data() + e * voxels;
            for (std::size_t vx = 0; vx < voxels; ++vx) {
              dw[vx] += g * out.at(0, vx, n);
              grad_out.at(0, vx, n) += g * w[vx];
            }
          }
        }
      } else {
        const double inv_k = 1.0 / static_cast<double>(k);
        for (std::size_t n = 0; n < samples; ++n) {
          const double* gm = grad_m.data() + n * de;
          for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t e = 0; e < de; ++e) grad_out.at(0, j * plane + e, n) = gm[e] * inv_k;
          }
        }
      }
      Volume grad_in;
      L.conv->backward(T.conv, grad_out, grad_in);
      for (std::size_t n = 0; n < samples; ++n) {
        for (std::size_t j = 0; j < k; ++j) {
          for (std::size_t e = 0; e < de; ++e) {
            grad_slots[(n * k + j) * de + e] = grad_in.at(0, j * plane + e, n);
          }
        }
      }
    } else if (L.history_lstm) {
      std::vector<double> dhid(k * de);
      for (std::size_t n = 0; n < samples; ++n) {
        std::fill(dhid.begin(), dhid.end(), 0.0);
        std::copy_n(grad_m.data() + n * de, de, dhid.data() + (k - 1) * de);
        L.history_lstm->backward(T.history_lstm[n], dhid,
                                 std::span(grad_slots).subspan(n * k * de, k * de));
      }
    } else if (L.history_fc_weight != nullptr) {
      const std::size_t width = k * de;
      for (std::size_t n = 0; n < samples; ++n) {
        const double* x = T.slots.data() + n * width;
        double* gx = grad_slots.data() + n * width;
        for (std::size_t e = 0; e < de; ++e) {
          const double g = grad_m[n * de + e];
          L.history_fc_bias->grad[e] += g;
          const double* w = L.history_fc_weight->value.data() + e * width;
          double* dw = L.history_fc_weight->grad.data() + e * width;
          for (std::size_t i = 0; i < width; ++i) {
            dw[i] += g * x[i];
            gx[i] += g * w[i];
          }
        }
      }
    } else if (L.attention) {
      for (std::size_t n = 0; n < samples; ++n) {
        L.attention->backward(T.attention[n], std::span(grad_m).subspan(n * de, de),
                              std::span(grad_slots).subspan(n * k * de, k * de));
      }
    }

    // Decay and scatter back onto the embeddings they were gathered from.
    const double theta = L.theta_raw != nullptr ? softplus(L.theta_raw->value[0]) : 0.0;
    double grad_theta = 0.0;
    for (std::size_t n = 0; n < samples; ++n) {
      const std::size_t r = T.sample_row[n];
      const auto& window = T.windows[n];
      const auto& emb = T.embeddings[r];
      for (std::size_t j = 0; j < k; ++j) {
        if (window.pad_mask[j]) continue;
        const std::size_t step = window.steps[j];
        const double f = T.factors[n * k + j];
        const double* gs = grad_slots.data() + (n * k + j) * de;
        double* ge = grad_emb[r].data() + step * de;
        const double* src = emb.data() + step * de;
        double dot = 0.0;
        for (std::size_t e = 0; e < de; ++e) {
          ge[e] += gs[e] * f;
          dot += gs[e] * src[e];
        }
        if (L.theta_raw != nullptr) grad_theta += dot * decay_factor_dtheta(window.gaps[j], theta);
      }
    }
    if (L.theta_raw != nullptr) {
      L.theta_raw->grad[0] += grad_theta * DecayParam(L.theta_raw->value[0]).dtheta_draw();
    }
  }

  // Overall LSTM and embeddings.
  std::vector<double> dx;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t preds = T.predictions[r];
    if (preds == 0) continue;
    const std::size_t first = T.row_offset[r];
    dx.assign(preds * de, 0.0);
    L.overall->backward(T.overall[r], std::span(grad_overall).subspan(first * dh, preds * dh), dx);
    for (std::size_t i = 0; i < preds * de; ++i) grad_emb[r][i] += dx[i];
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < T.lengths[r]; ++t) {
      const std::size_t token = T.tokens[r][t];
      const double* ge = grad_emb[r].data() + t * de;
      for (std::size_t e = 0; e < de; ++e) {
        L.embed_weight->grad[e * one_hot_width + token] += ge[e];
        L.embed_bias->grad[e] += ge[e];
      }
    }
  }
}

PredictionTrace Model::predict(const EncodedSequence& sequence) {
  const EncodedSequence* ptr = &sequence;
  const auto batch = make_batch(std::span<const EncodedSequence* const>(&ptr, 1));
  ForwardOptions options;
  options.mode = Mode::kEval;
  options.record_mastery = true;
  auto pred = forward(batch, options);
  PredictionTrace trace;
  for (std::size_t i = 0; i < pred.count(); ++i) {
    const std::size_t cell = pred.order[i];
    trace.probabilities.push_back(pred.probabilities[cell]);
    trace.target_concepts.push_back(pred.target_concepts[cell]);
    trace.labels.push_back(pred.labels[cell]);
    trace.mask.push_back(1);
  }
  trace.mastery = std::move(pred.mastery);
  return trace;
}

std::unique_ptr<Model> build_variant(const ModelConfig& config) {
  return std::make_unique<Model>(config);
}

}  // namespace cakt
