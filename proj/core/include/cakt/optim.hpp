#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cakt/parameters.hpp"
#include "cakt/tensor.hpp"

namespace cakt {

struct TrainConfig {
  double lr = 0.001;
  double lr_decay = 0.3;
  int decay_every = 5;
  double l2 = 1e-5;
  int batch_size = 32;
  int epochs = 30;
  std::uint64_t seed = 0;
  std::optional<int> early_stop_patience;
  double clip_norm = 10.0;  // <= 0 disables clipping

  /// lr * lr_decay^floor(epoch / decay_every), with `epoch` counted from 0.
  double learning_rate(int epoch) const;

  std::vector<std::string> violations() const;
  void validate() const;
};

/// Adam moments for every trainable parameter, in registration order.
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

/// Adam with decoupled weight decay applied to parameters flagged for it.
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  explicit Adam(ParameterSet& params);

  void step(double lr, double weight_decay);

  const OptimizerState& state() const noexcept { return state_; }
  void set_state(OptimizerState state);

 private:
  ParameterSet& params_;
  OptimizerState state_;
};

/// L2 norm over the gradients of all trainable parameters.
double gradient_norm(const ParameterSet& params);

/// Rescales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_gradients(ParameterSet& params, double max_norm);

}  // namespace cakt
