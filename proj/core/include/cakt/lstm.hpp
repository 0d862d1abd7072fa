#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cakt/parameters.hpp"

namespace cakt {

class Rng;

/// Single-layer LSTM with gate order (input, forget, cell, output) and zero
/// initial state.
class Lstm {
 public:
  Lstm(ParameterSet& params, const std::string& name, const std::string& group,
       std::size_t input_size, std::size_t hidden_size);

  std::size_t input_size() const noexcept { return input_size_; }
  std::size_t hidden_size() const noexcept { return hidden_size_; }

  struct Trace {
    std::size_t steps = 0;
    std::vector<double> inputs;  // steps x input
    std::vector<double> gates;   // steps x 4*hidden, post-activation
    std::vector<double> cells;   // steps x hidden
    std::vector<double> hidden;  // steps x hidden
  };

  /// `inputs` holds `steps` rows of `input_size` values.
  void forward(std::span<const double> inputs, std::size_t steps, Trace& trace) const;

  /// Accumulates parameter gradients. `grad_hidden` is d(loss)/d(h_t) for each
  /// step; `grad_inputs` (optional, may be empty) receives d(loss)/d(x_t).
  void backward(const Trace& trace, std::span<const double> grad_hidden,
                std::span<double> grad_inputs);

  /// Fan-in uniform input kernel, orthogonal recurrent blocks, zero bias.
  void init(Rng& rng);

 private:
  Parameter& input_weights_;      // 4h x input
  Parameter& recurrent_weights_;  // 4h x h
  Parameter& bias_;               // 4h
  std::size_t input_size_;
  std::size_t hidden_size_;
};

}  // namespace cakt
