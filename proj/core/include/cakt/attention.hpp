#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cakt/parameters.hpp"

namespace cakt {

class Rng;

/// Single-head scaled dot-product self-attention over a short set of rows,
/// followed by a mean over the attended rows. No biases, so all-zero rows
/// attend uniformly and contribute nothing.
class SelfAttentionPool {
 public:
  SelfAttentionPool(ParameterSet& params, const std::string& name, const std::string& group,
                    std::size_t dim);

  struct Trace {
    std::size_t rows = 0;
    std::vector<double> inputs;   // rows x dim
    std::vector<double> queries;  // rows x dim
    std::vector<double> keys;
    std::vector<double> values;
    std::vector<double> attention;  // rows x rows, softmax over the last axis
  };

  void init(Rng& rng);
  /// `inputs` is rows x dim; writes `dim` values to `output`.
  void forward(std::span<const double> inputs, std::size_t rows, std::span<double> output,
               Trace& trace) const;
  void backward(const Trace& trace, std::span<const double> grad_output,
                std::span<double> grad_inputs);

 private:
  Parameter& query_;  // dim x dim, applied as x W
  Parameter& key_;
  Parameter& value_;
  std::size_t dim_;
};

}  // namespace cakt
