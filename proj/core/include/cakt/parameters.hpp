#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include "cakt/tensor.hpp"

namespace cakt {

class Rng;

/// A named tensor owned by a model. Non-trainable entries are buffers such as
/// batch-norm running statistics; they are checkpointed but never optimized.
struct Parameter {
  std::string name;
  std::string group;  // coarse grouping used by gradient checks and reports
  Tensor value;
  Tensor grad;
  bool trainable = true;
  bool weight_decay = true;
};

/// Ordered parameter registry. References returned by `add` stay valid for the
/// lifetime of the set.
class ParameterSet {
 public:
  struct Options {
    bool trainable = true;
    bool weight_decay = true;
  };

  Parameter& add(std::string name, std::string group, std::vector<std::size_t> shape,
                 Options options);
  Parameter& add(std::string name, std::string group, std::vector<std::size_t> shape) {
    return add(std::move(name), std::move(group), std::move(shape), Options{});
  }

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const noexcept { return params_.size(); }

  void zero_grad();
  /// Number of trainable scalars.
  std::size_t trainable_count() const;
  std::vector<std::string> groups() const;

  /// Copy of every value (trainable and buffers), in registration order.
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::deque<Parameter> params_;
};

/// Fills `value` with U(-bound, bound).
void init_uniform(Tensor& value, double bound, Rng& rng);

/// Fills a (blocks*n) x n matrix with `blocks` independent random orthogonal
/// n x n blocks.
void init_orthogonal_blocks(Tensor& value, std::size_t blocks, Rng& rng);

}  // namespace cakt
