#include "cakt/parameters.hpp"

#include <cmath>

#include "cakt/error.hpp"
#include "cakt/rng.hpp"

namespace cakt {

Parameter& ParameterSet::add(std::string name, std::string group, std::vector<std::size_t> shape,
                             Options options) {
  if (find(name) != nullptr) throw ValidationError("duplicate parameter name '" + name + "'");
  Parameter p;
  p.name = std::move(name);
  p.group = std::move(group);
  p.value = Tensor(shape);
  p.grad = Tensor(std::move(shape));
  p.trainable = options.trainable;
  p.weight_decay = options.trainable && options.weight_decay;
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

std::size_t ParameterSet::trainable_count() const {
  std::size_t count = 0;
  for (const auto& p : params_) {
    if (p.trainable) count += p.value.size();
  }
  return count;
}

std::vector<std::string> ParameterSet::groups() const {
  std::vector<std::string> out;
  for (const auto& p : params_) {
    if (!p.trainable) continue;
    bool seen = false;
    for (const auto& g : out) seen = seen || g == p.group;
    if (!seen) out.push_back(p.group);
  }
  return out;
}

std::vector<Tensor> ParameterSet::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

void ParameterSet::restore(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) throw ValidationError("snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != params_[i].value.shape()) {
      throw ValidationError("snapshot shape mismatch for '" + params_[i].name + "'");
    }
    params_[i].value = values[i];
  }
}

void init_uniform(Tensor& value, double bound, Rng& rng) {
  for (auto& v : value.values()) v = rng.uniform(-bound, bound);
}

void init_orthogonal_blocks(Tensor& value, std::size_t blocks, Rng& rng) {
  if (value.rank() != 2 || value.dim(0) != blocks * value.dim(1)) {
    throw ValidationError("orthogonal init expects a (blocks*n) x n matrix");
  }
  const std::size_t n = value.dim(1);
  for (std::size_t b = 0; b < blocks; ++b) {
    double* block = value.data() + b * n * n;
    for (std::size_t i = 0; i < n * n; ++i) block[i] = rng.normal();
    // Modified Gram-Schmidt over rows.
    for (std::size_t r = 0; r < n; ++r) {
      double* row = block + r * n;
      for (std::size_t q = 0; q < r; ++q) {
        const double* prev = block + q * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += row[j] * prev[j];
        for (std::size_t j = 0; j < n; ++j) row[j] -= dot * prev[j];
      }
      double norm = 0.0;
      for (std::size_t j = 0; j < n; ++j) norm += row[j] * row[j];
      norm = std::sqrt(norm);
      if (norm < 1e-12) {
        for (std::size_t j = 0; j < n; ++j) row[j] = j == r ? 1.0 : 0.0;
        continue;
      }
      for (std::size_t j = 0; j < n; ++j) row[j] /= norm;
    }
  }
}

}  // namespace cakt
