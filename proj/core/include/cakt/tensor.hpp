#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <vector>

namespace cakt {

/// Dense row-major array of doubles with a runtime shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  template <typename... Index>
  double& at(Index... index) {
    return data_.at(offset({static_cast<std::size_t>(index)...}));
  }
  template <typename... Index>
  double at(Index... index) const {
    return data_.at(offset({static_cast<std::size_t>(index)...}));
  }

  void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const {
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) flat = flat * shape_.at(axis++) + i;
    return flat;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace cakt
