#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cakt/data.hpp"

namespace cakt {

/// Sequences padded to a common length. Real steps form a prefix of each row;
/// `mask` marks them. Padded positions hold concept 0 / response 0 and never
/// reach the model.
struct BatchedSequences {
  int num_concepts = 0;
  std::size_t rows = 0;
  std::size_t max_len = 0;
  std::vector<int> concepts;       // rows x max_len
  std::vector<int> responses;      // rows x max_len
  std::vector<std::uint8_t> mask;  // rows x max_len

  std::size_t length(std::size_t row) const;
  int concept_at(std::size_t row, std::size_t step) const { return concepts[row * max_len + step]; }
  int response_at(std::size_t row, std::size_t step) const {
    return responses[row * max_len + step];
  }
  /// Index of the one-hot 1 for (row, step).
  std::size_t token(std::size_t row, std::size_t step) const {
    return static_cast<std::size_t>(concept_at(row, step) + num_concepts * response_at(row, step));
  }
};

/// `max_len` of 0 means the longest sequence in the batch; a larger value pads.
BatchedSequences make_batch(std::span<const EncodedSequence* const> sequences,
                            std::size_t max_len = 0);
BatchedSequences make_batch(const std::vector<EncodedSequence>& sequences,
                            std::size_t max_len = 0);

}  // namespace cakt
