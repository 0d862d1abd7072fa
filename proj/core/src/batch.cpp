#include "cakt/batch.hpp"

#include <algorithm>

#include "cakt/error.hpp"

namespace cakt {

std::size_t BatchedSequences::length(std::size_t row) const {
  const std::uint8_t* m = mask.data() + row * max_len;
  std::size_t len = 0;
  while (len < max_len && m[len] != 0) ++len;
  for (std::size_t i = len; i < max_len; ++i) {
    if (m[i] != 0) throw ValidationError("batch mask must mark a prefix of each row");
  }
  return len;
}

BatchedSequences make_batch(std::span<const EncodedSequence* const> sequences,
                            std::size_t max_len) {
  BatchedSequences batch;
  batch.rows = sequences.size();
  std::size_t longest = 0;
  for (const auto* seq : sequences) {
    longest = std::max(longest, seq->size());
    if (batch.num_concepts == 0) batch.num_concepts = seq->num_concepts();
    if (seq->num_concepts() != batch.num_concepts) {
      throw ValidationError("all sequences in a batch must share M");
    }
  }
  if (max_len != 0 && max_len < longest) {
    throw ValidationError("max_len is shorter than the longest sequence in the batch");
  }
  batch.max_len = max_len == 0 ? longest : max_len;
  const std::size_t cells = batch.rows * batch.max_len;
  batch.concepts.assign(cells, 0);
  batch.responses.assign(cells, 0);
  batch.mask.assign(cells, 0);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto& seq = *sequences[r];
    for (std::size_t t = 0; t < seq.size(); ++t) {
      batch.concepts[r * batch.max_len + t] = seq.concepts()[t];
      batch.responses[r * batch.max_len + t] = seq.responses()[t];
      batch.mask[r * batch.max_len + t] = 1;
    }
  }
  return batch;
}

BatchedSequences make_batch(const std::vector<EncodedSequence>& sequences, std::size_t max_len) {
  std::vector<const EncodedSequence*> ptrs;
  ptrs.reserve(sequences.size());
  for (const auto& seq : sequences) ptrs.push_back(&seq);
  return make_batch(std::span<const EncodedSequence* const>(ptrs), max_len);
}

}  // namespace cakt
