#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "cakt/tensor.hpp"

namespace cakt {

/// Per-concept list of the steps at which that concept was practised, in
/// ascending step order. Steps refer to rows of the sequence's embedding
/// matrix.
class ConceptHistoryIndex {
 public:
  ConceptHistoryIndex() = default;
  explicit ConceptHistoryIndex(int num_concepts);

  /// Builds the index over steps [0, steps) of `concepts`.
  static ConceptHistoryIndex from_sequence(std::span<const int> concepts, std::size_t steps);

  /// Steps must be appended in strictly increasing order.
  void append(std::size_t step, int concept_id);

  std::span<const std::size_t> steps_for(int concept_id) const;
  std::size_t size() const noexcept { return total_; }

 private:
  std::vector<std::vector<std::size_t>> by_concept_;
  std::size_t total_ = 0;
  std::size_t next_step_ = 0;
};

inline constexpr std::size_t kPaddingStep = std::numeric_limits<std::size_t>::max();

/// The k-slot window of same-concept history used for one prediction.
/// Slots run oldest to newest; padding slots sit on the oldest side.
struct SameConceptWindow {
  std::vector<std::size_t> steps;  // kPaddingStep for padding slots
  std::vector<int> gaps;           // (t + 1) - step; 0 for padding
  std::vector<bool> pad_mask;
};

/// Up to `k` most recent steps <= t whose concept is `next_concept`.
SameConceptWindow gather_same_concept(const ConceptHistoryIndex& index, std::size_t t,
                                      int next_concept, std::size_t k);

/// Learnable decay time constant, kept positive through softplus.
class DecayParam {
 public:
  explicit DecayParam(double theta_raw = 0.0) : raw_(theta_raw) {}
  static DecayParam from_theta(double theta);

  double raw() const noexcept { return raw_; }
  double theta() const noexcept;
  /// d theta / d raw
  double dtheta_draw() const noexcept;

 private:
  double raw_;
};

double softplus(double x) noexcept;
double inverse_softplus(double y);

/// exp(-gap / theta)
double decay_factor(double gap, double theta) noexcept;
/// d/dtheta exp(-gap / theta) = gap / theta^2 * exp(-gap / theta)
double decay_factor_dtheta(double gap, double theta) noexcept;

/// Scales every non-padding row of `slots` (k x d) by exp(-gap / theta).
Tensor apply_exponential_decay(const Tensor& slots, std::span<const int> gaps,
                               const std::vector<bool>& pad_mask, const DecayParam& theta);

struct DecayGradients {
  Tensor slots;
  double theta_raw = 0.0;
};

/// Backward pass of apply_exponential_decay given d(loss)/d(output).
DecayGradients apply_exponential_decay_backward(const Tensor& slots, std::span<const int> gaps,
                                                const std::vector<bool>& pad_mask,
                                                const DecayParam& theta,
                                                const Tensor& grad_output);

struct HistoryTensor {
  Tensor values;  // k x H x W
  std::vector<int> gaps;
  std::vector<bool> pad_mask;
};

/// Reshapes each row of `slots` (k x d_e) row-major into H x W and stacks them.
HistoryTensor reshape_stack(const Tensor& slots, std::size_t height, std::size_t width,
                            std::vector<int> gaps = {}, std::vector<bool> pad_mask = {});

}  // namespace cakt
