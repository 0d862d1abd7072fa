#include "cakt/history.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cakt/error.hpp"

namespace cakt {

ConceptHistoryIndex::ConceptHistoryIndex(int num_concepts)
    : by_concept_(static_cast<std::size_t>(std::max(num_concepts, 0))) {}

ConceptHistoryIndex ConceptHistoryIndex::from_sequence(std::span<const int> concepts,
                                                       std::size_t steps) {
  int max_concept = -1;
  for (std::size_t i = 0; i < steps && i < concepts.size(); ++i) {
    max_concept = std::max(max_concept, concepts[i]);
  }
  ConceptHistoryIndex index(max_concept + 1);
  for (std::size_t i = 0; i < steps && i < concepts.size(); ++i) index.append(i, concepts[i]);
  return index;
}

void ConceptHistoryIndex::append(std::size_t step, int concept_id) {
  if (concept_id < 0) throw ValidationError("negative concept id in history index");
  if (total_ > 0 && step < next_step_) {
    throw ValidationError("history steps must be appended in increasing order");
  }
  const auto c = static_cast<std::size_t>(concept_id);
  if (c >= by_concept_.size()) by_concept_.resize(c + 1);
  by_concept_[c].push_back(step);
  next_step_ = step + 1;
  ++total_;
}

std::span<const std::size_t> ConceptHistoryIndex::steps_for(int concept_id) const {
  if (concept_id < 0 || static_cast<std::size_t>(concept_id) >= by_concept_.size()) return {};
  return by_concept_[static_cast<std::size_t>(concept_id)];
}

SameConceptWindow gather_same_concept(const ConceptHistoryIndex& index, std::size_t t,
                                      int next_concept, std::size_t k) {
  SameConceptWindow window{std::vector<std::size_t>(k, kPaddingStep), std::vector<int>(k, 0),
                           std::vector<bool>(k, true)};
  const auto steps = index.steps_for(next_concept);
  const auto end = std::upper_bound(steps.begin(), steps.end(), t);
  const auto available = static_cast<std::size_t>(end - steps.begin());
  const std::size_t take = std::min(k, available);
  const std::size_t pad = k - take;
  for (std::size_t j = 0; j < take; ++j) {
    const std::size_t step = *(end - static_cast<std::ptrdiff_t>(take - j));
    window.steps[pad + j] = step;
    window.gaps[pad + j] = static_cast<int>(t + 1 - step);
    window.pad_mask[pad + j] = false;
  }
  return window;
}

double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double inverse_softplus(double y) {
  if (!(y > 0.0)) throw ValidationError("softplus output must be positive");
  // log(exp(y) - 1) = y + log(1 - exp(-y))
  return y + std::log(-std::expm1(-y));
}

DecayParam DecayParam::from_theta(double theta) { return DecayParam(inverse_softplus(theta)); }

double DecayParam::theta() const noexcept { return softplus(raw_); }

double DecayParam::dtheta_draw() const noexcept { return 1.0 / (1.0 + std::exp(-raw_)); }

double decay_factor(double gap, double theta) noexcept { return std::exp(-gap / theta); }

double decay_factor_dtheta(double gap, double theta) noexcept {
  return gap / (theta * theta) * std::exp(-gap / theta);
}

namespace {

void check_window(const Tensor& slots, std::span<const int> gaps,
                  const std::vector<bool>& pad_mask) {
  if (slots.rank() != 2) throw ValidationError("slots must be a k x d matrix");
  if (gaps.size() != slots.dim(0) || pad_mask.size() != slots.dim(0)) {
    throw ValidationError("gaps and pad_mask must have one entry per slot");
  }
}

}  // namespace

Tensor apply_exponential_decay(const Tensor& slots, std::span<const int> gaps,
                               const std::vector<bool>& pad_mask, const DecayParam& theta) {
  check_window(slots, gaps, pad_mask);
  Tensor out = slots;
  const double th = theta.theta();
  const std::size_t width = slots.dim(1);
  for (std::size_t i = 0; i < slots.dim(0); ++i) {
    if (pad_mask[i]) continue;
    const double factor = decay_factor(gaps[i], th);
    for (std::size_t j = 0; j < width; ++j) out[i * width + j] *= factor;
  }
  return out;
}

DecayGradients apply_exponential_decay_backward(const Tensor& slots, std::span<const int> gaps,
                                                const std::vector<bool>& pad_mask,
                                                const DecayParam& theta,
                                                const Tensor& grad_output) {
  check_window(slots, gaps, pad_mask);
  if (grad_output.shape() != slots.shape()) throw ValidationError("gradient shape mismatch");
  DecayGradients grads{grad_output, 0.0};
  const double th = theta.theta();
  const std::size_t width = slots.dim(1);
  double dtheta = 0.0;
  for (std::size_t i = 0; i < slots.dim(0); ++i) {
    if (pad_mask[i]) continue;
    const double factor = decay_factor(gaps[i], th);
    const double dfactor = decay_factor_dtheta(gaps[i], th);
    double dot = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      dot += grad_output[i * width + j] * slots[i * width + j];
      grads.slots[i * width + j] *= factor;
    }
    dtheta += dot * dfactor;
  }
  grads.theta_raw = dtheta * theta.dtheta_draw();
  return grads;
}

HistoryTensor reshape_stack(const Tensor& slots, std::size_t height, std::size_t width,
                            std::vector<int> gaps, std::vector<bool> pad_mask) {
  if (slots.rank() != 2) throw ValidationError("slots must be a k x d_e matrix");
  const std::size_t k = slots.dim(0);
  const std::size_t d_e = slots.dim(1);
  if (height * width != d_e) {
    throw ValidationError("H*W = " + std::to_string(height * width) + " does not equal d_e = " +
                          std::to_string(d_e));
  }
  if (gaps.empty()) gaps.assign(k, 0);
  if (pad_mask.empty()) pad_mask.assign(k, false);
  HistoryTensor out{Tensor({k, height, width}), std::move(gaps), std::move(pad_mask)};
  std::copy(slots.values().begin(), slots.values().end(), out.values.values().begin());
  return out;
}

}  // namespace cakt
