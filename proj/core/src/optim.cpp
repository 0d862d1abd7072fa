#include "cakt/optim.hpp"

#include <cmath>
#include <sstream>

#include "cakt/error.hpp"

namespace cakt {

double TrainConfig::learning_rate(int epoch) const {
  if (epoch < 0) throw ValidationError("epoch index must be non-negative");
  return lr * std::pow(lr_decay, epoch / decay_every);
}

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> out;
  if (!(lr > 0.0) || !std::isfinite(lr)) out.push_back("lr must be positive");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) out.push_back("lr_decay must lie in (0, 1]");
  if (decay_every < 1) out.push_back("decay_every must be at least 1");
  if (l2 < 0.0 || !std::isfinite(l2)) out.push_back("l2 must be non-negative");
  if (batch_size < 1) out.push_back("batch_size must be at least 1");
  if (epochs < 1) out.push_back("epochs must be at least 1");
  if (early_stop_patience && *early_stop_patience < 1) {
    out.push_back("early_stop_patience must be at least 1 when set");
  }
  if (!std::isfinite(clip_norm)) out.push_back("clip_norm must be finite");
  return out;
}

void TrainConfig::validate() const {
  const auto problems = violations();
  if (problems.empty()) return;
  std::ostringstream os;
  os << "invalid training config:";
  for (const auto& p : problems) os << "\n  - " << p;
  throw ValidationError(os.str());
}

Adam::Adam(ParameterSet& params) : params_(params) {
  for (const auto& p : params_) {
    if (!p.trainable) continue;
    state_.first_moment.emplace_back(p.value.shape());
    state_.second_moment.emplace_back(p.value.shape());
  }
}

void Adam::set_state(OptimizerState state) {
  std::size_t i = 0;
  for (const auto& p : params_) {
    if (!p.trainable) continue;
    if (i >= state.first_moment.size() || i >= state.second_moment.size() ||
        state.first_moment[i].shape() != p.value.shape() ||
        state.second_moment[i].shape() != p.value.shape()) {
      throw ValidationError("optimizer state does not match parameter '" + p.name + "'");
    }
    ++i;
  }
  if (i != state.first_moment.size() || i != state.second_moment.size()) {
    throw ValidationError("optimizer state has extra entries");
  }
  state_ = std::move(state);
}

void Adam::step(double lr, double weight_decay) {
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(kBeta1, t);
  const double c2 = 1.0 - std::pow(kBeta2, t);
  std::size_t i = 0;
  for (auto& p : params_) {
    if (!p.trainable) continue;
    auto& m = state_.first_moment[i];
    auto& v = state_.second_moment[i];
    ++i;
    const double decay = p.weight_decay ? weight_decay : 0.0;
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* mm = m.data();
    double* vv = v.data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      mm[j] = kBeta1 * mm[j] + (1.0 - kBeta1) * g[j];
      vv[j] = kBeta2 * vv[j] + (1.0 - kBeta2) * g[j] * g[j];
      const double update = (mm[j] / c1) / (std::sqrt(vv[j] / c2) + kEpsilon);
      w[j] -= lr * (update + decay * w[j]);
    }
  }
}

double gradient_norm(const ParameterSet& params) {
  double sum = 0.0;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    for (double g : p.grad.values()) sum += g * g;
  }
  return std::sqrt(sum);
}

double clip_gradients(ParameterSet& params, double max_norm) {
  const double norm = gradient_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params) {
      if (!p.trainable) continue;
      for (auto& g : p.grad.values()) g *= scale;
    }
  }
  return norm;
}

}  // namespace cakt
