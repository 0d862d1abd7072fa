#include "cakt/lstm.hpp"

#include <cmath>

#include "cakt/error.hpp"
#include "cakt/rng.hpp"

namespace cakt {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Lstm::Lstm(ParameterSet& params, const std::string& name, const std::string& group,
           std::size_t input_size, std::size_t hidden_size)
    : input_weights_(params.add(name + ".weight_ih", group, {4 * hidden_size, input_size})),
      recurrent_weights_(params.add(name + ".weight_hh", group, {4 * hidden_size, hidden_size})),
      bias_(params.add(name + ".bias", group, {4 * hidden_size}, {.weight_decay = false})),
      input_size_(input_size),
      hidden_size_(hidden_size) {}

void Lstm::init(Rng& rng) {
  init_uniform(input_weights_.value, 1.0 / std::sqrt(static_cast<double>(input_size_)), rng);
  init_orthogonal_blocks(recurrent_weights_.value, 4, rng);
  bias_.value.fill(0.0);
}

void Lstm::forward(std::span<const double> inputs, std::size_t steps, Trace& trace) const {
  const std::size_t n_in = input_size_;
  const std::size_t n_h = hidden_size_;
  if (inputs.size() < steps * n_in) throw ValidationError("LSTM input too short");
  trace.steps = steps;
  trace.inputs.assign(inputs.begin(), inputs.begin() + static_cast<std::ptrdiff_t>(steps * n_in));
  trace.gates.assign(steps * 4 * n_h, 0.0);
  trace.cells.assign(steps * n_h, 0.0);
  trace.hidden.assign(steps * n_h, 0.0);

  const double* wx = input_weights_.value.data();
  const double* wh = recurrent_weights_.value.data();
  const double* b = bias_.value.data();
  std::vector<double> pre(4 * n_h);
  for (std::size_t t = 0; t < steps; ++t) {
    const double* x = trace.inputs.data() + t * n_in;
    const double* h_prev = t == 0 ? nullptr : trace.hidden.data() + (t - 1) * n_h;
    const double* c_prev = t == 0 ? nullptr : trace.cells.data() + (t - 1) * n_h;
    for (std::size_t r = 0; r < 4 * n_h; ++r) {
      double acc = b[r];
      const double* wrow = wx + r * n_in;
      for (std::size_t j = 0; j < n_in; ++j) acc += wrow[j] * x[j];
      if (h_prev != nullptr) {
        const double* hrow = wh + r * n_h;
        for (std::size_t j = 0; j < n_h; ++j) acc += hrow[j] * h_prev[j];
      }
      pre[r] = acc;
    }
    double* gates = trace.gates.data() + t * 4 * n_h;
    double* cell = trace.cells.data() + t * n_h;
    double* hidden = trace.hidden.data() + t * n_h;
    for (std::size_t j = 0; j < n_h; ++j) {
      const double i_gate = sigmoid(pre[j]);
      const double f_gate = sigmoid(pre[n_h + j]);
      const double g_gate = std::tanh(pre[2 * n_h + j]);
      const double o_gate = sigmoid(pre[3 * n_h + j]);
      gates[j] = i_gate;
      gates[n_h + j] = f_gate;
      gates[2 * n_h + j] = g_gate;
      gates[3 * n_h + j] = o_gate;
      cell[j] = (c_prev != nullptr ? f_gate * c_prev[j] : 0.0) + i_gate * g_gate;
      hidden[j] = o_gate * std::tanh(cell[j]);
    }
  }
}

void Lstm::backward(const Trace& trace, std::span<const double> grad_hidden,
                    std::span<double> grad_inputs) {
  const std::size_t n_in = input_size_;
  const std::size_t n_h = hidden_size_;
  const std::size_t steps = trace.steps;
  if (grad_hidden.size() < steps * n_h) throw ValidationError("LSTM gradient too short");
  const bool want_inputs = !grad_inputs.empty();
  if (want_inputs && grad_inputs.size() < steps * n_in) {
    throw ValidationError("LSTM input-gradient buffer too short");
  }

  const double* wx = input_weights_.value.data();
  const double* wh = recurrent_weights_.value.data();
  double* dwx = input_weights_.grad.data();
  double* dwh = recurrent_weights_.grad.data();
  double* db = bias_.grad.data();

  std::vector<double> dh_next(n_h, 0.0);
  std::vector<double> dc_next(n_h, 0.0);
  std::vector<double> dpre(4 * n_h);
  for (std::size_t t = steps; t-- > 0;) {
    const double* gates = trace.gates.data() + t * 4 * n_h;
    const double* cell = trace.cells.data() + t * n_h;
    const double* c_prev = t == 0 ? nullptr : trace.cells.data() + (t - 1) * n_h;
    const double* h_prev = t == 0 ? nullptr : trace.hidden.data() + (t - 1) * n_h;
    const double* x = trace.inputs.data() + t * n_in;
    for (std::size_t j = 0; j < n_h; ++j) {
      const double i_gate = gates[j];
      const double f_gate = gates[n_h + j];
      const double g_gate = gates[2 * n_h + j];
      const double o_gate = gates[3 * n_h + j];
      const double tanh_c = std::tanh(cell[j]);
      const double dh = grad_hidden[t * n_h + j] + dh_next[j];
      const double d_o = dh * tanh_c;
      const double dc = dh * o_gate * (1.0 - tanh_c * tanh_c) + dc_next[j];
      const double d_i = dc * g_gate;
      const double d_g = dc * i_gate;
      const double d_f = c_prev != nullptr ? dc * c_prev[j] : 0.0;
      dc_next[j] = dc * f_gate;
      dpre[j] = d_i * i_gate * (1.0 - i_gate);
      dpre[n_h + j] = d_f * f_gate * (1.0 - f_gate);
      dpre[2 * n_h + j] = d_g * (1.0 - g_gate * g_gate);
      dpre[3 * n_h + j] = d_o * o_gate * (1.0 - o_gate);
    }
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    if (want_inputs) {
      double* dx = grad_inputs.data() + t * n_in;
      for (std::size_t j = 0; j < n_in; ++j) dx[j] = 0.0;
    }
    for (std::size_t r = 0; r < 4 * n_h; ++r) {
      const double g = dpre[r];
      db[r] += g;
      double* dwrow = dwx + r * n_in;
      for (std::size_t j = 0; j < n_in; ++j) dwrow[j] += g * x[j];
      if (want_inputs) {
        const double* wrow = wx + r * n_in;
        double* dx = grad_inputs.data() + t * n_in;
        for (std::size_t j = 0; j < n_in; ++j) dx[j] += g * wrow[j];
      }
      if (h_prev != nullptr) {
        double* dhrow = dwh + r * n_h;
        const double* hrow = wh + r * n_h;
        for (std::size_t j = 0; j < n_h; ++j) {
          dhrow[j] += g * h_prev[j];
          dh_next[j] += g * hrow[j];
        }
      }
    }
  }
}

}  // namespace cakt
