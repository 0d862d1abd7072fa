#include "cakt/attention.hpp"

#include <algorithm>
#include <cmath>

#include "cakt/rng.hpp"

namespace cakt {

namespace {

// out (rows x dim) = in (rows x dim) * w (dim x dim)
void project(const double* in, const double* w, double* out, std::size_t rows, std::size_t dim) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out + r * dim;
    std::fill(o, o + dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) {
      const double x = in[r * dim + i];
      const double* wr = w + i * dim;
      for (std::size_t j = 0; j < dim; ++j) o[j] += x * wr[j];
    }
  }
}

// dw += in^T * grad ; grad_in += grad * w^T
void project_backward(const double* in, const double* w, const double* grad, double* dw,
                      double* grad_in, std::size_t rows, std::size_t dim) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* g = grad + r * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      const double x = in[r * dim + i];
      const double* wr = w + i * dim;
      double* dwr = dw + i * dim;
      double acc = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        dwr[j] += x * g[j];
        acc += g[j] * wr[j];
      }
      grad_in[r * dim + i] += acc;
    }
  }
}

}  // namespace

SelfAttentionPool::SelfAttentionPool(ParameterSet& params, const std::string& name,
                                     const std::string& group, std::size_t dim)
    : query_(params.add(name + ".query", group, {dim, dim})),
      key_(params.add(name + ".key", group, {dim, dim})),
      value_(params.add(name + ".value", group, {dim, dim})),
      dim_(dim) {}

void SelfAttentionPool::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim_));
  init_uniform(query_.value, bound, rng);
  init_uniform(key_.value, bound, rng);
  init_uniform(value_.value, bound, rng);
}

void SelfAttentionPool::forward(std::span<const double> inputs, std::size_t rows,
                                std::span<double> output, Trace& trace) const {
  const std::size_t d = dim_;
  trace.rows = rows;
  trace.inputs.assign(inputs.begin(), inputs.begin() + static_cast<std::ptrdiff_t>(rows * d));
  trace.queries.resize(rows * d);
  trace.keys.resize(rows * d);
  trace.values.resize(rows * d);
  trace.attention.resize(rows * rows);
  project(trace.inputs.data(), query_.value.data(), trace.queries.data(), rows, d);
  project(trace.inputs.data(), key_.value.data(), trace.keys.data(), rows, d);
  project(trace.inputs.data(), value_.value.data(), trace.values.data(), rows, d);

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < rows; ++i) {
    double* a = trace.attention.data() + i * rows;
    double peak = -INFINITY;
    for (std::size_t j = 0; j < rows; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += trace.queries[i * d + c] * trace.keys[j * d + c];
      a[j] = s * scale;
      peak = std::max(peak, a[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < rows; ++j) {
      a[j] = std::exp(a[j] - peak);
      total += a[j];
    }
    for (std::size_t j = 0; j < rows; ++j) a[j] /= total;
  }
  std::fill(output.begin(), output.begin() + static_cast<std::ptrdiff_t>(d), 0.0);
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < rows; ++j) {
      const double w = trace.attention[i * rows + j] * inv_rows;
      for (std::size_t c = 0; c < d; ++c) output[c] += w * trace.values[j * d + c];
    }
  }
}

void SelfAttentionPool::backward(const Trace& trace, std::span<const double> grad_output,
                                 std::span<double> grad_inputs) {
  const std::size_t d = dim_;
  const std::size_t rows = trace.rows;
  const double inv_rows = 1.0 / static_cast<double>(rows);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  // Every attended row receives grad_output / rows.
  std::vector<double> grad_values(rows * d, 0.0);
  std::vector<double> grad_scores(rows * rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* a = trace.attention.data() + i * rows;
    double weighted = 0.0;
    std::vector<double> grad_attn(rows, 0.0);
    for (std::size_t j = 0; j < rows; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        s += grad_output[c] * trace.values[j * d + c];
        grad_values[j * d + c] += a[j] * grad_output[c] * inv_rows;
      }
      grad_attn[j] = s * inv_rows;
      weighted += grad_attn[j] * a[j];
    }
    for (std::size_t j = 0; j < rows; ++j) {
      grad_scores[i * rows + j] = a[j] * (grad_attn[j] - weighted) * scale;
    }
  }
  std::vector<double> grad_queries(rows * d, 0.0);
  std::vector<double> grad_keys(rows * d, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < rows; ++j) {
      const double g = grad_scores[i * rows + j];
      for (std::size_t c = 0; c < d; ++c) {
        grad_queries[i * d + c] += g * trace.keys[j * d + c];
        grad_keys[j * d + c] += g * trace.queries[i * d + c];
      }
    }
  }
  std::fill(grad_inputs.begin(), grad_inputs.begin() + static_cast<std::ptrdiff_t>(rows * d), 0.0);
  project_backward(trace.inputs.data(), query_.value.data(), grad_queries.data(),
                   query_.grad.data(), grad_inputs.data(), rows, d);
  project_backward(trace.inputs.data(), key_.value.data(), grad_keys.data(), key_.grad.data(),
                   grad_inputs.data(), rows, d);
  project_backward(trace.inputs.data(), value_.value.data(), grad_values.data(),
                   value_.grad.data(), grad_inputs.data(), rows, d);
}

}  // namespace cakt
