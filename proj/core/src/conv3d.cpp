#include "cakt/conv3d.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cakt/error.hpp"
#include "cakt/rng.hpp"

namespace cakt {

namespace {

// Samples are processed in fixed-size column blocks so the rows touched by
// one inner loop stay in cache.
constexpr std::size_t kBlock = 128;

inline void axpy(double a, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

struct Term {
  double weight;
  const double* row;
};

// y += sum_t terms[t].weight * terms[t].row, four rows per pass over y.
inline void accumulate(const std::vector<Term>& terms, double* __restrict y, std::size_t n) {
  std::size_t t = 0;
  for (; t + 4 <= terms.size(); t += 4) {
    const double w0 = terms[t].weight;
    const double w1 = terms[t + 1].weight;
    const double w2 = terms[t + 2].weight;
    const double w3 = terms[t + 3].weight;
    const double* __restrict x0 = terms[t].row;
    const double* __restrict x1 = terms[t + 1].row;
    const double* __restrict x2 = terms[t + 2].row;
    const double* __restrict x3 = terms[t + 3].row;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] += (w0 * x0[i] + w1 * x1[i]) + (w2 * x2[i] + w3 * x3[i]);
    }
  }
  for (; t < terms.size(); ++t) axpy(terms[t].weight, terms[t].row, y, n);
}

inline double dot(const double* __restrict x, const double* __restrict y, std::size_t n) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc[0] += x[i] * y[i];
    acc[1] += x[i + 1] * y[i + 1];
    acc[2] += x[i + 2] * y[i + 2];
    acc[3] += x[i + 3] * y[i + 3];
  }
  for (; i < n; ++i) acc[0] += x[i] * y[i];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

// Four dot products sharing the left operand.
inline void dot4(const double* __restrict g, const double* __restrict x0,
                 const double* __restrict x1, const double* __restrict x2,
                 const double* __restrict x3, std::size_t n, double out[4]) {
  double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    a0 += g[i] * x0[i];
    a1 += g[i] * x1[i];
    a2 += g[i] * x2[i];
    a3 += g[i] * x3[i];
  }
  out[0] = a0;
  out[1] = a1;
  out[2] = a2;
  out[3] = a3;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// ---------------------------------------------------------------- Conv3d

Conv3d::Conv3d(ParameterSet& params, const std::string& name, const std::string& group,
               std::size_t in_channels, std::size_t out_channels, KernelShape kernel,
               VolumeShape shape)
    : weight_(params.add(name + ".weight", group,
                         {out_channels, in_channels, kernel.depth, kernel.height, kernel.width})),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      shape_(shape) {
  if (kernel.depth % 2 == 0 || kernel.height % 2 == 0 || kernel.width % 2 == 0) {
    throw ValidationError("convolution kernels must have odd extents");
  }
  const auto pd = static_cast<long>(kernel.depth / 2);
  const auto ph = static_cast<long>(kernel.height / 2);
  const auto pw = static_cast<long>(kernel.width / 2);
  const auto D = static_cast<long>(shape.depth);
  const auto H = static_cast<long>(shape.height);
  const auto W = static_cast<long>(shape.width);
  const std::size_t voxels = shape.voxels();

  std::vector<std::vector<Link>> gather(voxels);
  std::vector<std::vector<Link>> scatter(voxels);
  for (long z = 0; z < D; ++z) {
    for (long y = 0; y < H; ++y) {
      for (long x = 0; x < W; ++x) {
        const auto out_voxel = static_cast<std::uint32_t>((z * H + y) * W + x);
        std::uint32_t tap = 0;
        for (long dz = -pd; dz <= pd; ++dz) {
          for (long dy = -ph; dy <= ph; ++dy) {
            for (long dx = -pw; dx <= pw; ++dx, ++tap) {
              const long iz = z + dz;
              const long iy = y + dy;
              const long ix = x + dx;
              if (iz < 0 || iz >= D || iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              const auto in_voxel = static_cast<std::uint32_t>((iz * H + iy) * W + ix);
              gather[out_voxel].push_back({tap, in_voxel});
              scatter[in_voxel].push_back({tap, out_voxel});
            }
          }
        }
      }
    }
  }
  auto flatten = [](const std::vector<std::vector<Link>>& lists, std::vector<std::size_t>& offsets,
                    std::vector<Link>& links) {
    offsets.assign(1, 0);
    for (const auto& list : lists) {
      links.insert(links.end(), list.begin(), list.end());
      offsets.push_back(links.size());
    }
  };
  flatten(gather, gather_offsets_, gather_links_);
  flatten(scatter, scatter_offsets_, scatter_links_);
}

void Conv3d::init(Rng& rng) {
  const double fan_in = static_cast<double>(in_channels_ * kernel_.taps());
  init_uniform(weight_.value, 1.0 / std::sqrt(fan_in), rng);
}

void Conv3d::forward(const Volume& input, Volume& output) const {
  if (input.channels() != in_channels_ || input.voxels() != shape_.voxels()) {
    throw ValidationError("convolution input has " + std::to_string(input.channels()) +
                          " channels / " + std::to_string(input.voxels()) + " voxels, expected " +
                          std::to_string(in_channels_) + " / " + std::to_string(shape_.voxels()));
  }
  const std::size_t batch = input.batch();
  const std::size_t voxels = shape_.voxels();
  const std::size_t taps = kernel_.taps();
  output.reset(out_channels_, voxels, batch);
  const double* w = weight_.value.data();
  std::vector<Term> terms;
  for (std::size_t n0 = 0; n0 < batch; n0 += kBlock) {
    const std::size_t len = std::min(kBlock, batch - n0);
    for (std::size_t co = 0; co < out_channels_; ++co) {
      for (std::size_t v = 0; v < voxels; ++v) {
        terms.clear();
        for (std::size_t e = gather_offsets_[v]; e < gather_offsets_[v + 1]; ++e) {
          const Link link = gather_links_[e];
          for (std::size_t ci = 0; ci < in_channels_; ++ci) {
            terms.push_back({w[(co * in_channels_ + ci) * taps + link.tap],
                             input.row(ci, link.voxel) + n0});
          }
        }
        accumulate(terms, output.row(co, v) + n0, len);
      }
    }
  }
}

void Conv3d::backward(const Volume& input, const Volume& grad_output, Volume* grad_input) {
  const std::size_t batch = input.batch();
  const std::size_t voxels = shape_.voxels();
  const std::size_t taps = kernel_.taps();
  const double* w = weight_.value.data();
  double* dw = weight_.grad.data();
  if (grad_input != nullptr) grad_input->reset(in_channels_, voxels, batch);
  std::vector<Term> terms;
  std::vector<std::size_t> slots;
  for (std::size_t n0 = 0; n0 < batch; n0 += kBlock) {
    const std::size_t len = std::min(kBlock, batch - n0);
    for (std::size_t co = 0; co < out_channels_; ++co) {
      for (std::size_t v = 0; v < voxels; ++v) {
        const double* g = grad_output.row(co, v) + n0;
        terms.clear();
        slots.clear();
        for (std::size_t e = gather_offsets_[v]; e < gather_offsets_[v + 1]; ++e) {
          const Link link = gather_links_[e];
          for (std::size_t ci = 0; ci < in_channels_; ++ci) {
            terms.push_back({0.0, input.row(ci, link.voxel) + n0});
            slots.push_back((co * in_channels_ + ci) * taps + link.tap);
          }
        }
        std::size_t t = 0;
        double partial[4];
        for (; t + 4 <= terms.size(); t += 4) {
          dot4(g, terms[t].row, terms[t + 1].row, terms[t + 2].row, terms[t + 3].row, len, partial);
          for (std::size_t j = 0; j < 4; ++j) dw[slots[t + j]] += partial[j];
        }
        for (; t < terms.size(); ++t) dw[slots[t]] += dot(g, terms[t].row, len);
      }
    }
    if (grad_input == nullptr) continue;
    for (std::size_t ci = 0; ci < in_channels_; ++ci) {
      for (std::size_t v = 0; v < voxels; ++v) {
        terms.clear();
        for (std::size_t e = scatter_offsets_[v]; e < scatter_offsets_[v + 1]; ++e) {
          const Link link = scatter_links_[e];
          for (std::size_t co = 0; co < out_channels_; ++co) {
            terms.push_back({w[(co * in_channels_ + ci) * taps + link.tap],
                             grad_output.row(co, link.voxel) + n0});
          }
        }
        accumulate(terms, grad_input->row(ci, v) + n0, len);
      }
    }
  }
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(ParameterSet& params, const std::string& name, const std::string& group,
                     std::size_t channels)
    : gamma_(params.add(name + ".weight", group, {channels}, {.weight_decay = false})),
      beta_(params.add(name + ".bias", group, {channels}, {.weight_decay = false})),
      running_mean_(params.add(name + ".running_mean", group, {channels}, {.trainable = false})),
      running_var_(params.add(name + ".running_var", group, {channels}, {.trainable = false})),
      channels_(channels) {
  init();
}

void BatchNorm::init() {
  gamma_.value.fill(1.0);
  beta_.value.fill(0.0);
  running_mean_.value.fill(0.0);
  running_var_.value.fill(1.0);
}

void BatchNorm::forward(const Volume& input, Volume& output, Mode mode, bool update_running,
                        Cache& cache) {
  if (input.channels() != channels_) throw ValidationError("batch norm channel mismatch");
  const std::size_t voxels = input.voxels();
  const std::size_t batch = input.batch();
  const std::size_t count = voxels * batch;
  cache.normalized.reset(channels_, voxels, batch);
  cache.inv_std.assign(channels_, 0.0);
  output.reset(channels_, voxels, batch);
  for (std::size_t c = 0; c < channels_; ++c) {
    double mean = running_mean_.value[c];
    double var = running_var_.value[c];
    if (mode == Mode::kTrain && count > 0) {
      double sum = 0.0;
      for (std::size_t v = 0; v < voxels; ++v) {
        const double* x = input.row(c, v);
        for (std::size_t n = 0; n < batch; ++n) sum += x[n];
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t v = 0; v < voxels; ++v) {
        const double* x = input.row(c, v);
        for (std::size_t n = 0; n < batch; ++n) sq += (x[n] - mean) * (x[n] - mean);
      }
      var = sq / static_cast<double>(count);
      if (update_running) {
        const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
        running_mean_.value[c] = (1.0 - kMomentum) * running_mean_.value[c] + kMomentum * mean;
        running_var_.value[c] = (1.0 - kMomentum) * running_var_.value[c] + kMomentum * unbiased;
      }
    }
    const double inv_std = 1.0 / std::sqrt(var + kEpsilon);
    cache.inv_std[c] = inv_std;
    const double g = gamma_.value[c];
    const double b = beta_.value[c];
    for (std::size_t v = 0; v < voxels; ++v) {
      const double* x = input.row(c, v);
      double* xhat = cache.normalized.row(c, v);
      double* y = output.row(c, v);
      for (std::size_t n = 0; n < batch; ++n) {
        xhat[n] = (x[n] - mean) * inv_std;
        y[n] = g * xhat[n] + b;
      }
    }
  }
}

void BatchNorm::backward(const Cache& cache, Mode mode, const Volume& grad_output,
                         Volume& grad_input) {
  const std::size_t voxels = grad_output.voxels();
  const std::size_t batch = grad_output.batch();
  const double count = static_cast<double>(voxels * batch);
  grad_input.reset(channels_, voxels, batch);
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t v = 0; v < voxels; ++v) {
      const double* g = grad_output.row(c, v);
      const double* xhat = cache.normalized.row(c, v);
      for (std::size_t n = 0; n < batch; ++n) {
        sum_g += g[n];
        sum_gx += g[n] * xhat[n];
      }
    }
    gamma_.grad[c] += sum_gx;
    beta_.grad[c] += sum_g;
    const double scale = gamma_.value[c] * cache.inv_std[c];
    if (mode == Mode::kEval || count == 0.0) {
      for (std::size_t v = 0; v < voxels; ++v) {
        const double* g = grad_output.row(c, v);
        double* gi = grad_input.row(c, v);
        for (std::size_t n = 0; n < batch; ++n) gi[n] = scale * g[n];
      }
      continue;
    }
    const double mean_g = sum_g / count;
    const double mean_gx = sum_gx / count;
    for (std::size_t v = 0; v < voxels; ++v) {
      const double* g = grad_output.row(c, v);
      const double* xhat = cache.normalized.row(c, v);
      double* gi = grad_input.row(c, v);
      for (std::size_t n = 0; n < batch; ++n) gi[n] = scale * (g[n] - mean_g - xhat[n] * mean_gx);
    }
  }
}

// ---------------------------------------------------------------- TSE

TimeSqueezeExcitation::TimeSqueezeExcitation(ParameterSet& params, const std::string& name,
                                             const std::string& group, VolumeShape shape)
    : fc1_weight_(params.add(name + ".fc1.weight", group, {bottleneck(shape.depth), shape.depth})),
      fc1_bias_(params.add(name + ".fc1.bias", group, {bottleneck(shape.depth)},
                           {.weight_decay = false})),
      fc2_weight_(params.add(name + ".fc2.weight", group, {shape.depth, bottleneck(shape.depth)})),
      fc2_bias_(params.add(name + ".fc2.bias", group, {shape.depth}, {.weight_decay = false})),
      shape_(shape),
      hidden_(bottleneck(shape.depth)) {}

void TimeSqueezeExcitation::init(Rng& rng) {
  init_uniform(fc1_weight_.value, 1.0 / std::sqrt(static_cast<double>(shape_.depth)), rng);
  init_uniform(fc2_weight_.value, 1.0 / std::sqrt(static_cast<double>(hidden_)), rng);
  fc1_bias_.value.fill(0.0);
  fc2_bias_.value.fill(0.0);
}

void TimeSqueezeExcitation::forward(const Volume& input, Volume& output, Cache& cache) const {
  const std::size_t depth = shape_.depth;
  const std::size_t plane = shape_.height * shape_.width;
  const std::size_t channels = input.channels();
  const std::size_t batch = input.batch();
  const double norm = 1.0 / static_cast<double>(channels * plane);

  cache.squeeze.assign(depth * batch, 0.0);
  cache.hidden_pre.assign(hidden_ * batch, 0.0);
  cache.weights.assign(depth * batch, 0.0);
  for (std::size_t i = 0; i < depth; ++i) {
    double* s = cache.squeeze.data() + i * batch;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const double* x = input.row(c, i * plane + p);
        for (std::size_t n = 0; n < batch; ++n) s[n] += x[n];
      }
    }
    for (std::size_t n = 0; n < batch; ++n) s[n] *= norm;
  }
  std::vector<double> hidden(hidden_ * batch);
  for (std::size_t r = 0; r < hidden_; ++r) {
    double* pre = cache.hidden_pre.data() + r * batch;
    std::fill(pre, pre + batch, fc1_bias_.value[r]);
    for (std::size_t i = 0; i < depth; ++i) {
      axpy(fc1_weight_.value[r * depth + i], cache.squeeze.data() + i * batch, pre, batch);
    }
    for (std::size_t n = 0; n < batch; ++n) hidden[r * batch + n] = std::max(pre[n], 0.0);
  }
  for (std::size_t i = 0; i < depth; ++i) {
    double* w = cache.weights.data() + i * batch;
    std::fill(w, w + batch, fc2_bias_.value[i]);
    for (std::size_t r = 0; r < hidden_; ++r) {
      axpy(fc2_weight_.value[i * hidden_ + r], hidden.data() + r * batch, w, batch);
    }
    for (std::size_t n = 0; n < batch; ++n) w[n] = sigmoid(w[n]);
  }
  output.reset(channels, input.voxels(), batch);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < depth; ++i) {
      const double* w = cache.weights.data() + i * batch;
      for (std::size_t p = 0; p < plane; ++p) {
        const double* x = input.row(c, i * plane + p);
        double* y = output.row(c, i * plane + p);
        for (std::size_t n = 0; n < batch; ++n) y[n] = x[n] * w[n];
      }
    }
  }
}

void TimeSqueezeExcitation::backward(const Volume& input, const Cache& cache,
                                     const Volume& grad_output, Volume& grad_input) {
  const std::size_t depth = shape_.depth;
  const std::size_t plane = shape_.height * shape_.width;
  const std::size_t channels = input.channels();
  const std::size_t batch = input.batch();
  const double norm = 1.0 / static_cast<double>(channels * plane);

  // d(loss)/d(weight_i) then through the sigmoid.
  std::vector<double> dz2(depth * batch, 0.0);
  for (std::size_t i = 0; i < depth; ++i) {
    double* d = dz2.data() + i * batch;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const double* g = grad_output.row(c, i * plane + p);
        const double* x = input.row(c, i * plane + p);
        for (std::size_t n = 0; n < batch; ++n) d[n] += g[n] * x[n];
      }
    }
    const double* w = cache.weights.data() + i * batch;
    for (std::size_t n = 0; n < batch; ++n) d[n] *= w[n] * (1.0 - w[n]);
  }
  std::vector<double> hidden(hidden_ * batch);
  for (std::size_t j = 0; j < hidden_ * batch; ++j) hidden[j] = std::max(cache.hidden_pre[j], 0.0);
  std::vector<double> dz1(hidden_ * batch, 0.0);
  for (std::size_t i = 0; i < depth; ++i) {
    const double* d = dz2.data() + i * batch;
    for (std::size_t n = 0; n < batch; ++n) fc2_bias_.grad[i] += d[n];
    for (std::size_t r = 0; r < hidden_; ++r) {
      fc2_weight_.grad[i * hidden_ + r] += dot(d, hidden.data() + r * batch, batch);
      axpy(fc2_weight_.value[i * hidden_ + r], d, dz1.data() + r * batch, batch);
    }
  }
  std::vector<double> dsqueeze(depth * batch, 0.0);
  for (std::size_t r = 0; r < hidden_; ++r) {
    double* d = dz1.data() + r * batch;
    const double* pre = cache.hidden_pre.data() + r * batch;
    for (std::size_t n = 0; n < batch; ++n) d[n] = pre[n] > 0.0 ? d[n] : 0.0;
    for (std::size_t n = 0; n < batch; ++n) fc1_bias_.grad[r] += d[n];
    for (std::size_t i = 0; i < depth; ++i) {
      fc1_weight_.grad[r * depth + i] += dot(d, cache.squeeze.data() + i * batch, batch);
      axpy(fc1_weight_.value[r * depth + i], d, dsqueeze.data() + i * batch, batch);
    }
  }
  grad_input.reset(channels, input.voxels(), batch);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < depth; ++i) {
      const double* w = cache.weights.data() + i * batch;
      const double* ds = dsqueeze.data() + i * batch;
      for (std::size_t p = 0; p < plane; ++p) {
        const double* g = grad_output.row(c, i * plane + p);
        double* gi = grad_input.row(c, i * plane + p);
        for (std::size_t n = 0; n < batch; ++n) gi[n] = g[n] * w[n] + ds[n] * norm;
      }
    }
  }
}

// ---------------------------------------------------------------- BasicBlock

BasicBlock::BasicBlock(ParameterSet& params, const std::string& name, std::size_t in_channels,
                       std::size_t out_channels, KernelShape kernel, VolumeShape shape)
    : conv1_(params, name + ".conv1", "conv_kernels", in_channels, out_channels, kernel, shape),
      bn1_(params, name + ".bn1", "batch_norm", out_channels),
      conv2_(params, name + ".conv2", "conv_kernels", out_channels, out_channels, kernel, shape),
      bn2_(params, name + ".bn2", "batch_norm", out_channels),
      tse_(params, name + ".tse", "tse", shape),
      downsample_(params, name + ".downsample", "downsample", in_channels, out_channels,
                  KernelShape{1, 1, 1}, shape),
      shape_(shape) {}

void BasicBlock::init(Rng& rng) {
  conv1_.init(rng);
  bn1_.init();
  conv2_.init(rng);
  bn2_.init();
  tse_.init(rng);
  downsample_.init(rng);
}

void BasicBlock::forward(const Volume& input, Volume& output, Mode mode, bool update_running,
                         Cache& cache) {
  if (input.channels() != in_channels()) {
    throw ValidationError("BasicBlock expects " + std::to_string(in_channels()) +
                          " input channels, got " + std::to_string(input.channels()));
  }
  Volume scratch;
  Volume normalized;
  conv1_.forward(input, scratch);
  bn1_.forward(scratch, normalized, mode, update_running, cache.bn1);
  cache.relu1 = std::move(normalized);
  for (auto& v : cache.relu1.data()) v = std::max(v, 0.0);
  conv2_.forward(cache.relu1, scratch);
  bn2_.forward(scratch, cache.bn2_out, mode, update_running, cache.bn2);
  Volume excited;
  tse_.forward(cache.bn2_out, excited, cache.tse);
  downsample_.forward(input, output);
  auto& out = output.data();
  const auto& ex = excited.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i] + ex[i], 0.0);
}

void BasicBlock::backward(const Volume& input, const Volume& output, const Cache& cache, Mode mode,
                          const Volume& grad_output, Volume& grad_input) {
  Volume grad_pre(grad_output.channels(), grad_output.voxels(), grad_output.batch());
  {
    auto& gp = grad_pre.data();
    const auto& g = grad_output.data();
    const auto& out = output.data();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] = out[i] > 0.0 ? g[i] : 0.0;
  }
  Volume grad_a;
  Volume grad_b;
  tse_.backward(cache.bn2_out, cache.tse, grad_pre, grad_a);
  bn2_.backward(cache.bn2, mode, grad_a, grad_b);
  conv2_.backward(cache.relu1, grad_b, &grad_a);
  {
    auto& ga = grad_a.data();
    const auto& r = cache.relu1.data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = r[i] > 0.0 ? ga[i] : 0.0;
  }
  bn1_.backward(cache.bn1, mode, grad_a, grad_b);
  conv1_.backward(input, grad_b, &grad_input);
  downsample_.backward(input, grad_pre, &grad_a);
  auto& gi = grad_input.data();
  const auto& gd = grad_a.data();
  for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += gd[i];
}

// ---------------------------------------------------------------- ConvStack

ConvStack::ConvStack(ParameterSet& params, const std::string& name, KernelShape kernel,
                     VolumeShape shape)
    : shape_(shape) {
  blocks_.reserve(kChannelPlan.size());
  for (std::size_t b = 0; b < kChannelPlan.size(); ++b) {
    blocks_.emplace_back(params, name + ".block" + std::to_string(b + 1), kChannelPlan[b][0],
                         kChannelPlan[b][1], kernel, shape);
  }
}

void ConvStack::init(Rng& rng) {
  for (auto& block : blocks_) block.init(rng);
}

const Volume& ConvStack::forward(Volume input, Mode mode, bool update_running, Cache& cache) {
  if (input.channels() != 1 || input.voxels() != shape_.voxels()) {
    throw ValidationError("conv stack expects a single-channel k x H x W input");
  }
  cache.mode = mode;
  cache.activations.resize(blocks_.size() + 1);
  cache.blocks.resize(blocks_.size());
  cache.activations[0] = std::move(input);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    blocks_[b].forward(cache.activations[b], cache.activations[b + 1], mode, update_running,
                       cache.blocks[b]);
  }
  return cache.activations.back();
}

void ConvStack::backward(const Cache& cache, const Volume& grad_output, Volume& grad_input) {
  Volume grad = grad_output;
  for (std::size_t b = blocks_.size(); b-- > 0;) {
    Volume grad_in;
    blocks_[b].backward(cache.activations[b], cache.activations[b + 1], cache.blocks[b],
                        cache.mode, grad, grad_in);
    grad = std::move(grad_in);
  }
  grad_input = std::move(grad);
}

}  // namespace cakt
