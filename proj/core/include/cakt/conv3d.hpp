#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cakt/parameters.hpp"

namespace cakt {

class Rng;

enum class Mode { kTrain, kEval };

struct VolumeShape {
  std::size_t depth = 1;   // time axis (k)
  std::size_t height = 1;  // H
  std::size_t width = 1;   // W
  std::size_t voxels() const noexcept { return depth * height * width; }
  friend bool operator==(const VolumeShape&, const VolumeShape&) = default;
};

/// Odd-sized kernel; convolutions pad by size/2 on each axis, stride 1.
struct KernelShape {
  std::size_t depth = 3;
  std::size_t height = 3;
  std::size_t width = 3;
  std::size_t taps() const noexcept { return depth * height * width; }
};

/// A batch of multi-channel volumes stored channel-major with the sample index
/// innermost: element (c, v, n) lives at (c * voxels + v) * batch + n. Every
/// per-voxel operation is then a contiguous loop over the batch.
class Volume {
 public:
  Volume() = default;
  Volume(std::size_t channels, std::size_t voxels, std::size_t batch)
      : channels_(channels), voxels_(voxels), batch_(batch), data_(channels * voxels * batch, 0.0) {}

  void reset(std::size_t channels, std::size_t voxels, std::size_t batch) {
    channels_ = channels;
    voxels_ = voxels;
    batch_ = batch;
    data_.assign(channels * voxels * batch, 0.0);
  }

  std::size_t channels() const noexcept { return channels_; }
  std::size_t voxels() const noexcept { return voxels_; }
  std::size_t batch() const noexcept { return batch_; }
  std::size_t size() const noexcept { return data_.size(); }

  double* row(std::size_t c, std::size_t v) noexcept { return data_.data() + (c * voxels_ + v) * batch_; }
  const double* row(std::size_t c, std::size_t v) const noexcept {
    return data_.data() + (c * voxels_ + v) * batch_;
  }
  double& at(std::size_t c, std::size_t v, std::size_t n) { return row(c, v)[n]; }
  double at(std::size_t c, std::size_t v, std::size_t n) const { return row(c, v)[n]; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

 private:
  std::size_t channels_ = 0;
  std::size_t voxels_ = 0;
  std::size_t batch_ = 0;
  std::vector<double> data_;
};

/// 3D convolution without bias. A kernel of depth 1 makes it a per-slice 2D
/// convolution with kernels shared across slices.
class Conv3d {
 public:
  Conv3d(ParameterSet& params, const std::string& name, const std::string& group,
         std::size_t in_channels, std::size_t out_channels, KernelShape kernel, VolumeShape shape);

  void init(Rng& rng);
  void forward(const Volume& input, Volume& output) const;
  /// Accumulates weight gradients; writes d(loss)/d(input) into `grad_input`
  /// when non-null.
  void backward(const Volume& input, const Volume& grad_output, Volume* grad_input);

  std::size_t in_channels() const noexcept { return in_channels_; }
  std::size_t out_channels() const noexcept { return out_channels_; }
  const Parameter& weight() const noexcept { return weight_; }

 private:
  struct Link {
    std::uint32_t tap;
    std::uint32_t voxel;
  };

  Parameter& weight_;  // out x in x kd x kh x kw
  std::size_t in_channels_;
  std::size_t out_channels_;
  KernelShape kernel_;
  VolumeShape shape_;
  // CSR adjacency: for each output voxel the (tap, input voxel) pairs that
  // feed it, and the transpose.
  std::vector<std::size_t> gather_offsets_;
  std::vector<Link> gather_links_;
  std::vector<std::size_t> scatter_offsets_;
  std::vector<Link> scatter_links_;
};

/// Per-channel batch normalization over (voxels, batch). Train mode uses batch
/// statistics (biased variance) and updates running statistics with the
/// unbiased variance; eval mode uses the running statistics.
class BatchNorm {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEpsilon = 1e-5;

  BatchNorm(ParameterSet& params, const std::string& name, const std::string& group,
            std::size_t channels);

  struct Cache {
    Volume normalized;
    std::vector<double> inv_std;
  };

  void init();
  void forward(const Volume& input, Volume& output, Mode mode, bool update_running,
               Cache& cache);
  void backward(const Cache& cache, Mode mode, const Volume& grad_output, Volume& grad_input);

 private:
  Parameter& gamma_;
  Parameter& beta_;
  Parameter& running_mean_;
  Parameter& running_var_;
  std::size_t channels_;
};

/// Timely squeeze-and-excitation: one weight in (0, 1) per time slice, shared
/// by every channel and spatial position of that slice.
class TimeSqueezeExcitation {
 public:
  TimeSqueezeExcitation(ParameterSet& params, const std::string& name, const std::string& group,
                        VolumeShape shape);

  static std::size_t bottleneck(std::size_t depth) noexcept { return depth / 2 > 0 ? depth / 2 : 1; }

  struct Cache {
    std::vector<double> squeeze;     // depth x batch
    std::vector<double> hidden_pre;  // bottleneck x batch
    std::vector<double> weights;     // depth x batch
  };

  void init(Rng& rng);
  void forward(const Volume& input, Volume& output, Cache& cache) const;
  void backward(const Volume& input, const Cache& cache, const Volume& grad_output,
                Volume& grad_input);

 private:
  Parameter& fc1_weight_;  // r x k
  Parameter& fc1_bias_;
  Parameter& fc2_weight_;  // k x r
  Parameter& fc2_bias_;
  VolumeShape shape_;
  std::size_t hidden_;
};

/// conv -> BN -> ReLU -> conv -> BN -> TSE, plus a 1x1x1 projection of the
/// block input, then ReLU.
class BasicBlock {
 public:
  BasicBlock(ParameterSet& params, const std::string& name, std::size_t in_channels,
             std::size_t out_channels, KernelShape kernel, VolumeShape shape);

  struct Cache {
    BatchNorm::Cache bn1;
    Volume relu1;
    BatchNorm::Cache bn2;
    Volume bn2_out;
    TimeSqueezeExcitation::Cache tse;
  };

  void init(Rng& rng);
  void forward(const Volume& input, Volume& output, Mode mode, bool update_running,
               Cache& cache);
  void backward(const Volume& input, const Volume& output, const Cache& cache, Mode mode,
                const Volume& grad_output, Volume& grad_input);

  std::size_t in_channels() const noexcept { return conv1_.in_channels(); }
  std::size_t out_channels() const noexcept { return conv2_.out_channels(); }

 private:
  Conv3d conv1_;
  BatchNorm bn1_;
  Conv3d conv2_;
  BatchNorm bn2_;
  TimeSqueezeExcitation tse_;
  Conv3d downsample_;
  VolumeShape shape_;
};

/// Four BasicBlocks with channel plan 1->4, 4->8, 8->4, 4->1.
class ConvStack {
 public:
  static constexpr std::array<std::array<std::size_t, 2>, 4> kChannelPlan{
      {{1, 4}, {4, 8}, {8, 4}, {4, 1}}};

  ConvStack(ParameterSet& params, const std::string& name, KernelShape kernel, VolumeShape shape);

  struct Cache {
    Mode mode = Mode::kTrain;
    std::vector<Volume> activations;  // input, then each block's output
    std::vector<BasicBlock::Cache> blocks;
  };

  void init(Rng& rng);
  /// Consumes `input` (1 channel); returns the final activation (1 channel).
  const Volume& forward(Volume input, Mode mode, bool update_running, Cache& cache);
  void backward(const Cache& cache, const Volume& grad_output, Volume& grad_input);

  const std::vector<BasicBlock>& blocks() const noexcept { return blocks_; }
  VolumeShape shape() const noexcept { return shape_; }

 private:
  std::vector<BasicBlock> blocks_;
  VolumeShape shape_;
};

}  // namespace cakt
