#pragma once

// Shared fixtures and independent reference implementations for the tests.
// The references are deliberately naive so they can be read against the
// definitions rather than against the optimized code.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "cakt/conv3d.hpp"
#include "cakt/data.hpp"
#include "cakt/model.hpp"
#include "cakt/rng.hpp"

namespace cakt::test {

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / pairs;
}

/// Zero-padded, stride-1 cross-correlation over (depth, height, width),
/// written directly from the definition. `weight` is out x in x kd x kh x kw.
inline Volume reference_conv3d(const Volume& input, const std::vector<double>& weight,
                               std::size_t out_channels, KernelShape kernel, VolumeShape shape) {
  const std::size_t in_channels = input.channels();
  const std::size_t batch = input.batch();
  Volume out(out_channels, shape.voxels(), batch);
  const long pd = static_cast<long>(kernel.depth / 2);
  const long ph = static_cast<long>(kernel.height / 2);
  const long pw = static_cast<long>(kernel.width / 2);
  const long D = static_cast<long>(shape.depth);
  const long H = static_cast<long>(shape.height);
  const long W = static_cast<long>(shape.width);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < out_channels; ++o) {
      for (long z = 0; z < D; ++z) {
        for (long y = 0; y < H; ++y) {
          for (long x = 0; x < W; ++x) {
            double acc = 0.0;
            for (std::size_t c = 0; c < in_channels; ++c) {
              for (long a = 0; a < static_cast<long>(kernel.depth); ++a) {
                for (long b = 0; b < static_cast<long>(kernel.height); ++b) {
                  for (long d = 0; d < static_cast<long>(kernel.width); ++d) {
                    const long iz = z + a - pd;
                    const long iy = y + b - ph;
                    const long ix = x + d - pw;
                    if (iz < 0 || iz >= D || iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                    const std::size_t w_index =
                        (((o * in_channels + c) * kernel.depth + a) * kernel.height + b) *
                            kernel.width + d;
                    acc += weight[w_index] *
                           input.at(c, static_cast<std::size_t>((iz * H + iy) * W + ix), n);
                  }
                }
              }
            }
            out.at(o, static_cast<std::size_t>((z * H + y) * W + x), n) = acc;
          }
        }
      }
    }
  }
  return out;
}

inline Volume random_volume(std::size_t channels, std::size_t voxels, std::size_t batch,
                            std::uint64_t seed) {
  Rng rng(seed);
  Volume v(channels, voxels, batch);
  for (auto& x : v.data()) x = rng.uniform(-1.0, 1.0);
  return v;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

/// Central difference of `f` with respect to `x`, restoring `x` afterwards.
inline double central_difference(double& x, const std::function<double()>& f, double h = 1e-6) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

/// Small random dataset of `count` sequences with lengths in [min_len, max_len].
inline SequenceDataset random_dataset(std::size_t count, int num_concepts, std::size_t min_len,
                                      std::size_t max_len, std::uint64_t seed) {
  Rng rng(seed);
  SequenceDataset ds;
  ds.num_concepts = num_concepts;
  ds.provenance = "random:" + std::to_string(seed);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t len = min_len + rng.below(max_len - min_len + 1);
    std::vector<int> concepts(len);
    std::vector<int> responses(len);
    for (std::size_t t = 0; t < len; ++t) {
      concepts[t] = static_cast<int>(rng.below(static_cast<std::size_t>(num_concepts)));
      responses[t] = rng.bernoulli(0.6) ? 1 : 0;
    }
    ds.sequences.emplace_back("s" + std::to_string(s), std::move(concepts), std::move(responses),
                              num_concepts);
  }
  return ds;
}

inline ModelConfig tiny_config(Variant variant = Variant::kCakt, int num_concepts = 5) {
  ModelConfig c;
  c.num_concepts = num_concepts;
  c.k = 3;
  c.height = 4;
  c.width = 4;
  c.variant = variant;
  c.seed = 7;
  return c;
}

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cakt_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace cakt::test
