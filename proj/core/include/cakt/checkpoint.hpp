#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "cakt/model.hpp"
#include "cakt/optim.hpp"
#include "cakt/tensor.hpp"

namespace cakt {

enum class TensorKind { kParameter, kBuffer, kAdamFirst, kAdamSecond };

struct TensorRecord {
  std::string name;
  TensorKind kind = TensorKind::kParameter;
  Tensor value;
};

/// Everything needed to resume or evaluate a run: both configs, every model
/// tensor by name (parameters, batch-norm running statistics, the decay
/// parameter) and the optimizer moments.
///
/// On disk: "CAKTCKPT", u32 version, u64 header length, a JSON header, then the
/// tensor payloads as little-endian float64 in header order.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig model;
  TrainConfig train;
  int epoch = 0;
  double val_auc = 0.0;
  std::uint64_t optimizer_step = 0;
  std::vector<TensorRecord> tensors;

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// FNV-1a 64 of the serialized bytes, as 16 hex digits.
  std::string digest() const;
};

Checkpoint capture(const Model& model, const TrainConfig& train, const OptimizerState* optimizer,
                   int epoch = 0, double val_auc = 0.0);

/// Copies parameter and buffer values into `model`; names and shapes must match.
void load_into(Model& model, const Checkpoint& checkpoint);
std::unique_ptr<Model> restore_model(const Checkpoint& checkpoint);
OptimizerState restore_optimizer(const Checkpoint& checkpoint, const Model& model);

std::string fnv1a_hex(std::string_view bytes);

}  // namespace cakt
