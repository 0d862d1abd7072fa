#include "cakt/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "cakt/error.hpp"

namespace cakt {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'K', 'T', 'C', 'K', 'P', 'T'};

const char* kind_name(TensorKind kind) {
  switch (kind) {
    case TensorKind::kParameter:
      return "param";
    case TensorKind::kBuffer:
      return "buffer";
    case TensorKind::kAdamFirst:
      return "adam_m";
    case TensorKind::kAdamSecond:
      return "adam_v";
  }
  return "param";
}

TensorKind parse_kind(const std::string& name) {
  if (name == "param") return TensorKind::kParameter;
  if (name == "buffer") return TensorKind::kBuffer;
  if (name == "adam_m") return TensorKind::kAdamFirst;
  if (name == "adam_v") return TensorKind::kAdamSecond;
  throw ParseError(0, "unknown tensor kind '" + name + "' in checkpoint");
}

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw ParseError(0, "truncated checkpoint");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return value;
}

// JSON has no NaN; a null stands in for it.
nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

double number_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

nlohmann::json model_json(const ModelConfig& c) {
  return {{"num_concepts", c.num_concepts}, {"k", c.k},
          {"height", c.height},             {"width", c.width},
          {"embed_dim", c.d_e()},           {"hidden_dim", c.d_h()},
          {"variant", variant_name(c.variant)}, {"seed", c.seed}};
}

ModelConfig model_from(const nlohmann::json& j) {
  ModelConfig c;
  c.num_concepts = j.at("num_concepts").get<int>();
  c.k = j.at("k").get<int>();
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

nlohmann::json train_json(const TrainConfig& c) {
  nlohmann::json j = {{"lr", c.lr},
                      {"lr_decay", c.lr_decay},
                      {"decay_every", c.decay_every},
                      {"l2", c.l2},
                      {"batch_size", c.batch_size},
                      {"epochs", c.epochs},
                      {"seed", c.seed},
                      {"clip_norm", c.clip_norm}};
  j["early_stop_patience"] =
      c.early_stop_patience ? nlohmann::json(*c.early_stop_patience) : nlohmann::json(nullptr);
  return j;
}

TrainConfig train_from(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.at("lr").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.decay_every = j.at("decay_every").get<int>();
  c.l2 = j.at("l2").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.clip_norm = j.at("clip_norm").get<double>();
  if (!j.at("early_stop_patience").is_null()) {
    c.early_stop_patience = j.at("early_stop_patience").get<int>();
  }
  return c;
}

}  // namespace

std::string Checkpoint::serialize() const {
  nlohmann::json header;
  header["model"] = model_json(model);
  header["train"] = train_json(train);
  header["epoch"] = epoch;
  header["val_auc"] = number_or_null(val_auc);
  header["optimizer_step"] = optimizer_step;
  auto list = nlohmann::json::array();
  for (const auto& t : tensors) {
    list.push_back({{"name", t.name}, {"kind", kind_name(t.kind)}, {"shape", t.value.shape()}});
  }
  header["tensors"] = std::move(list);
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& t : tensors) {
    for (double v : t.value.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(0, "not a checkpoint file (bad magic)");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kVersion) {
    throw ParseError(0, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto length = get_le<std::uint64_t>(bytes, pos);
  if (pos + length > bytes.size()) throw ParseError(0, "truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, length));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("corrupt checkpoint header: ") + e.what());
  }
  pos += length;

  Checkpoint ck;
  try {
    ck.model = model_from(header.at("model"));
    ck.train = train_from(header.at("train"));
    ck.epoch = header.at("epoch").get<int>();
    ck.val_auc = number_from(header.at("val_auc"));
    ck.optimizer_step = header.at("optimizer_step").get<std::uint64_t>();
    for (const auto& entry : header.at("tensors")) {
      TensorRecord record;
      record.name = entry.at("name").get<std::string>();
      record.kind = parse_kind(entry.at("kind").get<std::string>());
      record.value = Tensor(entry.at("shape").get<std::vector<std::size_t>>());
      for (auto& v : record.value.values()) {
        v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
      }
      ck.tensors.push_back(std::move(record));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("corrupt checkpoint header: ") + e.what());
  }
  if (pos != bytes.size()) throw ParseError(0, "trailing bytes after checkpoint payload");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const std::string bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeFailure("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize(buffer.str());
}

std::string Checkpoint::digest() const { return fnv1a_hex(serialize()); }

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[hash & 0xf];
    hash >>= 4;
  }
  return out;
}

Checkpoint capture(const Model& model, const TrainConfig& train, const OptimizerState* optimizer,
                   int epoch, double val_auc) {
  Checkpoint ck;
  ck.model = model.config();
  ck.train = train;
  ck.epoch = epoch;
  ck.val_auc = val_auc;
  for (const auto& p : model.parameters()) {
    ck.tensors.push_back({p.name, p.trainable ? TensorKind::kParameter : TensorKind::kBuffer, p.value});
  }
  if (optimizer != nullptr) {
    ck.optimizer_step = optimizer->step;
    std::size_t i = 0;
    for (const auto& p : model.parameters()) {
      if (!p.trainable) continue;
      ck.tensors.push_back({p.name, TensorKind::kAdamFirst, optimizer->first_moment.at(i)});
      ck.tensors.push_back({p.name, TensorKind::kAdamSecond, optimizer->second_moment.at(i)});
      ++i;
    }
  }
  return ck;
}

void load_into(Model& model, const Checkpoint& checkpoint) {
  std::size_t loaded = 0;
  for (const auto& record : checkpoint.tensors) {
    if (record.kind != TensorKind::kParameter && record.kind != TensorKind::kBuffer) continue;
    Parameter* p = model.parameters().find(record.name);
    if (p == nullptr) throw ValidationError("checkpoint tensor '" + record.name + "' is not in the model");
    if (p->value.shape() != record.value.shape()) {
      throw ValidationError("checkpoint tensor '" + record.name + "' has the wrong shape");
    }
    p->value = record.value;
    ++loaded;
  }
  if (loaded != model.parameters().size()) {
    throw ValidationError("checkpoint is missing model tensors (" + std::to_string(loaded) + " of " +
                          std::to_string(model.parameters().size()) + ")");
  }
}

std::unique_ptr<Model> restore_model(const Checkpoint& checkpoint) {
  auto model = build_variant(checkpoint.model);
  load_into(*model, checkpoint);
  return model;
}

OptimizerState restore_optimizer(const Checkpoint& checkpoint, const Model& model) {
  OptimizerState state;
  state.step = checkpoint.optimizer_step;
  for (const auto& p : model.parameters()) {
    if (!p.trainable) continue;
    const Tensor* m = nullptr;
    const Tensor* v = nullptr;
    for (const auto& record : checkpoint.tensors) {
      if (record.name != p.name) continue;
      if (record.kind == TensorKind::kAdamFirst) m = &record.value;
      if (record.kind == TensorKind::kAdamSecond) v = &record.value;
    }
    if (m == nullptr || v == nullptr) {
      throw ValidationError("checkpoint has no optimizer state for '" + p.name + "'");
    }
    state.first_moment.push_back(*m);
    state.second_moment.push_back(*v);
  }
  return state;
}

}  // namespace cakt
