#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "zebravit/keyvalue.hpp"
#include "zebravit/task.hpp"
#include "zebravit/vit.hpp"

namespace zebravit {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kWeightsFile[] = "model.weights";
inline constexpr char kMetadataFile[] = "model.meta";
inline constexpr char kCheckpointFormat[] = "zebravit-checkpoint-1";

struct Checkpoint {
  ModelConfig config;
  TaskKind task = TaskKind::fertility;
  std::uint64_t seed = 0;
  Parameters<float> params;
};

inline void write_model_config(KeyValues& kv, const ModelConfig& c, const std::string& prefix = "") {
  kv.set(prefix + "image_height", c.image_height);
  kv.set(prefix + "image_width", c.image_width);
  kv.set(prefix + "channels", c.channels);
  kv.set(prefix + "patch_size", c.patch_size);
  kv.set(prefix + "hidden_dim", c.hidden_dim);
  kv.set(prefix + "n_layers", c.n_layers);
  kv.set(prefix + "n_heads", c.n_heads);
  kv.set(prefix + "mlp_ratio", c.mlp_ratio);
  kv.set(prefix + "dropout", c.dropout);
  kv.set(prefix + "n_timesteps", c.n_timesteps);
  kv.set(prefix + "n_classes", c.n_classes);
  kv.set(prefix + "head", c.head == HeadActivation::sigmoid ? "sigmoid" : "softmax");
}

/// Overrides fields of `c` that are present in `kv`.
inline void read_model_config(const KeyValues& kv, ModelConfig& c, const std::string& prefix = "") {
  kv.read_into(prefix + "image_height", c.image_height);
  kv.read_into(prefix + "image_width", c.image_width);
  kv.read_into(prefix + "channels", c.channels);
  kv.read_into(prefix + "patch_size", c.patch_size);
  kv.read_into(prefix + "hidden_dim", c.hidden_dim);
  kv.read_into(prefix + "n_layers", c.n_layers);
  kv.read_into(prefix + "n_heads", c.n_heads);
  kv.read_into(prefix + "mlp_ratio", c.mlp_ratio);
  kv.read_into(prefix + "dropout", c.dropout);
  kv.read_into(prefix + "n_timesteps", c.n_timesteps);
  kv.read_into(prefix + "n_classes", c.n_classes);
  if (kv.contains(prefix + "head")) {
    const auto& h = kv.get(prefix + "head");
    if (h == "sigmoid") c.head = HeadActivation::sigmoid;
    else if (h == "softmax") c.head = HeadActivation::softmax;
    else throw std::invalid_argument("unknown head activation '" + h + "'");
  }
}

/// Writes `model.weights` (binary) and `model.meta` (key=value) into dir.
inline void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& config, TaskKind task,
                            std::uint64_t seed, const Parameters<float>& params) {
  std::filesystem::create_directories(dir);
  const auto tensors = params.tensors();
  {
    std::ofstream out(dir / kWeightsFile, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + (dir / kWeightsFile).string());
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
    out.write("ZVWT", 4);
    put_u32(1);
    put_u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& nt : tensors) {
      put_u32(static_cast<std::uint32_t>(nt.name.size()));
      out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
      put_u32(static_cast<std::uint32_t>(nt.tensor->rows()));
      put_u32(static_cast<std::uint32_t>(nt.tensor->cols()));
      out.write(reinterpret_cast<const char*>(nt.tensor->data()),
                static_cast<std::streamsize>(nt.tensor->size() * sizeof(float)));
    }
    if (!out) throw CheckpointError("failed writing " + (dir / kWeightsFile).string());
  }
  KeyValues meta;
  meta.set("format", kCheckpointFormat);
  meta.set("task", std::string(to_string(task)));
  meta.set("seed", static_cast<unsigned long long>(seed));
  meta.set("n_tensors", static_cast<unsigned long long>(tensors.size()));
  write_model_config(meta, config);
  meta.save(dir / kMetadataFile);
}

/// Loads a checkpoint directory, rejecting inconsistent or truncated blobs.
inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto meta = KeyValues::load(dir / kMetadataFile);
  if (meta.get("format") != kCheckpointFormat) throw CheckpointError("unsupported checkpoint format '" + meta.get("format") + "'");
  Checkpoint ck;
  ck.task = parse_task_kind(meta.get("task"));
  ck.seed = meta.get_as<std::uint64_t>("seed");
  read_model_config(meta, ck.config);
  ck.config.validate();
  ck.params = Parameters<float>::zeros(ck.config);

  std::ifstream in(dir / kWeightsFile, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + (dir / kWeightsFile).string());
  auto get_u32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw CheckpointError("truncated weights blob");
    return v;
  };
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "ZVWT") throw CheckpointError("not a weights blob");
  if (get_u32() != 1) throw CheckpointError("unsupported weights version");
  auto tensors = ck.params.tensors();
  if (get_u32() != tensors.size()) throw CheckpointError("tensor count does not match the configuration");
  for (auto& nt : tensors) {
    std::string name(get_u32(), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rows = get_u32(), cols = get_u32();
    if (name != nt.name || rows != nt.tensor->rows() || cols != nt.tensor->cols())
      throw CheckpointError("tensor '" + name + "' does not match the configuration (expected '" + nt.name + "')");
    in.read(reinterpret_cast<char*>(nt.tensor->data()), static_cast<std::streamsize>(nt.tensor->size() * sizeof(float)));
    if (!in) throw CheckpointError("truncated weights blob");
  }
  return ck;
}

/// Loads and checks that the stored configuration equals `expected`.
inline Checkpoint load_checkpoint(const std::filesystem::path& dir, const ModelConfig& expected) {
  auto ck = load_checkpoint(dir);
  if (!(ck.config == expected)) throw CheckpointError("checkpoint configuration does not match the requested model");
  return ck;
}

}  // namespace zebravit
