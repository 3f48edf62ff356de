#pragma once

// Checkpoint layout: "NWCK", u32 version, u64 header length, JSON header, then every tensor as
// little-endian float32 in header order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include <json.hpp>

#include "nowcast/models/models.hpp"
#include "nowcast/transform.hpp"

namespace nowcast::models {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'N', 'W', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::unique_ptr<Model> model;
  transform::NormStats norm;
  nlohmann::json extra;
};

inline void save_checkpoint(const std::filesystem::path& path, const Model& model, const transform::NormStats& norm,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<const nn::Tensor*> order;
  for (const auto& p : model.params().params()) {
    tensors.push_back({{"name", p.name}, {"kind", "param"}, {"shape", p.var->value.shape}});
    order.push_back(&p.var->value);
  }
  for (const auto& [name, t] : model.params().buffers()) {
    tensors.push_back({{"name", name}, {"kind", "buffer"}, {"shape", t.shape}});
    order.push_back(&t);
  }
  const nlohmann::json header{{"model", to_json(model.config())},
                              {"norm", transform::to_json(norm)},
                              {"tensors", tensors},
                              {"extra", extra}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    const std::uint64_t len = text.size();
    out.write(kCheckpointMagic, 4);
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const nn::Tensor* t : order) {
      out.write(reinterpret_cast<const char*>(t->ptr()), static_cast<std::streamsize>(t->size() * sizeof(float)));
    }
    if (!out) throw Error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw Error(path.string() + " is not a checkpoint");
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("truncated checkpoint header in " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  Checkpoint ck;
  ck.model = make_model(model_config_from_json(header.at("model")));
  ck.norm = transform::norm_stats_from_json(header.at("norm"));
  ck.extra = header.value("extra", nlohmann::json::object());

  auto& store = ck.model->params();
  const auto& entries = header.at("tensors");
  const std::size_t expected = store.params().size() + store.buffers().size();
  if (entries.size() != expected) throw Error("checkpoint tensor count does not match the model");
  for (const auto& e : entries) {
    const auto name = e.at("name").get<std::string>();
    nn::Tensor* dst = e.at("kind") == "param" ? &store.param(name).var->value : nullptr;
    if (!dst) {
      auto it = store.buffers().find(name);
      if (it == store.buffers().end()) throw Error("checkpoint has unknown tensor " + name);
      dst = &it->second;
    }
    if (e.at("shape").get<nn::Shape>() != dst->shape) throw Error("checkpoint tensor " + name + " has the wrong shape");
    in.read(reinterpret_cast<char*>(dst->ptr()), static_cast<std::streamsize>(dst->size() * sizeof(float)));
    if (!in) throw Error("truncated checkpoint data in " + path.string());
  }
  return ck;
}

}  // namespace nowcast::models
