#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "loop/model.hpp"
#include "loop/tensor.hpp"

namespace loop::ckpt {

using nlohmann::json;

inline constexpr char kMagic[8] = {'L', 'O', 'O', 'P', 'C', 'K', 'P', 'T'};
inline constexpr int kFormatVersion = 1;

inline json config_to_json(const model::ModelConfig& c) {
  json j;
  j["vocab_size"] = c.vocab_size;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["ffn_hidden"] = c.ffn_hidden;
  j["t_max"] = c.t_max;
  j["rope_base"] = c.rope_base;
  j["dtype"] = c.dtype;
  switch (c.gate_pooling) {
    case model::GatePooling::kMean: j["gate_pooling"] = "mean"; break;
    case model::GatePooling::kLastToken: j["gate_pooling"] = "last_token"; break;
    case model::GatePooling::kPerToken: j["gate_pooling"] = "per_token"; break;
  }
  j["tie_lm_head"] = c.tie_lm_head;
  j["gate_detach"] = c.gate_detach;
  return j;
}

inline model::ModelConfig config_from_json(const json& j) {
  model::ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.t_max = j.at("t_max").get<int>();
  c.rope_base = j.at("rope_base").get<double>();
  c.dtype = j.at("dtype").get<std::string>();
  c.gate_pooling =
      model::gate_pooling_from_string(j.at("gate_pooling").get<std::string>());
  c.tie_lm_head = j.at("tie_lm_head").get<bool>();
  c.gate_detach = j.at("gate_detach").get<bool>();
  return c;
}

// Container layout: 8-byte magic, u64 little-endian header length, UTF-8 JSON
// header, then raw little-endian tensor payloads at the offsets recorded in
// the manifest (relative to the end of the header).
template <class T>
void save_model(model::LoopModel<T>& m, const std::string& path) {
  json manifest = json::array();
  std::vector<std::pair<std::string, num::Tensor<T>*>> tensors;
  m.for_each_param([&](const std::string& name, num::Tensor<T>& t) {
    tensors.push_back({name, &t});
  });
  uint64_t offset = 0;
  const char* dtype = sizeof(T) == 4 ? "float32" : "float64";
  for (auto& [name, t] : tensors) {
    json e;
    e["name"] = name;
    e["shape"] = t->shape();
    e["dtype"] = dtype;
    e["offset"] = offset;
    manifest.push_back(e);
    offset += static_cast<uint64_t>(t->size()) * sizeof(T);
  }
  json header;
  header["format_version"] = kFormatVersion;
  header["config"] = config_to_json(m.cfg);
  header["tensors"] = manifest;
  std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw num::UsageError("cannot open checkpoint for writing: " + path);
  f.write(kMagic, 8);
  uint64_t hlen = hs.size();
  char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((hlen >> (8 * i)) & 0xff);
  f.write(lenbuf, 8);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (auto& [name, t] : tensors) {
    f.write(reinterpret_cast<const char*>(t->data().data()),
            static_cast<std::streamsize>(t->size() * sizeof(T)));
  }
  if (!f) throw num::UsageError("checkpoint write failed: " + path);
}

template <class T>
model::LoopModel<T> load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw num::UsageError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw num::UsageError("not a checkpoint file: " + path);
  char lenbuf[8];
  f.read(lenbuf, 8);
  uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i)
    hlen |= static_cast<uint64_t>(static_cast<uint8_t>(lenbuf[i])) << (8 * i);
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw num::UsageError("truncated checkpoint header: " + path);
  json header = json::parse(hs);
  if (header.at("format_version").get<int>() != kFormatVersion)
    throw num::UsageError("unsupported checkpoint version");
  auto cfg = config_from_json(header.at("config"));
  const char* want_dtype = sizeof(T) == 4 ? "float32" : "float64";

  // Skeleton with the right shapes; payloads overwrite the values.
  Rng dummy(0);
  auto m = model::LoopModel<T>::init(cfg, dummy);
  std::unordered_map<std::string, num::Tensor<T>*> by_name;
  m.for_each_param([&](const std::string& name, num::Tensor<T>& t) {
    by_name[name] = &t;
  });
  std::streampos payload_base = f.tellg();
  for (const auto& e : header.at("tensors")) {
    std::string name = e.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw num::UsageError("checkpoint tensor not in model: " + name);
    if (e.at("dtype").get<std::string>() != want_dtype)
      throw num::UsageError("checkpoint dtype mismatch for " + name);
    auto shape = e.at("shape").get<num::Shape>();
    if (shape != it->second->shape())
      throw num::UsageError("checkpoint shape mismatch for " + name);
    f.seekg(payload_base + static_cast<std::streamoff>(e.at("offset").get<uint64_t>()));
    f.read(reinterpret_cast<char*>(it->second->data().data()),
           static_cast<std::streamsize>(it->second->size() * sizeof(T)));
    if (!f) throw num::UsageError("truncated checkpoint payload: " + name);
  }
  return m;
}

}  // namespace loop::ckpt
