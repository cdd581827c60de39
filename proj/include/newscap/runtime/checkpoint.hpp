#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "json.hpp"
#include "newscap/core/adam.hpp"
#include "newscap/model/config.hpp"

namespace newscap::runtime {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'N', 'W', 'S', 'C', 'A', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  model::ModelConfig model;
  /// training knobs, stored verbatim for reference
  nlohmann::json train_config = nlohmann::json::object();
  ParamStore<float> params;
  std::optional<AdamState<float>> optimizer;
  std::uint32_t vocab_hash = 0;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  /// textual mt19937_64 state of the training stream
  std::string rng_state;
  double best_val_cider = 0.0;
};

namespace detail {

inline std::uint32_t crc(const void* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

struct BlobWriter {
  nlohmann::json index = nlohmann::json::array();
  std::string blobs;

  void add(const std::string& name, const Tensor<float>& t) {
    const auto bytes = t.size() * sizeof(float);
    const auto* data = reinterpret_cast<const char*>(t.data().data());
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blobs.size()}, {"bytes", bytes},
                     {"crc32", crc(data, bytes)}});
    blobs.append(data, bytes);
  }
};

}  // namespace detail

/// Serialized checkpoint: magic, u32 version, u64 header length, JSON
/// header, u32 header CRC, then the little-endian float32 blobs the header
/// indexes (each with its own CRC).
inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::BlobWriter w;
  for (std::size_t i = 0; i < c.params.size(); ++i) w.add("param/" + c.params.path(ParamId{i}), c.params.value(ParamId{i}));
  nlohmann::json adam = nullptr;
  if (c.optimizer) {
    const auto& o = *c.optimizer;
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      w.add("adam_m/" + c.params.path(ParamId{i}), o.first_moment.at(i));
      w.add("adam_v/" + c.params.path(ParamId{i}), o.second_moment.at(i));
    }
    adam = {{"step", o.step},
            {"base_lr", o.config.base_lr},
            {"beta1", o.config.beta1},
            {"beta2", o.config.beta2},
            {"epsilon", o.config.epsilon},
            {"warmup_steps", o.config.warmup_steps}};
  }
  nlohmann::json header = {{"format_version", kCheckpointVersion},
                           {"model", model::to_json(c.model)},
                           {"train", c.train_config},
                           {"vocab_hash", c.vocab_hash},
                           {"seed", c.seed},
                           {"step", c.step},
                           {"epoch", c.epoch},
                           {"rng_state", c.rng_state},
                           {"best_val_cider", c.best_val_cider},
                           {"optimizer", adam},
                           {"tensors", w.index}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint64_t>(out, h.size());
  out += h;
  detail::put<std::uint32_t>(out, detail::crc(h.data(), h.size()));
  out += w.blobs;
  return out;
}

/// Parses and fully validates a checkpoint before returning anything.
/// `expected_vocab_hash` (when given) must match the stored hash.
inline Checkpoint deserialize_checkpoint(const std::string& bytes,
                                         std::optional<std::uint32_t> expected_vocab_hash = std::nullopt) {
  if (bytes.size() < sizeof(kCheckpointMagic) || std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = detail::get<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint format version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  const auto hlen = detail::get<std::uint64_t>(bytes, pos);
  if (hlen > bytes.size() - pos) throw CheckpointError("checkpoint truncated");
  const std::string h = bytes.substr(pos, hlen);
  pos += hlen;
  if (detail::get<std::uint32_t>(bytes, pos) != detail::crc(h.data(), h.size()))
    throw CheckpointError("checkpoint header checksum mismatch");
  const std::size_t blob_base = pos;
  const auto header = nlohmann::json::parse(h);

  Checkpoint c;
  c.model = model::model_config_from_json(header.at("model"));
  c.train_config = header.at("train");
  c.vocab_hash = header.at("vocab_hash").get<std::uint32_t>();
  if (expected_vocab_hash && *expected_vocab_hash != c.vocab_hash) {
    throw CheckpointError("vocabulary hash mismatch: checkpoint " + std::to_string(c.vocab_hash) + ", vocabulary " +
                          std::to_string(*expected_vocab_hash));
  }
  c.seed = header.at("seed").get<std::uint64_t>();
  c.step = header.at("step").get<std::uint64_t>();
  c.epoch = header.at("epoch").get<std::uint64_t>();
  c.rng_state = header.at("rng_state").get<std::string>();
  c.best_val_cider = header.at("best_val_cider").get<double>();

  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  for (const auto& e : header.at("tensors")) {
    const auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto n = e.at("bytes").get<std::size_t>();
    Tensor<float> t(shape);
    if (t.size() * sizeof(float) != n) throw CheckpointError("tensor " + e.at("name").get<std::string>() + " size/shape mismatch");
    if (blob_base + offset + n > bytes.size()) throw CheckpointError("checkpoint truncated");
    const char* src = bytes.data() + blob_base + offset;
    if (detail::crc(src, n) != e.at("crc32").get<std::uint32_t>())
      throw CheckpointError("checksum mismatch in tensor " + e.at("name").get<std::string>());
    std::memcpy(t.data().data(), src, n);
    tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
  }
  std::vector<std::pair<std::string, Tensor<float>>> m, v;
  for (auto& [name, t] : tensors) {
    if (name.starts_with("param/")) c.params.add(name.substr(6), std::move(t));
    else if (name.starts_with("adam_m/")) m.emplace_back(name.substr(7), std::move(t));
    else if (name.starts_with("adam_v/")) v.emplace_back(name.substr(7), std::move(t));
    else throw CheckpointError("unknown tensor " + name);
  }
  if (!header.at("optimizer").is_null()) {
    const auto& o = header.at("optimizer");
    AdamConfig cfg{o.at("base_lr"), o.at("beta1"), o.at("beta2"), o.at("epsilon"), o.at("warmup_steps")};
    AdamState<float> st(cfg, c.params);
    st.step = o.at("step").get<std::uint64_t>();
    if (m.size() != c.params.size() || v.size() != c.params.size())
      throw CheckpointError("optimizer state does not cover every parameter");
    for (std::size_t i = 0; i < m.size(); ++i) {
      const auto id = c.params.id(m[i].first);
      if (m[i].second.shape() != c.params.value(id).shape() || v[i].first != m[i].first)
        throw CheckpointError("optimizer moment shape mismatch for " + m[i].first);
      st.first_moment[id.index] = std::move(m[i].second);
      st.second_moment[id.index] = std::move(v[i].second);
    }
    c.optimizer = std::move(st);
  }
  return c;
}

/// Atomic save: writes `path.tmp` then renames over `path`.
inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const std::string bytes = serialize_checkpoint(c);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw CheckpointError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path,
                                  std::optional<std::uint32_t> expected_vocab_hash = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, expected_vocab_hash);
}

}  // namespace newscap::runtime
