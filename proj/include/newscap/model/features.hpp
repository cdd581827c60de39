#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "newscap/core/tensor.hpp"

namespace newscap::model {

class FeatureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// K x D grid of image patch features (K=49, D=2048 for ResNet-152 at full
/// scale; desk-scale configurations shrink both).
struct ImageFeatures {
  Tensor<float> grid;

  std::size_t patches() const { return grid.rows(); }
  std::size_t dim() const { return grid.cols(); }
};

static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");

inline std::uint32_t checksum_bytes(const void* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

inline std::string sidecar_path(const std::string& path) { return path + ".json"; }

/// Writes `path` (raw little-endian float32, row-major K x D) and
/// `path.json` ({k, d, checksum}).
inline void save_features(const std::string& path, const ImageFeatures& f) {
  const auto bytes = f.grid.size() * sizeof(float);
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FeatureError("cannot write features " + path);
    out.write(reinterpret_cast<const char*>(f.grid.data().data()), static_cast<std::streamsize>(bytes));
  }
  nlohmann::json side = {{"k", f.patches()}, {"d", f.dim()}, {"checksum", checksum_bytes(f.grid.data().data(), bytes)}};
  std::ofstream out(sidecar_path(path));
  out << side.dump() << '\n';
}

inline ImageFeatures load_features(const std::string& path) {
  std::ifstream side(sidecar_path(path));
  if (!side) throw FeatureError("missing feature sidecar for " + path);
  const auto meta = nlohmann::json::parse(side);
  const auto k = meta.at("k").get<std::size_t>();
  const auto d = meta.at("d").get<std::size_t>();
  ImageFeatures f{Tensor<float>({k, d})};
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureError("cannot read features " + path);
  const auto bytes = k * d * sizeof(float);
  in.read(reinterpret_cast<char*>(f.grid.data().data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes || in.peek() != std::char_traits<char>::eof()) {
    throw FeatureError("feature file " + path + " does not hold " + std::to_string(k) + "x" + std::to_string(d) + " floats");
  }
  if (checksum_bytes(f.grid.data().data(), bytes) != meta.at("checksum").get<std::uint32_t>()) {
    throw FeatureError("feature checksum mismatch for " + path);
  }
  if (!f.grid.all_finite()) throw FeatureError("non-finite feature values in " + path);
  return f;
}

/// Seeded standard-normal features, optionally shifted by `pattern` (added to
/// every patch) so synthetic captions can depend on the image.
inline ImageFeatures synthetic_features(std::size_t k, std::size_t d, std::uint64_t seed,
                                        const std::vector<float>* pattern = nullptr, float noise = 1.0f) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, noise);
  ImageFeatures f{Tensor<float>({k, d})};
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < d; ++j) f.grid(i, j) = dist(rng) + (pattern ? (*pattern)[j] : 0.0f);
  return f;
}

/// Resolves feature references relative to a base directory, with a cache.
/// Empty references resolve to an all-zero grid of the configured size.
class FeatureStore {
 public:
  FeatureStore(std::string base_dir, std::size_t k, std::size_t d)
      : base_(std::move(base_dir)), k_(k), d_(d) {}

  const ImageFeatures& get(const std::string& ref) {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(ref); it != cache_.end()) return it->second;
    ImageFeatures f;
    if (ref.empty()) {
      f.grid = Tensor<float>({k_, d_});
    } else {
      std::filesystem::path p(ref);
      if (p.is_relative() && !base_.empty()) p = std::filesystem::path(base_) / p;
      f = load_features(p.string());
    }
    if (f.patches() != k_ || f.dim() != d_) {
      throw FeatureError("features " + ref + " are " + std::to_string(f.patches()) + "x" +
                         std::to_string(f.dim()) + ", model expects " + std::to_string(k_) + "x" +
                         std::to_string(d_));
    }
    return cache_.emplace(ref, std::move(f)).first->second;
  }

 private:
  std::string base_;
  std::size_t k_, d_;
  std::map<std::string, ImageFeatures> cache_;
  std::mutex mutex_;
};

}  // namespace newscap::model
