#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "newscap/core/tensor.hpp"

namespace newscap {

using Rng = std::mt19937_64;

struct ParamId {
  std::size_t index = 0;
  friend bool operator==(ParamId, ParamId) = default;
};

template <typename Scalar>
using Gradients = std::vector<Tensor<Scalar>>;

/// Named trainable tensors. Paths look like "encoder/layer0/self_aoa/w_q".
/// Insertion order is the canonical order for checkpoints and optimizers.
template <typename Scalar>
class ParamStore {
 public:
  ParamId add(const std::string& path, Tensor<Scalar> init) {
    if (by_path_.count(path)) throw std::invalid_argument("duplicate parameter " + path);
    by_path_.emplace(path, values_.size());
    paths_.push_back(path);
    values_.push_back(std::move(init));
    return ParamId{values_.size() - 1};
  }

  ParamId id(const std::string& path) const {
    auto it = by_path_.find(path);
    if (it == by_path_.end()) throw std::out_of_range("unknown parameter " + path);
    return ParamId{it->second};
  }
  bool contains(const std::string& path) const { return by_path_.count(path) > 0; }

  std::size_t size() const { return values_.size(); }
  const std::string& path(ParamId id) const { return paths_[id.index]; }
  const std::vector<std::string>& paths() const { return paths_; }

  Tensor<Scalar>& value(ParamId id) { return values_[id.index]; }
  const Tensor<Scalar>& value(ParamId id) const { return values_[id.index]; }
  Tensor<Scalar>& operator[](const std::string& path) { return values_[id(path).index]; }
  const Tensor<Scalar>& operator[](const std::string& path) const { return values_[id(path).index]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  Gradients<Scalar> zero_gradients() const {
    Gradients<Scalar> g;
    g.reserve(values_.size());
    for (const auto& v : values_) g.emplace_back(v.shape());
    return g;
  }

  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      out.add(paths_[i], values_[i].template cast<Other>());
    }
    return out;
  }

 private:
  // deque: tapes hold pointers to parameter values across a forward pass
  std::deque<Tensor<Scalar>> values_;
  std::vector<std::string> paths_;
  std::map<std::string, std::size_t> by_path_;
};

template <typename Scalar>
void accumulate(Gradients<Scalar>& into, const Gradients<Scalar>& from) {
  if (into.size() != from.size()) throw std::invalid_argument("gradient arity mismatch");
  for (std::size_t i = 0; i < into.size(); ++i) {
    auto dst = into[i].data();
    auto src = from[i].data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

namespace init {

/// uniform(-a, a), a = sqrt(6 / (fan_in + fan_out))
template <typename Scalar>
Tensor<Scalar> xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor<Scalar> t({fan_in, fan_out});
  for (auto& v : t.data()) v = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
Tensor<Scalar> normal(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<Scalar> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Scalar>(dist(rng));
  return t;
}

}  // namespace init
}  // namespace newscap
