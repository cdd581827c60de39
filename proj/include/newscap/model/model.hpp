#pragma once

#include <cstdint>

#include "newscap/model/decoder.hpp"

namespace newscap::model {

/// Configuration, parameters and resolved ids travelling together.
template <typename Scalar = float>
struct Model {
  ModelConfig config;
  ParamStore<Scalar> params;
  ModelIds ids;

  static Model create(const ModelConfig& c, std::uint64_t seed) {
    Model m{c, init_params<Scalar>(c, seed), {}};
    m.ids = resolve_ids(m.params, c);
    return m;
  }

  static Model from_params(const ModelConfig& c, ParamStore<Scalar> p) {
    Model m{c, std::move(p), {}};
    m.ids = resolve_ids(m.params, c);
    return m;
  }

  template <typename Other>
  Model<Other> cast() const {
    return Model<Other>::from_params(config, params.template cast<Other>());
  }

  Forward<Scalar> forward(Tape<Scalar>& tape, bool training = false, Rng* rng = nullptr) const {
    if (training && config.dropout > 0.0 && !rng) throw std::invalid_argument("training forward needs an rng");
    return Forward<Scalar>{tape, params, ids, config, training, rng};
  }
};

}  // namespace newscap::model
