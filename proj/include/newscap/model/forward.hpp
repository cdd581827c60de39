#pragma once

#include <optional>
#include <vector>

#include "newscap/core/ops.hpp"
#include "newscap/core/params.hpp"
#include "newscap/core/tape.hpp"
#include "newscap/model/config.hpp"
#include "newscap/model/layout.hpp"

namespace newscap::model {

/// Everything one forward pass needs: the tape it records on, read-only
/// parameters, and the dropout switch/stream.
template <typename Scalar>
struct Forward {
  Forward(Tape<Scalar>& t, const ParamStore<Scalar>& p, const ModelIds& i, const ModelConfig& c,
          bool train = false, Rng* r = nullptr)
      : tape(t), params(p), ids(i), config(c), training(train), rng(r) {}

  Tape<Scalar>& tape;
  const ParamStore<Scalar>& params;
  const ModelIds& ids;
  const ModelConfig& config;
  bool training = false;
  Rng* rng = nullptr;

  /// Position-LSTM outputs computed so far. Positions do not depend on the
  /// input, so every sequence in the pass reads a prefix of these rows.
  std::vector<Var<Scalar>> position_rows;
  std::optional<Var<Scalar>> lstm_h, lstm_c;

  Var<Scalar> p(ParamId id) { return tape.param(params, id); }

  Var<Scalar> dropout(Var<Scalar> x) {
    if (!training || config.dropout == 0.0) return x;
    return ops::dropout(x, config.dropout, true, *rng);
  }
};

}  // namespace newscap::model
