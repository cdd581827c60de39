#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

#include "newscap/core/params.hpp"

namespace newscap {

struct AdamConfig {
  double base_lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t warmup_steps = 4000;
};

/// Inverse-square-root decay with linear warmup, scaled so the peak (reached
/// at step == warmup) equals base_lr.
inline double scheduled_lr(const AdamConfig& cfg, std::uint64_t step) {
  if (step == 0) return 0.0;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(std::max<std::uint64_t>(cfg.warmup_steps, 1));
  return cfg.base_lr * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5)) * std::sqrt(w);
}

template <typename Scalar>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  Gradients<Scalar> first_moment;
  Gradients<Scalar> second_moment;

  AdamState() = default;
  AdamState(AdamConfig cfg, const ParamStore<Scalar>& params)
      : config(cfg),
        first_moment(params.zero_gradients()),
        second_moment(params.zero_gradients()) {}

  double current_lr() const { return scheduled_lr(config, step); }
};

/// One Adam update with bias correction. Returns the learning rate used.
template <typename Scalar>
double adam_step(ParamStore<Scalar>& params, const Gradients<Scalar>& grads, AdamState<Scalar>& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: gradient/state arity does not match parameters");
  }
  if (state.step == std::numeric_limits<std::uint64_t>::max()) {
    throw std::overflow_error("adam_step: step counter overflow");
  }
  ++state.step;
  const auto& c = state.config;
  const double lr = scheduled_lr(c, state.step);
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto w = params.value(ParamId{p}).data();
    auto g = grads[p].data();
    auto m = state.first_moment[p].data();
    auto v = state.second_moment[p].data();
    if (g.size() != w.size()) {
      throw std::invalid_argument("adam_step: gradient shape differs for " + params.path(ParamId{p}));
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<Scalar>(mi);
      v[i] = static_cast<Scalar>(vi);
      const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.epsilon);
      w[i] = static_cast<Scalar>(w[i] - update);
    }
  }
  return lr;
}

}  // namespace newscap
