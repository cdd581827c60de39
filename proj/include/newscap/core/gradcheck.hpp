#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "newscap/core/params.hpp"
#include "newscap/core/tape.hpp"

namespace newscap {

struct GradCheckOptions {
  double eps = 1e-4;
  double tolerance = 1e-6;
  /// Coordinates sampled per parameter tensor; 0 checks all of them.
  std::size_t coords_per_param = 8;
  /// Denominator floor for the relative error, so coordinates whose true
  /// gradient is ~0 are judged by absolute error.
  double abs_floor = 1e-7;
  std::uint64_t seed = 0;
  /// Re-estimate each coordinate with step eps/2; when the two central
  /// differences disagree by more than `kink_threshold` (relative) the step
  /// crossed a non-differentiable point (relu, clamp) and the coordinate is
  /// skipped and counted rather than judged.
  bool detect_kinks = true;
  double kink_threshold = 1e-3;
  /// Combine the eps and eps/2 differences as (4 D(eps/2) - D(eps)) / 3,
  /// which cancels the eps^2 truncation term of the central difference.
  bool richardson = false;
  /// The check fails when more than this fraction of coordinates is skipped.
  double max_kink_fraction = 0.05;
  /// Only parameters whose path contains one of these substrings (all when empty).
  std::vector<std::string> include;
};

struct GradCheckEntry {
  std::string path;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double max_abs_error = 0.0;
  std::size_t kinks = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::string worst_path;
  std::size_t checked = 0;
  std::size_t kinks = 0;
  double max_abs_error = 0.0;
  double tolerance = 0.0;
  double max_kink_fraction = 0.0;

  bool passed() const {
    return max_rel_error < tolerance &&
           static_cast<double>(kinks) <= max_kink_fraction * static_cast<double>(checked + kinks);
  }
};

inline double gradcheck_rel_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Loss builder: records a scalar loss on the tape from the given parameters.
/// Must be deterministic (dropout off, fixed inputs).
template <typename Scalar>
using LossBuilder = std::function<Var<Scalar>(Tape<Scalar>&, const ParamStore<Scalar>&)>;

/// Central-difference check of tape gradients on a sampled subset of
/// coordinates. Intended for Scalar = double.
template <typename Scalar>
GradCheckReport finite_diff_check(const LossBuilder<Scalar>& loss_fn, ParamStore<Scalar>& params,
                                  const GradCheckOptions& opt = {}) {
  Gradients<Scalar> analytic = params.zero_gradients();
  {
    Tape<Scalar> tape;
    Var<Scalar> loss = loss_fn(tape, params);
    if (!std::isfinite(static_cast<double>(loss.value()[0])))
      throw std::domain_error("finite_diff_check: non-finite loss");
    tape.backward(loss, analytic);
  }
  auto eval = [&]() -> double {
    Tape<Scalar> tape(false);
    const double v = static_cast<double>(loss_fn(tape, params).value()[0]);
    if (!std::isfinite(v)) throw std::domain_error("finite_diff_check: non-finite loss");
    return v;
  };

  Rng rng(opt.seed);
  GradCheckReport report;
  report.tolerance = opt.tolerance;
  report.max_kink_fraction = opt.max_kink_fraction;
  auto central = [&](std::span<Scalar> values, std::size_t i, double h) {
    const Scalar saved = values[i];
    values[i] = static_cast<Scalar>(saved + h);
    const double up = eval();
    values[i] = static_cast<Scalar>(saved - h);
    const double down = eval();
    values[i] = saved;
    return (up - down) / (2.0 * h);
  };
  for (std::size_t p = 0; p < params.size(); ++p) {
    const ParamId pid{p};
    const std::string& path = params.path(pid);
    if (!opt.include.empty() &&
        std::none_of(opt.include.begin(), opt.include.end(),
                     [&](const std::string& s) { return path.find(s) != std::string::npos; })) {
      continue;
    }
    auto values = params.value(pid).data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.coords_per_param && coords.size() > opt.coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    GradCheckEntry entry;
    entry.path = path;
    for (std::size_t i : coords) {
      double numeric = central(values, i, opt.eps);
      if (opt.detect_kinks || opt.richardson) {
        const double half = central(values, i, opt.eps / 2);
        if (opt.detect_kinks && gradcheck_rel_error(numeric, half, opt.abs_floor) > opt.kink_threshold) {
          ++entry.kinks;
          continue;
        }
        if (opt.richardson) numeric = (4.0 * half - numeric) / 3.0;
      }
      const double a = static_cast<double>(analytic[p][i]);
      const double err = gradcheck_rel_error(a, numeric, opt.abs_floor);
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(a - numeric));
      ++entry.checked;
      if (err >= entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    report.checked += entry.checked;
    report.kinks += entry.kinks;
    report.max_abs_error = std::max(report.max_abs_error, entry.max_abs_error);
    if (entry.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = entry.max_rel_error;
      report.worst_path = path;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace newscap
