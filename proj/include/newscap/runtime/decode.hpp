#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "newscap/corpus/vocab.hpp"
#include "newscap/model/model.hpp"

namespace newscap::runtime {

/// Next-token log-probabilities given the prefix generated so far (which
/// starts with BOS).
using StepFn = std::function<std::vector<double>(const std::vector<int>& prefix)>;

inline constexpr std::size_t kMaxCaptionTokens = 31;
inline constexpr double kLengthPenalty = 0.7;

struct Decoded {
  /// generated ids without BOS/EOS
  std::vector<int> tokens;
  /// sum of log-probabilities including the EOS step when emitted
  double log_prob = 0.0;
  std::size_t steps = 0;
  bool finished = false;
};

/// log p / steps^0.7, the score beam search maximizes.
inline double normalized_score(double log_prob, std::size_t steps, double alpha = kLengthPenalty) {
  return steps == 0 ? log_prob : log_prob / std::pow(static_cast<double>(steps), alpha);
}

inline double normalized_score(const Decoded& d, double alpha = kLengthPenalty) {
  return normalized_score(d.log_prob, d.steps, alpha);
}

/// Index of the maximum, lowest index on ties.
inline int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline Decoded greedy_decode(const StepFn& step, std::size_t max_len = kMaxCaptionTokens, int bos = corpus::kBosId,
                             int eos = corpus::kEosId) {
  Decoded d;
  std::vector<int> prefix = {bos};
  while (d.steps < max_len) {
    const auto lp = step(prefix);
    const int best = argmax(lp);
    d.log_prob += lp[static_cast<std::size_t>(best)];
    ++d.steps;
    if (best == eos) {
      d.finished = true;
      break;
    }
    prefix.push_back(best);
    d.tokens.push_back(best);
  }
  return d;
}

/// Length-normalized beam search. Each step expands every live hypothesis,
/// keeps the `beam` best continuations by cumulative log-probability (ties:
/// lexicographically smaller id sequence), and retires those ending in EOS.
/// Hypotheses still live at max_len are retired as they are. The result
/// maximizes normalized_score over retired hypotheses (ties: earliest
/// retired). The greedy hypothesis competes in that final choice, so the
/// result never scores below greedy_decode; beam = 1 reproduces it exactly.
inline Decoded beam_decode(const StepFn& step, std::size_t beam, std::size_t max_len = kMaxCaptionTokens,
                           double alpha = kLengthPenalty, int bos = corpus::kBosId, int eos = corpus::kEosId) {
  if (beam == 0) throw std::invalid_argument("beam_decode: beam must be >= 1");
  struct Hyp {
    std::vector<int> prefix;
    double log_prob;
  };
  std::vector<Hyp> live = {{{bos}, 0.0}};
  std::vector<Decoded> done;
  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    std::vector<Hyp> cand;
    for (const auto& h : live) {
      const auto lp = step(h.prefix);
      std::vector<int> order(lp.size());
      for (std::size_t i = 0; i < lp.size(); ++i) order[i] = static_cast<int>(i);
      const std::size_t k = std::min(beam, lp.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](int a, int b) { return lp[a] > lp[b] || (lp[a] == lp[b] && a < b); });
      for (std::size_t i = 0; i < k; ++i) {
        Hyp n = h;
        n.prefix.push_back(order[i]);
        n.log_prob += lp[static_cast<std::size_t>(order[i])];
        cand.push_back(std::move(n));
      }
    }
    std::stable_sort(cand.begin(), cand.end(), [](const Hyp& a, const Hyp& b) {
      return a.log_prob > b.log_prob || (a.log_prob == b.log_prob && a.prefix < b.prefix);
    });
    if (cand.size() > beam) cand.resize(beam);
    live.clear();
    for (auto& h : cand) {
      const bool ended = h.prefix.back() == eos;
      if (ended || t + 1 == max_len) {
        Decoded d;
        d.tokens.assign(h.prefix.begin() + 1, h.prefix.end() - (ended ? 1 : 0));
        d.log_prob = h.log_prob;
        d.steps = h.prefix.size() - 1;
        d.finished = ended;
        done.push_back(std::move(d));
      } else {
        live.push_back(std::move(h));
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < done.size(); ++i)
    if (normalized_score(done[i], alpha) > normalized_score(done[best], alpha)) best = i;
  if (beam == 1 && !done.empty()) return done[best];
  auto greedy = greedy_decode(step, max_len, bos, eos);
  if (done.empty() || normalized_score(greedy, alpha) > normalized_score(done[best], alpha)) return greedy;
  return done[best];
}

/// Step function over a trained model for one sample. Contexts are encoded
/// once on a non-recording tape; each call rewinds to that point and reruns
/// the decoder over the whole prefix.
template <typename Scalar>
class ModelStepper {
 public:
  ModelStepper(const model::Model<Scalar>& m, const model::SampleInputs& in, std::size_t max_len = kMaxCaptionTokens)
      : tape_(false), forward_(m.forward(tape_)) {
    contexts_ = model::encode_contexts(forward_, in);
    model::position_states(forward_, std::min(max_len + 1, m.config.max_positions));
    mark_ = tape_.size();
  }
  ModelStepper(const ModelStepper&) = delete;
  ModelStepper& operator=(const ModelStepper&) = delete;

  std::vector<double> operator()(const std::vector<int>& prefix) {
    tape_.rewind(mark_);
    auto out = model::decode_prefix(forward_, contexts_, std::span<const int>(prefix));
    const auto& p = out.p_star.value();
    const std::size_t last = p.rows() - 1;
    std::vector<double> lp(p.cols());
    for (std::size_t j = 0; j < lp.size(); ++j)
      lp[j] = std::log(std::max(static_cast<double>(p(last, j)), model::kProbabilityFloor));
    return lp;
  }

  StepFn fn() {
    return [this](const std::vector<int>& prefix) { return (*this)(prefix); };
  }

 private:
  Tape<Scalar> tape_;
  model::Forward<Scalar> forward_;
  model::EncodedContexts<Scalar> contexts_;
  std::size_t mark_ = 0;
};

enum class DecodeMode { greedy, beam };

inline const char* decode_mode_name(DecodeMode m) { return m == DecodeMode::greedy ? "greedy" : "beam"; }

struct DecodeOptions {
  DecodeMode mode = DecodeMode::greedy;
  std::size_t beam = 5;
  std::size_t max_len = kMaxCaptionTokens;
};

template <typename Scalar>
Decoded decode(const model::Model<Scalar>& m, const model::SampleInputs& in, const DecodeOptions& opt = {}) {
  ModelStepper<Scalar> stepper(m, in, opt.max_len);
  auto fn = stepper.fn();
  return opt.mode == DecodeMode::greedy ? greedy_decode(fn, opt.max_len) : beam_decode(fn, opt.beam, opt.max_len);
}

}  // namespace newscap::runtime
