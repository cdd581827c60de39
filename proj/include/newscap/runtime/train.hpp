#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "newscap/core/adam.hpp"
#include "newscap/core/parallel.hpp"
#include "newscap/runtime/checkpoint.hpp"
#include "newscap/runtime/evaluate.hpp"

namespace newscap::runtime {

struct TrainConfig {
  model::ModelConfig model;
  AdamConfig adam;
  std::size_t batch_size = 64;
  /// epochs without a validation CIDEr improvement before stopping
  std::size_t patience = 20;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 1;
  /// stop once the epoch's mean per-token training loss falls below this (0 = off)
  double stop_loss = 0.0;
  std::size_t decode_max_len = kMaxCaptionTokens;
  /// worker cap for per-sample gradients and validation decoding (0 = NEWSCAP_THREADS/hardware)
  std::size_t threads = 0;

  void validate() const {
    model.validate();
    if (batch_size == 0 || max_epochs == 0 || decode_max_len == 0)
      throw std::invalid_argument("train config: batch_size, max_epochs and decode_max_len must be positive");
    if (adam.base_lr <= 0) throw std::invalid_argument("train config: base_lr must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"model", model::to_json(c.model)},
          {"base_lr", c.adam.base_lr},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon},
          {"warmup_steps", c.adam.warmup_steps},
          {"batch_size", c.batch_size},
          {"patience", c.patience},
          {"max_epochs", c.max_epochs},
          {"seed", c.seed},
          {"stop_loss", c.stop_loss},
          {"decode_max_len", c.decode_max_len}};
}

/// Fields missing from `j` keep their current values; "model" may be partial.
inline void update_from_json(TrainConfig& c, const nlohmann::json& j) {
  if (j.contains("model")) model::update_from_json(c.model, j.at("model"));
  c.adam.base_lr = j.value("base_lr", c.adam.base_lr);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.epsilon = j.value("epsilon", c.adam.epsilon);
  c.adam.warmup_steps = j.value("warmup_steps", c.adam.warmup_steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.patience = j.value("patience", c.patience);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.seed = j.value("seed", c.seed);
  c.stop_loss = j.value("stop_loss", c.stop_loss);
  c.decode_max_len = j.value("decode_max_len", c.decode_max_len);
  c.threads = j.value("threads", c.threads);
}

struct EpochRecord {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  /// mean per-token teacher-forced loss over the epoch (training mode)
  double loss = 0.0;
  std::optional<double> val_cider;
  double lr = 0.0;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"step", r.step},
          {"loss", r.loss},
          {"val_cider", r.val_cider ? nlohmann::json(*r.val_cider) : nlohmann::json(nullptr)},
          {"lr", r.lr}};
}

struct TrainResult {
  /// best validation CIDEr (or the last state when there is no validation set)
  Checkpoint best;
  Checkpoint last;
  std::vector<EpochRecord> history;
  bool early_stopped = false;
  bool reached_stop_loss = false;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Independent dropout stream per (seed, step, sample) so results do not
/// depend on the worker count.
inline Rng sample_rng(std::uint64_t seed, std::uint64_t step, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                    static_cast<std::uint32_t>(index)};
  return Rng(seq);
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream o;
  o << rng;
  return o.str();
}

/// Teacher-forced per-token loss in inference mode (no dropout).
template <typename Scalar>
double mean_token_loss(const model::Model<Scalar>& m, const std::vector<Example>& examples, std::size_t threads = 1) {
  std::vector<double> loss(examples.size());
  std::vector<std::size_t> tokens(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    Tape<Scalar> tape(false);
    auto f = m.forward(tape);
    auto tf = model::forward_teacher_forced(f, examples[i].inputs);
    loss[i] = static_cast<double>(tf.loss.value()[0]);
    tokens[i] = tf.tokens;
  });
  const double total = std::accumulate(loss.begin(), loss.end(), 0.0);
  const auto n = std::accumulate(tokens.begin(), tokens.end(), std::size_t{0});
  return n ? total / static_cast<double>(n) : 0.0;
}

/// Mini-batch teacher-forced training with Adam and warmup. Each sample runs
/// on its own tape; gradients are summed in sample order and divided by the
/// batch token count. After every epoch the validation set (when non-empty)
/// is greedy-decoded, tag-cleaned and scored with CIDEr; the best checkpoint
/// is kept and training stops after `patience` epochs without improvement.
inline TrainResult train(const TrainConfig& cfg, const std::vector<Example>& train_set,
                         const std::vector<Example>& val_set, const corpus::Vocabulary& vocab,
                         std::ostream* log = nullptr) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const std::size_t threads = worker_count(cfg.threads);
  auto m = model::Model<float>::create(cfg.model, cfg.seed);
  AdamState<float> adam(cfg.adam, m.params);
  Rng order_rng(cfg.seed);

  auto snapshot = [&](std::size_t epoch, double best_cider) {
    Checkpoint c;
    c.model = m.config;
    c.train_config = to_json(cfg);
    c.params = m.params;
    c.optimizer = adam;
    c.vocab_hash = vocab.hash();
    c.seed = cfg.seed;
    c.step = adam.step;
    c.epoch = epoch;
    c.rng_state = rng_state(order_rng);
    c.best_val_cider = best_cider;
    return c;
  };

  TrainResult result;
  std::optional<double> best_cider;
  std::size_t stale = 0;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const DecodeOptions greedy{DecodeMode::greedy, 1, cfg.decode_max_len};

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double epoch_loss = 0;
    std::size_t epoch_tokens = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      std::size_t batch_tokens = 0;
      for (std::size_t i = b; i < e; ++i) batch_tokens += train_set[order[i]].inputs.caption_ids.size() - 1;
      const float inv_tokens = 1.0f / static_cast<float>(batch_tokens);
      const std::uint64_t step = adam.step + 1;

      std::vector<double> losses(e - b);
      auto run_sample = [&](std::size_t k, Gradients<float>& into) {
        const auto& ex = train_set[order[b + k]];
        Rng rng = sample_rng(cfg.seed, step, order[b + k]);
        Tape<float> tape;
        auto f = m.forward(tape, true, &rng);
        auto tf = model::forward_teacher_forced(f, ex.inputs);
        losses[k] = static_cast<double>(tf.loss.value()[0]);
        if (!std::isfinite(losses[k])) {
          throw NonFiniteLoss("non-finite loss " + std::to_string(losses[k]) + " on sample " + ex.id + " at step " +
                              std::to_string(step) + " (epoch " + std::to_string(epoch) + ")");
        }
        tape.backward(ops::scale(tf.loss, inv_tokens), into);
      };
      // Summation order is sample order either way: ((0 + g0) + g1) + ...
      Gradients<float> total = m.params.zero_gradients();
      if (threads == 1) {
        for (std::size_t k = 0; k < e - b; ++k) run_sample(k, total);
      } else {
        std::vector<Gradients<float>> grads(e - b);
        parallel_for(e - b, threads, [&](std::size_t k) {
          grads[k] = m.params.zero_gradients();
          run_sample(k, grads[k]);
        });
        for (const auto& g : grads) accumulate(total, g);
      }
      for (double l : losses) epoch_loss += l;
      epoch_tokens += batch_tokens;
      adam_step(m.params, total, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = adam.step;
    rec.loss = epoch_loss / static_cast<double>(epoch_tokens);
    rec.lr = adam.current_lr();
    if (!val_set.empty()) {
      const auto captions = caption_all(m, vocab, val_set, greedy, threads);
      rec.val_cider = score_captions(val_set, captions, "greedy").post_tc.cider;
    }
    result.history.push_back(rec);
    if (log) *log << to_json(rec).dump() << '\n' << std::flush;

    if (rec.val_cider) {
      if (!best_cider || *rec.val_cider > *best_cider) {
        best_cider = rec.val_cider;
        stale = 0;
        result.best = snapshot(epoch, *best_cider);
      } else if (++stale >= std::max<std::size_t>(cfg.patience, 1)) {
        result.early_stopped = true;
      }
    }
    if (cfg.stop_loss > 0 && rec.loss < cfg.stop_loss) result.reached_stop_loss = true;
    if (result.early_stopped || result.reached_stop_loss || epoch == cfg.max_epochs) {
      result.last = snapshot(epoch, best_cider.value_or(0.0));
      if (!best_cider) result.best = result.last;
      break;
    }
  }
  return result;
}

/// Model view of a checkpoint's parameters.
inline model::Model<float> model_from_checkpoint(const Checkpoint& c) {
  return model::Model<float>::from_params(c.model, c.params);
}

}  // namespace newscap::runtime
