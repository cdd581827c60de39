#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "newscap/corpus/corpus.hpp"
#include "newscap/corpus/synth.hpp"
#include "newscap/runtime/train.hpp"

namespace newscap::runtime {

/// The synthetic copy task held in memory: vocabulary from the training
/// split, held-out split encoded against that fixed vocabulary.
struct SynthTask {
  corpus::SynthConfig config;
  corpus::Vocabulary vocab;
  std::vector<Example> train;
  std::vector<Example> heldout;
};

namespace detail {

inline std::vector<corpus::RawSample> raw_of(const std::vector<corpus::SynthSample>& s) {
  std::vector<corpus::RawSample> out;
  for (const auto& x : s) out.push_back(x.raw);
  return out;
}

inline std::vector<Example> examples_of(const corpus::PreprocessResult& r,
                                        const std::vector<corpus::SynthSample>& samples,
                                        const corpus::Vocabulary& vocab) {
  std::map<std::string, const corpus::SynthSample*> by_id;
  for (const auto& s : samples) by_id[s.raw.id] = &s;
  std::vector<Example> out;
  for (const auto& p : r.samples) out.push_back(make_example(p, vocab, by_id.at(p.id)->features.grid));
  return out;
}

}  // namespace detail

inline SynthTask make_synth_task(const corpus::SynthConfig& cfg, const corpus::PreprocessOptions& opt = {}) {
  const auto corpus = corpus::generate_synth(cfg);
  SynthTask t;
  t.config = cfg;
  const auto train = corpus::preprocess(detail::raw_of(corpus.train), opt);
  if (train.samples.size() != corpus.train.size()) throw std::logic_error("synthetic sample rejected by the filters");
  t.vocab = train.vocab;
  t.train = detail::examples_of(train, corpus.train, t.vocab);
  if (!corpus.heldout.empty()) {
    const auto held = corpus::preprocess(detail::raw_of(corpus.heldout), opt, &t.vocab);
    t.heldout = detail::examples_of(held, corpus.heldout, t.vocab);
  }
  return t;
}

/// Desk-scale training setup for the synthetic task: H 64, 4 heads, 2+2
/// layers, no dropout, short warmup.
inline TrainConfig desk_train_config(const SynthTask& t) {
  TrainConfig c;
  c.model.vocab_size = t.vocab.size();
  c.model.hidden = 64;
  c.model.heads = 4;
  c.model.encoder_layers = 2;
  c.model.decoder_layers = 2;
  c.model.patches = t.config.patches;
  c.model.feature_dim = t.config.feature_dim;
  c.model.max_positions = corpus::kMaxArticleTokens + 1;
  c.model.ffn_multiplier = 2;
  c.model.dropout = 0.0;
  c.adam.base_lr = 2e-3;
  c.adam.warmup_steps = 50;
  c.batch_size = 8;
  c.max_epochs = 500;
  return c;
}

}  // namespace newscap::runtime
