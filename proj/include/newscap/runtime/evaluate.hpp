#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "newscap/core/parallel.hpp"
#include "newscap/eval/metrics.hpp"
#include "newscap/model/features.hpp"
#include "newscap/runtime/decode.hpp"
#include "newscap/runtime/tag_clean.hpp"

namespace newscap::runtime {

/// A processed sample ready for the network plus what evaluation needs.
struct Example {
  std::string id;
  model::SampleInputs inputs;
  /// caption surface tokens (the reference)
  std::vector<std::string> reference;
  std::vector<corpus::EntityMention> entity_set;
  /// known entity strings of this sample, for the evaluation gazetteer
  std::vector<std::string> entity_phrases;
};

inline Example make_example(const corpus::ProcessedSample& s, const corpus::Vocabulary& vocab,
                            Tensor<float> features) {
  Example e;
  e.id = s.id;
  e.inputs = model::make_inputs(s, vocab, std::move(features));
  e.reference = s.caption_tokens;
  e.entity_set = s.entity_set;
  for (const auto& m : s.entity_set) e.entity_phrases.push_back(m.text);
  for (const auto& m : s.caption_entities) e.entity_phrases.push_back(m.text);
  return e;
}

inline Example make_example(const corpus::ProcessedSample& s, const corpus::Vocabulary& vocab,
                            model::FeatureStore& features) {
  return make_example(s, vocab, features.get(s.feature_ref).grid);
}

struct CaptionResult {
  std::string id;
  std::vector<int> ids;
  std::vector<std::string> pre_tc;
  std::vector<std::string> post_tc;
  std::size_t replaced = 0;
  std::size_t unresolved = 0;
  double log_prob = 0.0;
};

inline std::vector<std::string> id_tokens(const std::vector<int>& ids, const corpus::Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(vocab.token(id));
  return out;
}

template <typename Scalar>
CaptionResult caption_example(const model::Model<Scalar>& m, const corpus::Vocabulary& vocab, const Example& e,
                              const DecodeOptions& opt = {}, bool apply_tag_cleaning = true) {
  CaptionResult r;
  r.id = e.id;
  const auto d = decode(m, e.inputs, opt);
  r.ids = d.tokens;
  r.log_prob = d.log_prob;
  r.pre_tc = id_tokens(d.tokens, vocab);
  if (apply_tag_cleaning) {
    auto tc = tag_clean(r.pre_tc, e.entity_set);
    r.post_tc = std::move(tc.tokens);
    r.replaced = tc.replaced;
    r.unresolved = tc.unresolved;
  } else {
    r.post_tc = r.pre_tc;
  }
  return r;
}

template <typename Scalar>
std::vector<CaptionResult> caption_all(const model::Model<Scalar>& m, const corpus::Vocabulary& vocab,
                                       const std::vector<Example>& examples, const DecodeOptions& opt,
                                       std::size_t threads, bool apply_tag_cleaning = true) {
  std::vector<CaptionResult> out(examples.size());
  parallel_for(examples.size(), threads,
               [&](std::size_t i) { out[i] = caption_example(m, vocab, examples[i], opt, apply_tag_cleaning); });
  return out;
}

inline std::vector<eval::EvalPair> eval_pairs(const std::vector<Example>& examples,
                                             const std::vector<CaptionResult>& captions, bool post_tc) {
  std::vector<eval::EvalPair> pairs;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const eval::Gazetteer g(examples[i].entity_phrases);
    const auto& cand = post_tc ? captions[i].post_tc : captions[i].pre_tc;
    pairs.push_back({cand, examples[i].reference, g.find(cand), g.find(examples[i].reference)});
  }
  return pairs;
}

struct EvalReport {
  eval::MetricSet post_tc;
  eval::MetricSet pre_tc;
  std::size_t n = 0;
  std::string decode_mode;
  std::size_t tags_replaced = 0;
  std::size_t tags_unresolved = 0;
  std::size_t exact_matches = 0;
};

inline EvalReport score_captions(const std::vector<Example>& examples, const std::vector<CaptionResult>& captions,
                                 const std::string& decode_mode) {
  EvalReport r;
  r.n = examples.size();
  r.decode_mode = decode_mode;
  r.post_tc = eval::score_all(eval_pairs(examples, captions, true));
  r.pre_tc = eval::score_all(eval_pairs(examples, captions, false));
  for (std::size_t i = 0; i < captions.size(); ++i) {
    r.tags_replaced += captions[i].replaced;
    r.tags_unresolved += captions[i].unresolved;
    if (captions[i].post_tc == examples[i].reference) ++r.exact_matches;
  }
  return r;
}

template <typename Scalar>
EvalReport evaluate(const model::Model<Scalar>& m, const corpus::Vocabulary& vocab,
                    const std::vector<Example>& examples, const DecodeOptions& opt = {}, std::size_t threads = 1,
                    std::vector<CaptionResult>* captions_out = nullptr) {
  auto captions = caption_all(m, vocab, examples, opt, threads);
  auto r = score_captions(examples, captions, decode_mode_name(opt.mode));
  if (captions_out) *captions_out = std::move(captions);
  return r;
}

inline nlohmann::json metrics_json(const eval::MetricSet& m) {
  return {{"bleu4", m.bleu4},
          {"rouge_l", m.rouge_l},
          {"cider", m.cider},
          {"entity_precision", m.entities.precision},
          {"entity_recall", m.entities.recall},
          {"entity_precision_defined", m.entities.precision_defined}};
}

inline nlohmann::json report_json(const EvalReport& r) {
  auto j = metrics_json(r.post_tc);
  j["n"] = r.n;
  j["decode_mode"] = r.decode_mode;
  j["pre_tc"] = metrics_json(r.pre_tc);
  j["tags_replaced"] = r.tags_replaced;
  j["tags_unresolved"] = r.tags_unresolved;
  j["exact_matches"] = r.exact_matches;
  j["notes"] = {{"rouge", "ROUGE-L F-measure, beta 1.2"},
                {"bleu", "corpus BLEU-4; zero n-gram precisions (n >= 2) replaced by 1e-9; no unigram match scores 0"},
                {"cider", "plain CIDEr x10, idf over the evaluated references"},
                {"entities", "micro-averaged, casefolded exact surface match with clipping"}};
  return j;
}

inline std::string report_table(const EvalReport& r) {
  std::ostringstream o;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %8s %8s %8s %8s %8s\n", "", "BLEU-4", "ROUGE-L", "CIDEr", "P", "R");
  o << line;
  auto row = [&](const char* name, const eval::MetricSet& m) {
    std::snprintf(line, sizeof line, "%-8s %8.4f %8.4f %8.4f %8.4f %8.4f\n", name, m.bleu4, m.rouge_l, m.cider,
                  m.entities.precision, m.entities.recall);
    o << line;
  };
  row("pre-TC", r.pre_tc);
  row("post-TC", r.post_tc);
  o << "n=" << r.n << " decode=" << r.decode_mode << " tags replaced=" << r.tags_replaced
    << " unresolved=" << r.tags_unresolved << " exact=" << r.exact_matches << "\n";
  return o.str();
}

}  // namespace newscap::runtime
