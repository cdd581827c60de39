#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include "json.hpp"
#include <string>
#include <vector>

#include "newscap/corpus/entities.hpp"
#include "newscap/corpus/tokenizer.hpp"
#include "newscap/corpus/types.hpp"
#include "newscap/corpus/vocab.hpp"

namespace newscap::corpus {

using nlohmann::json;

// ---------------------------------------------------------------- JSON mapping

inline json mention_to_json(const EntityMention& m, bool with_frequency) {
  json j = {{"text", m.text}, {"type", std::string(entity_type_name(m.type))}, {"start", m.start},
            {"end", m.end}};
  if (with_frequency) j["frequency"] = m.frequency;
  return j;
}

inline EntityMention mention_from_json(const json& j) {
  EntityMention m;
  m.text = j.at("text").get<std::string>();
  const auto type = parse_entity_type(j.at("type").get<std::string>());
  if (!type) throw CorpusError("unknown entity type " + j.at("type").dump());
  m.type = *type;
  m.start = j.at("start").get<std::size_t>();
  m.end = j.at("end").get<std::size_t>();
  if (j.contains("frequency")) m.frequency = j.at("frequency").get<std::size_t>();
  return m;
}

inline std::vector<EntityMention> mentions_from_json(const json& j) {
  std::vector<EntityMention> out;
  for (const auto& e : j) out.push_back(mention_from_json(e));
  return out;
}

inline json mentions_to_json(const std::vector<EntityMention>& ms, bool with_frequency) {
  json arr = json::array();
  for (const auto& m : ms) arr.push_back(mention_to_json(m, with_frequency));
  return arr;
}

inline bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

inline RawSample raw_sample_from_json(const json& j) {
  RawSample s;
  s.id = j.at("id").get<std::string>();
  s.article = j.at("article").get<std::string>();
  s.caption = j.at("caption").get<std::string>();
  s.image_width = j.at("image").at("width").get<int>();
  s.image_height = j.at("image").at("height").get<int>();
  s.source = j.value("source", std::string());
  s.feature_path = j.value("feature_path", std::string());
  if (j.contains("entities") && !j.at("entities").is_null()) {
    EntityAnnotations a;
    const auto& e = j.at("entities");
    if (e.contains("article")) a.article = mentions_from_json(e.at("article"));
    if (e.contains("caption")) a.caption = mentions_from_json(e.at("caption"));
    s.entities = std::move(a);
  }
  if (blank(s.article) || blank(s.caption)) throw CorpusError("empty article or caption");
  return s;
}

inline json raw_sample_to_json(const RawSample& s) {
  json j = {{"id", s.id},
            {"article", s.article},
            {"caption", s.caption},
            {"image", {{"width", s.image_width}, {"height", s.image_height}}},
            {"source", s.source},
            {"feature_path", s.feature_path}};
  if (s.entities) {
    j["entities"] = {{"article", mentions_to_json(s.entities->article, false)},
                     {"caption", mentions_to_json(s.entities->caption, false)}};
  }
  return j;
}

inline json processed_to_json(const ProcessedSample& p) {
  return {{"id", p.id},
          {"source", p.source},
          {"article_token_count", p.article_token_count},
          {"article_ids", p.article_ids},
          {"article_tokens", p.article_tokens},
          {"entity_set", mentions_to_json(p.entity_set, true)},
          {"caption_ids", p.caption_ids},
          {"caption_tokens", p.caption_tokens},
          {"caption_entities", mentions_to_json(p.caption_entities, true)},
          {"feature_ref", p.feature_ref},
          {"image", {{"width", p.image_width}, {"height", p.image_height}}}};
}

inline ProcessedSample processed_from_json(const json& j) {
  ProcessedSample p;
  p.id = j.at("id").get<std::string>();
  p.source = j.value("source", std::string());
  p.article_token_count = j.at("article_token_count").get<std::size_t>();
  p.article_ids = j.at("article_ids").get<std::vector<int>>();
  p.article_tokens = j.at("article_tokens").get<std::vector<std::string>>();
  p.entity_set = mentions_from_json(j.at("entity_set"));
  p.caption_ids = j.at("caption_ids").get<std::vector<int>>();
  p.caption_tokens = j.at("caption_tokens").get<std::vector<std::string>>();
  p.caption_entities = mentions_from_json(j.at("caption_entities"));
  p.feature_ref = j.value("feature_ref", std::string());
  if (j.contains("image")) {
    p.image_width = j.at("image").at("width").get<int>();
    p.image_height = j.at("image").at("height").get<int>();
  }
  return p;
}

// ---------------------------------------------------------------- loading

struct LoadReport {
  std::vector<RawSample> samples;
  /// (1-based line number, reason) of every skipped line
  std::vector<std::pair<std::size_t, std::string>> skipped;
};

/// Parses one JSON object per line. Malformed lines are skipped and
/// reported; more than 10% malformed lines aborts.
inline LoadReport load_corpus_stream(std::istream& in, const std::string& name = "<stream>") {
  LoadReport report;
  std::string line;
  std::size_t lineno = 0, nonblank = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    ++nonblank;
    try {
      report.samples.push_back(raw_sample_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      report.skipped.emplace_back(lineno, e.what());
    }
  }
  if (nonblank > 0 && report.skipped.size() * 10 > nonblank) {
    throw CorpusError(name + ": " + std::to_string(report.skipped.size()) + " of " +
                      std::to_string(nonblank) + " lines malformed (limit 10%)");
  }
  return report;
}

inline LoadReport load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot read corpus " + path);
  return load_corpus_stream(in, path);
}

inline void save_raw_corpus(const std::string& path, const std::vector<RawSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path);
  for (const auto& s : samples) out << raw_sample_to_json(s).dump() << '\n';
}

inline std::vector<ProcessedSample> load_processed(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot read processed corpus " + path);
  std::vector<ProcessedSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (blank(line)) continue;
    out.push_back(processed_from_json(json::parse(line)));
  }
  return out;
}

inline void save_processed(const std::string& path, const std::vector<ProcessedSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path);
  for (const auto& s : samples) out << processed_to_json(s).dump() << '\n';
}

// ---------------------------------------------------------------- filtering

enum class FilterVerdict { keep, image_too_small, caption_too_short, caption_too_long };

inline const char* verdict_name(FilterVerdict v) {
  switch (v) {
    case FilterVerdict::keep: return "keep";
    case FilterVerdict::image_too_small: return "image_too_small";
    case FilterVerdict::caption_too_short: return "caption_too_short";
    case FilterVerdict::caption_too_long: return "caption_too_long";
  }
  return "?";
}

struct FilterBounds {
  std::size_t min_side = kMinImageSide;
  std::size_t min_words = kMinCaptionWords;
  std::size_t max_words = kMaxCaptionWords;
};

inline FilterVerdict classify_sample(const RawSample& s, const FilterBounds& b = {}) {
  if (std::min(s.image_width, s.image_height) < static_cast<int>(b.min_side))
    return FilterVerdict::image_too_small;
  const std::size_t words = whitespace_word_count(s.caption);
  if (words < b.min_words) return FilterVerdict::caption_too_short;
  if (words > b.max_words) return FilterVerdict::caption_too_long;
  return FilterVerdict::keep;
}

inline bool filter_sample(const RawSample& s, const FilterBounds& b = {}) {
  return classify_sample(s, b) == FilterVerdict::keep;
}

// ---------------------------------------------------------------- encoding

/// Tokens that feed the vocabulary: the truncated article plus the caption.
inline std::vector<std::string> vocabulary_tokens(const RawSample& s) {
  auto article = tokenize(s.article);
  if (article.size() > kMaxArticleTokens) article.resize(kMaxArticleTokens);
  auto caption = tokenize(s.caption);
  article.insert(article.end(), caption.begin(), caption.end());
  return article;
}

inline ProcessedSample encode_sample(const RawSample& s, const Vocabulary& vocab) {
  ProcessedSample p;
  p.id = s.id;
  p.source = s.source;
  p.feature_ref = s.feature_path;
  p.image_width = s.image_width;
  p.image_height = s.image_height;

  auto article = tokenize(s.article);
  p.article_token_count = article.size();
  const auto* article_ann = s.entities ? &s.entities->article : nullptr;
  auto article_entities = extract_entities(article, article_ann);
  if (article.size() > kMaxArticleTokens) article.resize(kMaxArticleTokens);
  std::erase_if(article_entities, [&](const EntityMention& m) { return m.end > article.size(); });
  fill_frequencies(article_entities);
  p.entity_set = unique_entities(std::move(article_entities));
  p.article_tokens = article;
  p.article_ids.reserve(article.size());
  for (const auto& t : article) p.article_ids.push_back(vocab.id(t));

  p.caption_tokens = tokenize(s.caption);
  if (p.caption_tokens.empty()) throw CorpusError(s.id + ": caption empty after cleaning");
  const auto* caption_ann = s.entities ? &s.entities->caption : nullptr;
  p.caption_entities = extract_entities(p.caption_tokens, caption_ann);
  // caption mention frequency = occurrences of the same surface in the article
  for (auto& m : p.caption_entities) {
    m.frequency = 0;
    for (const auto& e : p.entity_set)
      if (e.text == m.text) m.frequency += e.frequency;
  }
  const auto substituted = replace_oov_entities(p.caption_tokens, p.caption_entities, vocab);
  p.caption_ids.reserve(substituted.size() + 2);
  p.caption_ids.push_back(kBosId);
  for (const auto& t : substituted) p.caption_ids.push_back(vocab.id(t));
  p.caption_ids.push_back(kEosId);
  return p;
}

// ---------------------------------------------------------------- pipeline

struct PreprocessOptions {
  int min_freq = 2;
  FilterBounds bounds;
};

struct PreprocessResult {
  Vocabulary vocab;
  std::vector<ProcessedSample> samples;
  /// rejection reason -> count (filter verdicts and encoding failures)
  std::map<std::string, std::size_t> rejections;
  std::size_t kept = 0;
};

/// Filters, builds the vocabulary over the kept samples (unless `fixed` is
/// given) and encodes them. Samples whose tokenized caption falls outside the
/// word bounds or whose annotations are invalid are rejected with a reason.
inline PreprocessResult preprocess(const std::vector<RawSample>& raw, const PreprocessOptions& opt = {},
                                   const Vocabulary* fixed = nullptr) {
  PreprocessResult r;
  std::vector<const RawSample*> kept;
  for (const auto& s : raw) {
    const auto v = classify_sample(s, opt.bounds);
    if (v != FilterVerdict::keep) {
      ++r.rejections[verdict_name(v)];
      continue;
    }
    const auto n = tokenize(s.caption).size();
    if (n < opt.bounds.min_words || n > opt.bounds.max_words) {
      ++r.rejections["caption_tokens_out_of_range"];
      continue;
    }
    kept.push_back(&s);
  }
  if (fixed) {
    r.vocab = *fixed;
  } else if (!kept.empty()) {
    std::vector<std::vector<std::string>> docs;
    docs.reserve(kept.size());
    for (const auto* s : kept) docs.push_back(vocabulary_tokens(*s));
    r.vocab = build_vocab(docs, opt.min_freq);
  }
  for (const auto* s : kept) {
    try {
      r.samples.push_back(encode_sample(*s, r.vocab));
    } catch (const CorpusError&) {
      ++r.rejections["invalid_annotations"];
    }
  }
  r.kept = r.samples.size();
  return r;
}

}  // namespace newscap::corpus
