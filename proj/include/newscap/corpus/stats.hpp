#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "newscap/corpus/types.hpp"

namespace newscap::corpus {

/// Entity statistics for one group of samples.
struct GroupStats {
  std::size_t images = 0;
  std::size_t articles = 0;
  std::size_t article_tokens = 0;
  std::size_t caption_tokens = 0;
  std::size_t caption_sentences = 0;
  std::size_t sentences_with_entity = 0;
  std::size_t entity_tokens = 0;
  std::array<std::size_t, kEntityTypeCount> type_counts{};

  double avg_article_length() const { return ratio(article_tokens, images); }
  double avg_caption_length() const { return ratio(caption_tokens, images); }
  double frac_sentences_with_entity() const { return ratio(sentences_with_entity, caption_sentences); }
  double frac_words_in_entity() const { return ratio(entity_tokens, caption_tokens); }
  double mean_per_caption(EntityType t) const {
    return ratio(type_counts[static_cast<std::size_t>(t)], images);
  }

  static double ratio(std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  }
};

struct OverlapMatrix {
  std::vector<std::string> sources;
  std::vector<std::vector<std::size_t>> counts;
};

struct StatsReport {
  std::map<std::string, GroupStats> per_source;
  GroupStats total;
  std::map<EntityType, OverlapMatrix> overlap;
  std::vector<std::string> warnings;
};

struct StatsOptions {
  /// captions drawn per source for the overlap matrix; 0 uses every caption
  std::size_t overlap_sample = 0;
  std::uint64_t seed = 0;
  /// sources the caller expects; any without samples is reported in warnings
  std::vector<std::string> expected_sources;
};

/// Caption sentences as token ranges: a sentence ends after a token ending in
/// '.', '?' or '!' that is followed by another token.
inline std::vector<std::pair<std::size_t, std::size_t>> caption_sentences(
    const std::vector<std::string>& tokens) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const char last = tokens[i].empty() ? '\0' : tokens[i].back();
    const bool boundary = (last == '.' || last == '?' || last == '!') && i + 1 < tokens.size();
    if (boundary) {
      out.emplace_back(begin, i + 1);
      begin = i + 1;
    }
  }
  if (begin < tokens.size()) out.emplace_back(begin, tokens.size());
  return out;
}

inline void accumulate_sample(GroupStats& g, const ProcessedSample& s) {
  ++g.images;
  g.article_tokens += s.article_token_count;
  g.caption_tokens += s.caption_tokens.size();
  std::vector<bool> in_entity(s.caption_tokens.size(), false);
  for (const auto& m : s.caption_entities) {
    ++g.type_counts[static_cast<std::size_t>(m.type)];
    for (std::size_t k = m.start; k < m.end && k < in_entity.size(); ++k) in_entity[k] = true;
  }
  g.entity_tokens += static_cast<std::size_t>(std::count(in_entity.begin(), in_entity.end(), true));
  for (const auto& [b, e] : caption_sentences(s.caption_tokens)) {
    ++g.caption_sentences;
    const bool has = std::any_of(s.caption_entities.begin(), s.caption_entities.end(),
                                 [&](const EntityMention& m) { return m.start >= b && m.start < e; });
    g.sentences_with_entity += has;
  }
}

inline StatsReport dataset_stats(const std::vector<ProcessedSample>& samples, const StatsOptions& opt = {}) {
  StatsReport r;
  std::map<std::string, std::vector<const ProcessedSample*>> groups;
  for (const auto& s : samples) groups[s.source].push_back(&s);

  std::map<std::string, std::set<std::size_t>> article_hashes;
  std::set<std::size_t> all_articles;
  for (const auto& [source, members] : groups) {
    GroupStats& g = r.per_source[source];
    for (const auto* s : members) {
      accumulate_sample(g, *s);
      accumulate_sample(r.total, *s);
      std::size_t h = 0;
      for (const auto& t : s->article_tokens) h = h * 1000003u ^ std::hash<std::string>{}(t);
      h ^= s->article_token_count;
      article_hashes[source].insert(h);
      all_articles.insert(h);
    }
    g.articles = article_hashes[source].size();
  }
  r.total.articles = all_articles.size();
  for (const auto& name : opt.expected_sources) {
    if (!groups.count(name)) r.warnings.push_back("source '" + name + "' has no samples; omitted");
  }

  // unique caption entity strings per (type, source), over a seeded sample
  std::map<EntityType, std::map<std::string, std::set<std::string>>> unique;
  std::vector<std::string> sources;
  for (const auto& [source, members] : groups) {
    sources.push_back(source);
    std::vector<const ProcessedSample*> pick = members;
    if (opt.overlap_sample && pick.size() > opt.overlap_sample) {
      std::mt19937_64 rng(opt.seed);
      std::shuffle(pick.begin(), pick.end(), rng);
      pick.resize(opt.overlap_sample);
    }
    for (const auto* s : pick)
      for (const auto& m : s->caption_entities) unique[m.type][source].insert(m.text);
  }
  for (const auto& [type, by_source] : unique) {
    OverlapMatrix m;
    m.sources = sources;
    m.counts.assign(sources.size(), std::vector<std::size_t>(sources.size(), 0));
    for (std::size_t i = 0; i < sources.size(); ++i) {
      for (std::size_t j = 0; j < sources.size(); ++j) {
        auto a = by_source.find(sources[i]);
        auto b = by_source.find(sources[j]);
        if (a == by_source.end() || b == by_source.end()) continue;
        std::vector<std::string> common;
        std::set_intersection(a->second.begin(), a->second.end(), b->second.begin(), b->second.end(),
                              std::back_inserter(common));
        m.counts[i][j] = common.size();
      }
    }
    r.overlap.emplace(type, std::move(m));
  }
  return r;
}

inline nlohmann::json group_to_json(const GroupStats& g) {
  nlohmann::json per_type = nlohmann::json::object();
  for (std::size_t t = 0; t < kEntityTypeCount; ++t) {
    per_type[std::string(kEntityTypeNames[t])] = g.mean_per_caption(static_cast<EntityType>(t));
  }
  return {{"images", g.images},
          {"articles", g.articles},
          {"avg_article_length", g.avg_article_length()},
          {"avg_caption_length", g.avg_caption_length()},
          {"caption_sentences", g.caption_sentences},
          {"frac_sentences_with_ne", g.frac_sentences_with_entity()},
          {"caption_tokens", g.caption_tokens},
          {"frac_words_in_ne", g.frac_words_in_entity()},
          {"entities_per_caption", per_type}};
}

inline nlohmann::json stats_to_json(const StatsReport& r) {
  nlohmann::json j;
  j["sources"] = nlohmann::json::object();
  for (const auto& [source, g] : r.per_source) j["sources"][source] = group_to_json(g);
  j["total"] = group_to_json(r.total);
  j["overlap"] = nlohmann::json::object();
  for (const auto& [type, m] : r.overlap) {
    j["overlap"][std::string(entity_type_name(type))] = {{"sources", m.sources}, {"matrix", m.counts}};
  }
  j["warnings"] = r.warnings;
  return j;
}

}  // namespace newscap::corpus
