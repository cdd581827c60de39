#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "newscap/corpus/tokenizer.hpp"
#include "newscap/corpus/types.hpp"
#include "newscap/corpus/vocab.hpp"

namespace newscap::corpus {

namespace detail {

inline bool is_capitalized(const std::string& tok) {
  return !tok.empty() && std::isupper(static_cast<unsigned char>(tok.front())) != 0;
}

inline bool is_year(const std::string& tok) {
  return tok.size() == 4 && std::all_of(tok.begin(), tok.end(),
                                        [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

inline bool ends_sentence(const std::string& tok) {
  return tok == "." || tok == "?" || tok == "!";
}

inline const std::set<std::string>& sentence_stopwords() {
  static const std::set<std::string> words = {
      "A", "An", "The", "He", "She", "It", "They", "We", "I", "You", "This", "That", "These",
      "Those", "In", "On", "At", "But", "And", "Or", "If", "As", "After", "Before", "When",
      "While", "His", "Her", "Their", "Its", "Our", "My", "There", "Here", "For", "From", "With"};
  return words;
}

}  // namespace detail

/// Sets `frequency` of each mention to the number of mentions in `mentions`
/// sharing its surface text.
inline void fill_frequencies(std::vector<EntityMention>& mentions) {
  std::map<std::string, std::size_t> counts;
  for (const auto& m : mentions) ++counts[m.text];
  for (auto& m : mentions) m.frequency = counts[m.text];
}

/// Validates annotation spans against `tokens`.
inline void validate_mentions(const std::vector<EntityMention>& mentions, std::size_t token_count) {
  for (const auto& m : mentions) {
    if (m.start >= m.end || m.end > token_count) {
      throw CorpusError("entity span [" + std::to_string(m.start) + "," + std::to_string(m.end) +
                        ") outside text of " + std::to_string(token_count) + " tokens");
    }
  }
}

/// Annotated mentions are validated and returned with frequencies filled.
/// Without annotations a capitalization heuristic runs: maximal runs of
/// capitalized tokens become ORG mentions (sentence-initial stopwords are
/// trimmed), four-digit numbers become DATE.
inline std::vector<EntityMention> extract_entities(const std::vector<std::string>& tokens,
                                                   const std::vector<EntityMention>* annotations) {
  std::vector<EntityMention> out;
  if (annotations) {
    validate_mentions(*annotations, tokens.size());
    out = *annotations;
    fill_frequencies(out);
    return out;
  }
  const auto& stop = detail::sentence_stopwords();
  std::size_t i = 0;
  while (i < tokens.size()) {
    if (detail::is_year(tokens[i])) {
      out.push_back({tokens[i], EntityType::DATE, i, i + 1, 0});
      ++i;
      continue;
    }
    if (!detail::is_capitalized(tokens[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < tokens.size() && detail::is_capitalized(tokens[j])) ++j;
    std::size_t begin = i;
    const bool sentence_initial = i == 0 || detail::ends_sentence(tokens[i - 1]);
    if (sentence_initial) {
      while (begin < j && stop.count(tokens[begin])) ++begin;
    }
    if (begin < j) out.push_back({join(tokens, begin, j), EntityType::ORG, begin, j, 0});
    i = j;
  }
  fill_frequencies(out);
  return out;
}

/// Keeps the first occurrence of every (text, type) pair, in order of
/// appearance, with frequency = number of occurrences.
inline std::vector<EntityMention> unique_entities(std::vector<EntityMention> mentions) {
  std::stable_sort(mentions.begin(), mentions.end(),
                   [](const EntityMention& a, const EntityMention& b) { return a.start < b.start; });
  std::map<std::pair<std::string, EntityType>, std::size_t> counts;
  for (const auto& m : mentions) ++counts[{m.text, m.type}];
  std::vector<EntityMention> out;
  std::set<std::pair<std::string, EntityType>> seen;
  for (const auto& m : mentions) {
    if (!seen.insert({m.text, m.type}).second) continue;
    out.push_back(m);
    out.back().frequency = counts[{m.text, m.type}];
  }
  return out;
}

/// Caption tokens with every entity mention containing an OOV token collapsed
/// into its category tag, and remaining OOV tokens mapped to "<unk>".
inline std::vector<std::string> replace_oov_entities(const std::vector<std::string>& caption_tokens,
                                                     const std::vector<EntityMention>& caption_entities,
                                                     const Vocabulary& vocab) {
  validate_mentions(caption_entities, caption_tokens.size());
  std::vector<const EntityMention*> by_start(caption_tokens.size(), nullptr);
  std::vector<bool> covered(caption_tokens.size(), false);
  for (const auto& m : caption_entities) {
    for (std::size_t k = m.start; k < m.end; ++k) {
      if (covered[k]) throw CorpusError("overlapping caption entity spans at token " + std::to_string(k));
      covered[k] = true;
    }
    by_start[m.start] = &m;
  }
  const std::string& unk = special_tokens()[kUnkId];
  std::vector<std::string> out;
  out.reserve(caption_tokens.size());
  std::size_t i = 0;
  while (i < caption_tokens.size()) {
    if (const EntityMention* m = by_start[i]) {
      const bool oov = std::any_of(caption_tokens.begin() + m->start, caption_tokens.begin() + m->end,
                                   [&](const std::string& t) { return !vocab.contains(t); });
      if (oov) {
        out.push_back(entity_tag(m->type));
      } else {
        out.insert(out.end(), caption_tokens.begin() + m->start, caption_tokens.begin() + m->end);
      }
      i = m->end;
      continue;
    }
    out.push_back(vocab.contains(caption_tokens[i]) ? caption_tokens[i] : unk);
    ++i;
  }
  return out;
}

}  // namespace newscap::corpus
