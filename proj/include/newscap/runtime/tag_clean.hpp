#pragma once

#include <optional>
#include <string>
#include <vector>

#include "newscap/corpus/tokenizer.hpp"
#include "newscap/corpus/types.hpp"

namespace newscap::runtime {

struct TagCleanResult {
  std::vector<std::string> tokens;
  std::size_t replaced = 0;
  /// tags left in place because the article has no entity of that category
  std::size_t unresolved = 0;
};

/// The entity a tag of category `type` resolves to: highest frequency, then
/// earliest article position.
inline const corpus::EntityMention* resolve_tag(corpus::EntityType type,
                                               const std::vector<corpus::EntityMention>& entity_set) {
  const corpus::EntityMention* best = nullptr;
  for (const auto& e : entity_set) {
    if (e.type != type) continue;
    if (!best || e.frequency > best->frequency || (e.frequency == best->frequency && e.start < best->start)) best = &e;
  }
  return best;
}

/// Replaces every tag token ("PERSON_", ...) by the tokens of the resolved
/// entity. Non-tag tokens pass through untouched.
inline TagCleanResult tag_clean(const std::vector<std::string>& tokens,
                                const std::vector<corpus::EntityMention>& entity_set) {
  TagCleanResult r;
  for (const auto& tok : tokens) {
    const auto type = corpus::tag_entity_type(tok);
    if (!type) {
      r.tokens.push_back(tok);
      continue;
    }
    if (const auto* e = resolve_tag(*type, entity_set)) {
      for (auto& t : corpus::tokenize(e->text)) r.tokens.push_back(std::move(t));
      ++r.replaced;
    } else {
      r.tokens.push_back(tok);
      ++r.unresolved;
    }
  }
  return r;
}

}  // namespace newscap::runtime
