#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace newscap::corpus {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The fixed 18 named-entity categories. Order fixes the tag ids.
enum class EntityType {
  PERSON, NORP, FAC, ORG, GPE, LOC, PRODUCT, EVENT, WORK_OF_ART,
  LAW, LANGUAGE, DATE, TIME, PERCENT, MONEY, QUANTITY, ORDINAL, CARDINAL
};

inline constexpr std::size_t kEntityTypeCount = 18;

inline constexpr std::array<std::string_view, kEntityTypeCount> kEntityTypeNames = {
    "PERSON", "NORP", "FAC", "ORG", "GPE", "LOC", "PRODUCT", "EVENT", "WORK_OF_ART",
    "LAW", "LANGUAGE", "DATE", "TIME", "PERCENT", "MONEY", "QUANTITY", "ORDINAL", "CARDINAL"};

inline std::string_view entity_type_name(EntityType t) {
  return kEntityTypeNames[static_cast<std::size_t>(t)];
}

inline std::optional<EntityType> parse_entity_type(std::string_view name) {
  for (std::size_t i = 0; i < kEntityTypeCount; ++i) {
    if (kEntityTypeNames[i] == name) return static_cast<EntityType>(i);
  }
  return std::nullopt;
}

/// Vocabulary token standing in for an OOV entity of this type, e.g. "PERSON_".
inline std::string entity_tag(EntityType t) { return std::string(entity_type_name(t)) + "_"; }

inline std::optional<EntityType> tag_entity_type(std::string_view token) {
  if (token.size() < 2 || token.back() != '_') return std::nullopt;
  return parse_entity_type(token.substr(0, token.size() - 1));
}

/// A mention over a tokenized text. `start`/`end` are token indices, end exclusive.
struct EntityMention {
  std::string text;
  EntityType type = EntityType::ORG;
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t frequency = 0;

  std::size_t length() const { return end - start; }
  friend bool operator==(const EntityMention&, const EntityMention&) = default;
};

struct EntityAnnotations {
  std::vector<EntityMention> article;
  std::vector<EntityMention> caption;
};

struct RawSample {
  std::string id;
  std::string article;
  std::string caption;
  int image_width = 0;
  int image_height = 0;
  std::string source;
  std::string feature_path;
  std::optional<EntityAnnotations> entities;
};

inline constexpr std::size_t kMaxArticleTokens = 300;
inline constexpr std::size_t kMinImageSide = 180;
inline constexpr std::size_t kMinCaptionWords = 5;
inline constexpr std::size_t kMaxCaptionWords = 31;

struct ProcessedSample {
  std::string id;
  std::string source;
  /// token count of the whole article before truncation
  std::size_t article_token_count = 0;
  std::vector<int> article_ids;
  std::vector<std::string> article_tokens;
  /// unique (text, type) article mentions inside the truncated window, in
  /// order of first occurrence; span = first occurrence
  std::vector<EntityMention> entity_set;
  /// BOS + caption (OOV entities as tags, other OOV as UNK) + EOS
  std::vector<int> caption_ids;
  /// caption surface tokens before tag substitution
  std::vector<std::string> caption_tokens;
  std::vector<EntityMention> caption_entities;
  std::string feature_ref;
  int image_width = 0;
  int image_height = 0;
};

}  // namespace newscap::corpus
