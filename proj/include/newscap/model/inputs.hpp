#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "newscap/corpus/tokenizer.hpp"
#include "newscap/corpus/types.hpp"
#include "newscap/corpus/vocab.hpp"
#include "newscap/model/encoder.hpp"

namespace newscap::model {

/// Everything the network reads from one sample, already mapped to ids.
struct SampleInputs {
  std::vector<int> article_ids;
  /// mention tokens concatenated in entity-set order
  std::vector<int> entity_token_ids;
  std::vector<MentionSpan> mentions;
  /// vocabulary id emitted when copying article position i / mention j
  std::vector<int> article_copy;
  std::vector<int> entity_copy;
  /// BOS ... EOS
  std::vector<int> caption_ids;
  Tensor<float> features;
};

/// Token ids of one mention: the token's own id when in vocabulary, else the
/// mention's tag id (keeps the category visible to the encoder).
inline std::vector<int> mention_token_ids(const corpus::EntityMention& m, const corpus::Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& tok : corpus::tokenize(m.text)) {
    auto id = vocab.find(tok);
    ids.push_back(id ? *id : corpus::Vocabulary::tag_id(m.type));
  }
  return ids;
}

/// Copy target of a mention: its first token when every token is in
/// vocabulary, else its tag.
inline int mention_copy_id(const corpus::EntityMention& m, const corpus::Vocabulary& vocab) {
  const auto toks = corpus::tokenize(m.text);
  if (toks.empty()) return corpus::Vocabulary::tag_id(m.type);
  for (const auto& tok : toks)
    if (!vocab.contains(tok)) return corpus::Vocabulary::tag_id(m.type);
  return vocab.id(toks.front());
}

/// Copy targets of article positions: the token id when in vocabulary;
/// an unknown token inside any occurrence of an entity-set mention copies as
/// that mention's tag; anything else copies as UNK.
inline std::vector<int> article_copy_map(const std::vector<int>& article_ids,
                                         const std::vector<std::string>& article_tokens,
                                         const std::vector<corpus::EntityMention>& entity_set) {
  std::vector<int> out = article_ids;
  if (article_tokens.size() != article_ids.size()) return out;
  for (const auto& m : entity_set) {
    const auto toks = corpus::tokenize(m.text);
    if (toks.empty() || toks.size() > article_tokens.size()) continue;
    const int tag = corpus::Vocabulary::tag_id(m.type);
    for (std::size_t i = 0; i + toks.size() <= article_tokens.size(); ++i) {
      if (!std::equal(toks.begin(), toks.end(), article_tokens.begin() + static_cast<std::ptrdiff_t>(i))) continue;
      for (std::size_t j = i; j < i + toks.size(); ++j)
        if (out[j] == corpus::kUnkId) out[j] = tag;
    }
  }
  return out;
}

inline SampleInputs make_inputs(const corpus::ProcessedSample& s, const corpus::Vocabulary& vocab,
                                Tensor<float> features) {
  if (s.article_ids.empty()) throw std::invalid_argument("sample " + s.id + " has an empty article");
  SampleInputs in;
  in.article_ids = s.article_ids;
  in.article_copy = article_copy_map(s.article_ids, s.article_tokens, s.entity_set);
  for (const auto& m : s.entity_set) {
    auto ids = mention_token_ids(m, vocab);
    if (ids.empty()) continue;
    in.mentions.push_back({in.entity_token_ids.size(), in.entity_token_ids.size() + ids.size()});
    in.entity_token_ids.insert(in.entity_token_ids.end(), ids.begin(), ids.end());
    in.entity_copy.push_back(mention_copy_id(m, vocab));
  }
  in.caption_ids = s.caption_ids;
  in.features = std::move(features);
  return in;
}

}  // namespace newscap::model
