#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include "json.hpp"
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "newscap/corpus/types.hpp"

namespace newscap::corpus {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kFirstTagId = 4;
inline constexpr std::size_t kReservedTokens = 4 + kEntityTypeCount;

inline const std::array<std::string, 4>& special_tokens() {
  static const std::array<std::string, 4> names = {"<pad>", "<bos>", "<eos>", "<unk>"};
  return names;
}

/// Bijective token <-> id map. Ids 0..3 are PAD/BOS/EOS/UNK, 4..21 the entity
/// tags in EntityType order, then corpus tokens.
class Vocabulary {
 public:
  Vocabulary() {
    for (const auto& s : special_tokens()) push(s);
    for (std::size_t i = 0; i < kEntityTypeCount; ++i) push(entity_tag(static_cast<EntityType>(i)));
  }

  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
  }
  std::optional<int> find(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  static int tag_id(EntityType t) { return kFirstTagId + static_cast<int>(t); }
  static bool is_tag(int id) { return id >= kFirstTagId && id < static_cast<int>(kReservedTokens); }
  static bool is_special(int id) { return id >= 0 && id < kFirstTagId; }
  static EntityType tag_type(int id) { return static_cast<EntityType>(id - kFirstTagId); }

  int min_freq() const { return min_freq_; }

  /// Appends a corpus token; returns its id (existing id if already present).
  int add(const std::string& token) {
    if (auto it = ids_.find(token); it != ids_.end()) return it->second;
    return push(token);
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
    return j;
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    std::vector<std::string> by_id(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto id = it.value().get<std::size_t>();
      if (id >= by_id.size() || !by_id[id].empty()) throw CorpusError("vocabulary ids are not a permutation");
      by_id[id] = it.key();
    }
    Vocabulary v;
    for (std::size_t i = 0; i < kReservedTokens; ++i) {
      if (i >= by_id.size() || by_id[i] != v.tokens_[i]) {
        throw CorpusError("vocabulary is missing reserved token at id " + std::to_string(i));
      }
    }
    for (std::size_t i = kReservedTokens; i < by_id.size(); ++i) v.push(by_id[i]);
    return v;
  }

  /// Stable content hash (crc32 over the serialized map).
  std::uint32_t hash() const {
    const std::string s = to_json().dump();
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CorpusError("cannot write vocabulary " + path);
    out << to_json().dump(1) << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot read vocabulary " + path);
    return from_json(nlohmann::json::parse(in));
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  friend Vocabulary build_vocab(const std::vector<std::vector<std::string>>&, int);

  int push(const std::string& token) {
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    ids_.emplace(token, id);
    return id;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int min_freq_ = 1;
};

/// specials + tags + every token with count >= min_freq, ordered by
/// descending count, ties lexicographic.
inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& documents, int min_freq) {
  if (documents.empty()) throw CorpusError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : documents)
    for (const auto& tok : doc) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : counts) {
    if (static_cast<int>(n) >= min_freq) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  v.min_freq_ = min_freq;
  for (const auto& [tok, n] : kept) v.add(tok);
  return v;
}

}  // namespace newscap::corpus
