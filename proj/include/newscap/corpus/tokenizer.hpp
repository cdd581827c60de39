#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace newscap::corpus {

namespace detail {

inline bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

// Drops `open ... close` segments when a matching close exists; nesting aware.
inline std::string strip_segments(std::string_view text, char open, char close) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == open) {
      int depth = 0;
      std::size_t j = i;
      for (; j < text.size(); ++j) {
        if (text[j] == open) ++depth;
        if (text[j] == close && --depth == 0) break;
      }
      if (j < text.size()) {
        out.push_back(' ');
        i = j;
        continue;
      }
    }
    out.push_back(text[i]);
  }
  return out;
}

}  // namespace detail

/// Removes HTML tags, bracketed segments and non-ASCII bytes, then splits on
/// whitespace. Leading and trailing punctuation characters of each word
/// become tokens of their own; inner punctuation stays. Case is preserved.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::string ascii;
  ascii.reserve(text.size());
  for (char c : text) {
    if (static_cast<unsigned char>(c) < 0x80) ascii.push_back(c);
  }
  std::string cleaned = detail::strip_segments(ascii, '<', '>');
  cleaned = detail::strip_segments(cleaned, '(', ')');
  cleaned = detail::strip_segments(cleaned, '[', ']');
  cleaned = detail::strip_segments(cleaned, '{', '}');

  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() && std::isspace(static_cast<unsigned char>(cleaned[i]))) ++i;
    std::size_t j = i;
    while (j < cleaned.size() && !std::isspace(static_cast<unsigned char>(cleaned[j]))) ++j;
    if (j == i) break;
    std::string_view word(cleaned.data() + i, j - i);
    std::size_t lo = 0, hi = word.size();
    while (lo < hi && detail::is_punct(word[lo])) tokens.emplace_back(1, word[lo++]);
    std::size_t tail = hi;
    while (tail > lo && detail::is_punct(word[tail - 1])) --tail;
    if (tail > lo) tokens.emplace_back(word.substr(lo, tail - lo));
    for (std::size_t k = tail; k < hi; ++k) tokens.emplace_back(1, word[k]);
    i = j;
  }
  return tokens;
}

/// Word count used by the caption length filter: whitespace-separated words
/// of the raw text.
inline std::size_t whitespace_word_count(std::string_view text) {
  std::size_t count = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++count;
    in_word = !space;
  }
  return count;
}

inline std::string join(const std::vector<std::string>& tokens, std::size_t begin, std::size_t end,
                        std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out += sep;
    out += tokens[i];
  }
  return out;
}

inline std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ") {
  return join(tokens, 0, tokens.size(), sep);
}

}  // namespace newscap::corpus
