#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "newscap/corpus/tokenizer.hpp"

namespace newscap::eval {

using Tokens = std::vector<std::string>;

/// One candidate/reference caption with their entity mention strings.
struct EvalPair {
  Tokens candidate;
  Tokens reference;
  std::vector<std::string> candidate_entities;
  std::vector<std::string> reference_entities;
};

using NgramCounts = std::map<Tokens, int>;

inline NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

/// Zero n-gram precisions (n >= 2) are replaced by this value.
inline constexpr double kBleuEpsilon = 1e-9;

/// Corpus-level BLEU-4: clipped n-gram precisions pooled over all pairs,
/// uniform weights, brevity penalty on total lengths. No unigram match at all
/// scores 0.
inline double bleu4(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("bleu4: no pairs");
  double matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
  double cand_len = 0, ref_len = 0;
  for (const auto& p : pairs) {
    cand_len += static_cast<double>(p.candidate.size());
    ref_len += static_cast<double>(p.reference.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto c = ngrams(p.candidate, n);
      const auto r = ngrams(p.reference, n);
      for (const auto& [g, k] : c) {
        totals[n - 1] += k;
        if (auto it = r.find(g); it != r.end()) matches[n - 1] += std::min(k, it->second);
      }
    }
  }
  if (matches[0] == 0) return 0.0;
  double log_sum = 0;
  for (int n = 0; n < 4; ++n) {
    const double p = matches[n] > 0 ? matches[n] / totals[n] : kBleuEpsilon;
    log_sum += 0.25 * std::log(p);
  }
  const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum);
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline constexpr double kRougeBeta = 1.2;

inline double rouge_l_pair(const Tokens& cand, const Tokens& ref) {
  const auto lcs = static_cast<double>(lcs_length(cand, ref));
  if (lcs == 0) return 0.0;
  const double p = lcs / static_cast<double>(cand.size());
  const double r = lcs / static_cast<double>(ref.size());
  const double b2 = kRougeBeta * kRougeBeta;
  return (1 + b2) * p * r / (r + b2 * p);
}

/// ROUGE-L F-measure (beta 1.2) averaged over pairs.
inline double rouge_l(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("rouge_l: no pairs");
  double sum = 0;
  for (const auto& p : pairs) sum += rouge_l_pair(p.candidate, p.reference);
  return sum / static_cast<double>(pairs.size());
}

/// CIDEr with document frequencies taken over the references of `pairs`:
/// per n = 1..4 the cosine between tf-idf vectors (tf = count / total,
/// idf = log(N / df)), averaged over n, times 10, averaged over pairs.
inline double cider(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("cider: empty reference corpus");
  const double n_docs = static_cast<double>(pairs.size());
  std::vector<NgramCounts> df(5);
  std::vector<std::vector<NgramCounts>> refs(5), cands(5);
  for (std::size_t n = 1; n <= 4; ++n) {
    for (const auto& p : pairs) {
      refs[n].push_back(ngrams(p.reference, n));
      cands[n].push_back(ngrams(p.candidate, n));
      for (const auto& kv : refs[n].back()) ++df[n][kv.first];
    }
  }
  auto weights = [&](const NgramCounts& counts, std::size_t n) {
    std::map<Tokens, double> w;
    double total = 0;
    for (const auto& kv : counts) total += kv.second;
    for (const auto& [g, k] : counts) {
      auto it = df[n].find(g);
      const double d = it == df[n].end() ? 1.0 : std::max(1.0, static_cast<double>(it->second));
      w[g] = (k / total) * std::log(n_docs / d);
    }
    return w;
  };
  double score = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    double pair_score = 0;
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto c = weights(cands[n][i], n);
      const auto r = weights(refs[n][i], n);
      double dot = 0, nc = 0, nr = 0;
      for (const auto& [g, v] : c) {
        nc += v * v;
        if (auto it = r.find(g); it != r.end()) dot += v * it->second;
      }
      for (const auto& kv : r) nr += kv.second * kv.second;
      if (nc > 0 && nr > 0) pair_score += dot / (std::sqrt(nc) * std::sqrt(nr));
    }
    score += 10.0 * pair_score / 4.0;
  }
  return score / n_docs;
}

/// Casefolded, whitespace-collapsed surface form.
inline std::string normalize_entity(const std::string& s) {
  std::string out;
  bool space = false;
  for (char ch : s) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

struct EntityScores {
  double precision = 0.0;
  double recall = 0.0;
  std::size_t matched = 0, candidate_total = 0, reference_total = 0;
  /// false when no candidate mentions exist (precision reported as 0)
  bool precision_defined = false;
  bool recall_defined = false;
};

/// Micro-averaged entity precision/recall with multiset clipping.
inline EntityScores entity_pr(const std::vector<EvalPair>& pairs) {
  EntityScores s;
  for (const auto& p : pairs) {
    std::map<std::string, int> ref;
    for (const auto& e : p.reference_entities) ++ref[normalize_entity(e)];
    for (const auto& e : p.candidate_entities) {
      auto it = ref.find(normalize_entity(e));
      if (it != ref.end() && it->second > 0) {
        --it->second;
        ++s.matched;
      }
    }
    s.candidate_total += p.candidate_entities.size();
    s.reference_total += p.reference_entities.size();
  }
  s.precision_defined = s.candidate_total > 0;
  s.recall_defined = s.reference_total > 0;
  if (s.precision_defined) s.precision = static_cast<double>(s.matched) / static_cast<double>(s.candidate_total);
  if (s.recall_defined) s.recall = static_cast<double>(s.matched) / static_cast<double>(s.reference_total);
  return s;
}

/// Greedy longest-match tagger over a fixed phrase list (the sample's known
/// entity strings), applied identically to candidates and references.
class Gazetteer {
 public:
  explicit Gazetteer(const std::vector<std::string>& phrases) {
    for (const auto& p : phrases) {
      auto toks = corpus::tokenize(p);
      if (toks.empty()) continue;
      longest_ = std::max(longest_, toks.size());
      phrases_.emplace(std::move(toks), normalize_entity(p));
    }
  }

  std::vector<std::string> find(const Tokens& tokens) const {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < tokens.size()) {
      std::size_t step = 1;
      for (std::size_t len = std::min(longest_, tokens.size() - i); len > 0; --len) {
        Tokens key(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(i + len));
        if (phrases_.count(key)) {
          out.push_back(corpus::join(key));
          step = len;
          break;
        }
      }
      i += step;
    }
    return out;
  }

 private:
  std::map<Tokens, std::string> phrases_;
  std::size_t longest_ = 0;
};

struct MetricSet {
  double bleu4 = 0, rouge_l = 0, cider = 0;
  EntityScores entities;
};

/// All metrics at once; an empty pair list yields zeros.
inline MetricSet score_all(const std::vector<EvalPair>& pairs) {
  MetricSet m;
  if (pairs.empty()) return m;
  m.bleu4 = bleu4(pairs);
  m.rouge_l = rouge_l(pairs);
  m.cider = cider(pairs);
  m.entities = entity_pr(pairs);
  return m;
}

}  // namespace newscap::eval
