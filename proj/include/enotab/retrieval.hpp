#pragma once

#include "enotab/error.hpp"
#include "enotab/prompts.hpp"
#include "enotab/provider.hpp"
#include "enotab/table.hpp"
#include "enotab/text.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace enotab {

struct RetrievalConfig {
  std::size_t k = 10;
  double lambda = 0.7;
  std::size_t cap_max = 256;
  double cap_frac = 0.1;
  std::size_t minhash_signatures = 64;
  std::uint64_t seed = 20250101;

  /// C = min(cap_max, ceil(cap_frac * N)), at least 1.
  std::size_t candidate_cap(std::size_t n) const {
    // Guard against 0.1 * 30 == 3.0000000000000004 rounding up to 4.
    auto scaled = static_cast<std::size_t>(std::ceil(cap_frac * static_cast<double>(n) - 1e-9));
    return std::max<std::size_t>(1, std::min(cap_max, scaled));
  }
};

struct ScoredRow {
  std::size_t row_index = 0;
  double sem = 0;
  double lex = 0;
  double score = 0;
};

// -- keywords ---------------------------------------------------------------

namespace detail {

inline const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words{
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "before",
    "between", "both", "but", "by", "can", "could", "did", "do", "does", "each", "for", "from", "had", "has",
    "have", "he", "her", "his", "how", "i", "if", "in", "into", "is", "it", "its", "many", "more", "most",
    "much", "no", "not", "of", "on", "or", "other", "our", "she", "should", "so", "some", "such", "than",
    "that", "the", "their", "them", "then", "there", "these", "they", "this", "those", "to", "total", "under",
    "up", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom", "whose", "why",
    "will", "with", "would", "you", "your", "list", "name", "number", "show", "tell", "give", "me"};
  return words;
}

inline void add_unique(std::vector<std::string>& out, std::string kw) {
  kw = text::normalize(kw);
  if (!kw.empty() && std::find(out.begin(), out.end(), kw) == out.end())
    out.push_back(std::move(kw));
}

} // namespace detail

/// Stopword-filtered, lowercased, deduplicated question words.
inline std::vector<std::string> fallback_keywords(std::string_view question) {
  std::vector<std::string> out;
  auto tokens = text::word_tokens(question);
  for (auto& t : tokens)
    if (!detail::stopwords().count(t))
      detail::add_unique(out, t);
  if (out.empty())
    for (auto& t : tokens)
      detail::add_unique(out, t);
  if (out.empty())
    detail::add_unique(out, std::string{question});
  return out;
}

/// Keywords from the keyword model, or the stopword fallback when the model
/// fails or returns nothing usable. Never empty.
inline std::vector<std::string> extract_keywords(std::string_view question, LlmProvider& provider,
                                                 std::string_view prompt_template = prompt_text::keywords) {
  if (text::trim(question).empty())
    throw error{errc::malformed_input, "empty question"};
  std::vector<std::string> out;
  try {
    auto reply = provider.complete(Role::keywords, fill(prompt_template, {{"question", question}}));
    if (auto j = extract_json_block(reply); j && j->is_array())
      for (const auto& item : *j)
        if (item.is_string())
          detail::add_unique(out, item.get<std::string>());
  } catch (const error&) {
    out.clear();
  }
  if (out.empty())
    return fallback_keywords(question);
  return out;
}

// -- MinHash ----------------------------------------------------------------

/// MinHash over word-token sets with a seeded universal hash family
/// h_i(x) = (a_i * x + b_i) mod (2^61 - 1).
class MinHasher {
public:
  MinHasher(std::size_t signatures, std::uint64_t seed) {
    std::mt19937_64 rng{seed};
    std::uniform_int_distribution<std::uint64_t> dist{1, prime - 1};
    params_.reserve(signatures);
    for (std::size_t i = 0; i < signatures; ++i)
      params_.push_back({dist(rng), dist(rng)});
  }

  std::vector<std::uint64_t> signature(const std::vector<std::string>& tokens) const {
    std::vector<std::uint64_t> sig(params_.size(), std::numeric_limits<std::uint64_t>::max());
    for (const auto& t : tokens) {
      auto x = text::fnv1a64(t) % prime;
      for (std::size_t i = 0; i < params_.size(); ++i) {
        auto h = static_cast<std::uint64_t>((static_cast<wide>(params_[i].a) * x + params_[i].b) % prime);
        sig[i] = std::min(sig[i], h);
      }
    }
    return sig;
  }

  /// Fraction of agreeing signature slots.
  static double estimate(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
    if (a.empty() || a.size() != b.size())
      return 0;
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      same += a[i] == b[i] && a[i] != std::numeric_limits<std::uint64_t>::max();
    return static_cast<double>(same) / static_cast<double>(a.size());
  }

private:
  __extension__ using wide = unsigned __int128;
  static constexpr std::uint64_t prime = (std::uint64_t{1} << 61) - 1;
  struct Params {
    std::uint64_t a;
    std::uint64_t b;
  };
  std::vector<Params> params_;
};

inline std::vector<std::string> keyword_tokens(const std::vector<std::string>& keywords) {
  std::vector<std::string> out;
  for (const auto& k : keywords)
    for (auto& t : text::word_tokens(k))
      if (std::find(out.begin(), out.end(), t) == out.end())
        out.push_back(std::move(t));
  return out;
}

inline std::vector<std::string> row_word_tokens(const Row& row) {
  std::vector<std::string> out;
  for (const auto& c : row)
    for (auto& t : text::word_tokens(c.raw))
      out.push_back(std::move(t));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Up to C row indices ranked by estimated Jaccard similarity with the
/// keyword tokens (ties by ascending index). With no keywords, the first C
/// rows in order.
inline std::vector<std::size_t> lsh_candidates(const Table& table, const std::vector<std::string>& keywords,
                                               const RetrievalConfig& cfg) {
  auto cap = std::min(cfg.candidate_cap(table.row_count()), table.row_count());
  std::vector<std::size_t> out;
  auto kw_tokens = keyword_tokens(keywords);
  if (kw_tokens.empty()) {
    for (std::size_t i = 0; i < cap; ++i)
      out.push_back(i);
    return out;
  }
  MinHasher hasher{cfg.minhash_signatures, cfg.seed};
  auto query = hasher.signature(kw_tokens);
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(table.row_count());
  for (std::size_t r = 0; r < table.row_count(); ++r)
    scored.emplace_back(MinHasher::estimate(query, hasher.signature(row_word_tokens(table.rows()[r]))), r);
  auto by_rank = [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(cap), scored.end(), by_rank);
  for (std::size_t i = 0; i < cap; ++i)
    out.push_back(scored[i].second);
  return out;
}

// -- re-ranking -------------------------------------------------------------

/// max over (keyword, row token) of 1 - editdist / max length, where row
/// tokens are whole normalized cells and the words inside them.
inline double lexical_similarity(const Row& row, const std::vector<std::string>& keywords) {
  std::vector<std::string> tokens;
  for (const auto& c : row) {
    auto whole = text::normalize(c.raw);
    if (whole.empty())
      continue;
    for (auto& w : text::word_tokens(whole))
      if (w != whole)
        tokens.push_back(std::move(w));
    tokens.push_back(std::move(whole));
  }
  double best = 0;
  for (const auto& raw_kw : keywords) {
    auto kw = text::normalize(raw_kw);
    if (kw.empty())
      continue;
    for (const auto& t : tokens) {
      auto longest = std::max(kw.size(), t.size());
      double sim = 1.0 - static_cast<double>(text::edit_distance(kw, t)) / static_cast<double>(longest);
      best = std::max(best, sim);
    }
  }
  return best;
}

inline double hybrid_score(double sem, double lex, double lambda) {
  return lambda * sem + (1.0 - lambda) * lex;
}

inline std::string row_text(const Row& row) {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i)
      out += " | ";
    out += row[i].raw;
  }
  return out;
}

/// Scores candidates by lambda * sem + (1 - lambda) * lex, sem being the
/// cosine of question and row embeddings mapped to [0,1]. Sorted by score
/// descending, then row index. If the embedder fails, lex alone ranks.
inline std::vector<ScoredRow> rerank(const Table& table, const std::vector<std::size_t>& candidates,
                                     std::string_view question, const std::vector<std::string>& keywords,
                                     const RetrievalConfig& cfg, Embedder& embedder,
                                     std::vector<std::string>* warnings = nullptr) {
  std::vector<ScoredRow> out;
  out.reserve(candidates.size());
  for (auto r : candidates)
    out.push_back(ScoredRow{r, 0, lexical_similarity(table.rows().at(r), keywords), 0});

  bool semantic = true;
  try {
    auto q = embedder.embed(question);
    for (auto& s : out)
      s.sem = (1.0 + cosine(q, embedder.embed(row_text(table.rows()[s.row_index])))) / 2.0;
  } catch (const error& e) {
    semantic = false;
    if (warnings)
      warnings->push_back(std::string{"embedder failed, ranking by lexical similarity: "} + e.what());
  }
  for (auto& s : out) {
    if (!semantic)
      s.sem = 0;
    s.score = semantic ? hybrid_score(s.sem, s.lex, cfg.lambda) : s.lex;
  }
  std::stable_sort(out.begin(), out.end(), [](const ScoredRow& a, const ScoredRow& b) {
    return a.score != b.score ? a.score > b.score : a.row_index < b.row_index;
  });
  return out;
}

/// Outcome of two-stage retrieval; `rows` is the representative set R.
struct Retrieval {
  SubTable rows;
  std::vector<std::string> keywords;
  std::vector<std::size_t> candidates;
  std::vector<ScoredRow> ranking;
  std::vector<std::string> warnings;
};

/// Top min(k, N) rows. When C < k the pool is topped up with the earliest
/// rows not already in it, so the result size is always min(k, N).
inline Retrieval select_representative_rows(const Table& table, std::string_view question,
                                            const RetrievalConfig& cfg, LlmProvider& provider, Embedder& embedder,
                                            const PromptSet& prompts = {}) {
  Retrieval out;
  if (table.row_count() <= cfg.k) {
    out.rows = SubTable::full(table);
    return out;
  }
  out.keywords = extract_keywords(question, provider, prompts.keywords);
  out.candidates = lsh_candidates(table, out.keywords, cfg);
  auto pool = out.candidates;
  std::vector<bool> in_pool(table.row_count(), false);
  for (auto r : pool)
    in_pool[r] = true;
  for (std::size_t r = 0; pool.size() < cfg.k && r < table.row_count(); ++r)
    if (!in_pool[r])
      pool.push_back(r);
  out.ranking = rerank(table, pool, question, out.keywords, cfg, embedder, &out.warnings);
  std::vector<std::size_t> top;
  for (std::size_t i = 0; i < std::min(cfg.k, out.ranking.size()); ++i)
    top.push_back(out.ranking[i].row_index);
  out.rows = SubTable{table, std::move(top)};
  return out;
}

} // namespace enotab
