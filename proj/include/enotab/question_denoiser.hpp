#pragma once

#include "enotab/error.hpp"
#include "enotab/prompts.hpp"
#include "enotab/provider.hpp"
#include "enotab/table.hpp"
#include "enotab/toolkit.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace enotab {

struct EqdConfig {
  std::size_t rounds = 5;
  double alpha = 0.8;
  DiscriminatorMode discriminator = DiscriminatorMode::rule_based;
  bool consistency = true; // off: every generated evidence is a candidate
  bool usability = true;   // off: candidates pass straight to E_r
};

struct EvidenceRounds {
  std::vector<std::vector<Evidence>> rounds;
  /// Provider calls spent on each round (1, or 2 after a malformed reply).
  std::vector<std::size_t> attempts;
  /// Rounds whose replies stayed malformed after the retry.
  std::vector<std::size_t> dropped;
};

// -- generation -------------------------------------------------------------

/// Parses an evidence-set reply. nullopt when there is no JSON block or any
/// element is not a well-formed evidence; `[]` is a valid empty set.
inline std::optional<std::vector<Evidence>> parse_evidence_set(std::string_view reply) {
  auto j = extract_json_block(reply);
  if (!j)
    return std::nullopt;
  const nlohmann::ordered_json* list = &*j;
  if (j->is_object()) {
    for (const char* key : {"evidences", "evidence"})
      if (j->contains(key)) {
        list = &(*j)[key];
        break;
      }
  }
  if (!list->is_array())
    return std::nullopt;
  std::vector<Evidence> out;
  for (const auto& item : *list) {
    auto e = evidence_from_json(item);
    if (!e)
      return std::nullopt;
    out.push_back(std::move(*e));
  }
  return out;
}

inline std::string header_line(const Table& t) {
  return text::join(t.headers(), " | ");
}

inline std::string rows_block(const SubTable& rows) {
  std::string out;
  for (auto r : rows.row_indices()) {
    if (!out.empty())
      out += '\n';
    out += detail::pipe_row(rows.source().rows()[r]);
  }
  return out;
}

/// n independent evidence sets from the evidence model. A malformed reply
/// is retried once, then the round is recorded empty. Throws
/// ProviderExhausted when every round ends up empty.
inline EvidenceRounds generate_evidence_rounds(std::string_view question, const Table& table,
                                               const SubTable& representative_rows, std::size_t n,
                                               LlmProvider& provider, const PromptSet& prompts = {}) {
  if (n < 1)
    throw error{errc::invalid_config, "evidence rounds must be at least 1"};
  auto prompt = fill(prompts.evidence, {{"header", header_line(table)},
                                        {"rows", rows_block(representative_rows)},
                                        {"question", question}});
  EvidenceRounds out;
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<std::vector<Evidence>> parsed;
    std::size_t attempts = 0;
    while (!parsed && attempts < 2) {
      ++attempts;
      try {
        parsed = parse_evidence_set(provider.complete(Role::evidence, prompt));
      } catch (const error&) {
        parsed.reset();
      }
    }
    if (!parsed)
      out.dropped.push_back(i);
    out.rounds.push_back(parsed.value_or(std::vector<Evidence>{}));
    out.attempts.push_back(attempts);
  }
  bool all_empty = std::all_of(out.rounds.begin(), out.rounds.end(), [](const auto& r) { return r.empty(); });
  if (all_empty)
    throw error{errc::provider_exhausted, "no evidence in any of " + std::to_string(n) + " rounds"};
  return out;
}

// -- grouping and consistency ----------------------------------------------

struct EvidenceInstance {
  std::size_t round = 0;
  std::size_t position = 0;
  Evidence evidence;
};

struct EvidenceGroup {
  EvidenceKey key;
  std::vector<EvidenceInstance> members;
};

/// Groups every evidence instance by (normalized area, action). Groups are
/// ordered by first appearance, members by (round, position).
inline std::vector<EvidenceGroup> group_evidence(const std::vector<std::vector<Evidence>>& rounds) {
  std::vector<EvidenceGroup> groups;
  for (std::size_t r = 0; r < rounds.size(); ++r) {
    for (std::size_t p = 0; p < rounds[r].size(); ++p) {
      const auto& e = rounds[r][p];
      auto key = key_of(e);
      auto it = std::find_if(groups.begin(), groups.end(), [&](const EvidenceGroup& g) { return g.key == key; });
      if (it == groups.end()) {
        groups.push_back(EvidenceGroup{key, {}});
        it = std::prev(groups.end());
      }
      it->members.push_back(EvidenceInstance{r, p, e});
    }
  }
  return groups;
}

struct ConsistencyEntry {
  EvidenceInstance instance;
  EvidenceKey key;
  std::size_t matches = 0;    // c
  std::size_t group_size = 0; // |G|
  double score = 0;           // S = c / (|G| - 1), 0 for singletons
  bool retained = false;      // S >= alpha
};

struct ConsistencyReport {
  std::vector<ConsistencyEntry> entries; // in (round, position) order
};

struct ConsistencyResult {
  std::vector<Evidence> candidates;
  ConsistencyReport report;
};

/// Keeps `candidate` unless an equivalent evidence (same key, equivalent
/// condition) is already in `kept`.
template <class Discriminate>
bool add_if_new(std::vector<Evidence>& kept, const Evidence& candidate, Discriminate& same) {
  auto key = key_of(candidate);
  for (const auto& k : kept)
    if (key_of(k) == key && same(k.condition, candidate.condition))
      return false;
  kept.push_back(candidate);
  return true;
}

/// Multi-round consistency. Within each (area, action) group an instance
/// scores the fraction of the group's other instances whose condition the
/// discriminator deems equivalent; it is retained when the score reaches
/// alpha. The discriminator is consulted once per unordered pair. Retained
/// instances are deduplicated, earliest round first.
template <class Discriminate>
ConsistencyResult consistency_assess(const std::vector<std::vector<Evidence>>& rounds, double alpha,
                                     Discriminate&& same) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw error{errc::invalid_config, "alpha must lie in [0, 1]"};
  ConsistencyResult out;
  struct Slot {
    std::size_t group, member;
  };
  std::vector<std::vector<std::vector<bool>>> verdicts;
  std::vector<Slot> slots;
  for (const auto& group : group_evidence(rounds)) {
    const auto n = group.members.size();
    auto& same_pair = verdicts.emplace_back(n, std::vector<bool>(n, false));
    std::vector<std::size_t> matches(n, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = i + 1; k < n; ++k)
        if (same(group.members[i].evidence.condition, group.members[k].evidence.condition)) {
          same_pair[i][k] = same_pair[k][i] = true;
          ++matches[i];
          ++matches[k];
        }
    for (std::size_t i = 0; i < n; ++i) {
      ConsistencyEntry entry{group.members[i], group.key, matches[i], n, 0.0, false};
      entry.score = n > 1 ? static_cast<double>(matches[i]) / static_cast<double>(n - 1) : 0.0;
      entry.retained = entry.score >= alpha;
      out.report.entries.push_back(std::move(entry));
      slots.push_back({verdicts.size() - 1, i});
    }
  }
  std::vector<std::size_t> order(slots.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto& entries = out.report.entries;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = entries[a].instance;
    const auto& y = entries[b].instance;
    return x.round != y.round ? x.round < y.round : x.position < y.position;
  });
  // Dedup reuses the pairwise verdicts; identical text always counts as a duplicate.
  std::vector<std::vector<std::size_t>> kept(verdicts.size()); // entry indices per group
  for (auto idx : order) {
    if (!entries[idx].retained)
      continue;
    auto [g, m] = slots[idx];
    bool dup = false;
    for (auto k : kept[g]) {
      if (verdicts[g][slots[k].member][m] ||
          entries[k].instance.evidence.condition == entries[idx].instance.evidence.condition) {
        dup = true;
        break;
      }
    }
    if (!dup) {
      kept[g].push_back(idx);
      out.candidates.push_back(entries[idx].instance.evidence);
    }
  }
  std::vector<ConsistencyEntry> sorted;
  sorted.reserve(entries.size());
  for (auto idx : order)
    sorted.push_back(entries[idx]);
  out.report.entries = std::move(sorted);
  return out;
}

// -- usability --------------------------------------------------------------

struct ReliableEvidenceSet {
  std::vector<Evidence> evidences;

  bool empty() const noexcept {
    return evidences.empty();
  }
  std::size_t size() const noexcept {
    return evidences.size();
  }
};

struct UsabilityResult {
  ReliableEvidenceSet reliable;
  std::vector<Evidence> unusable;
};

/// Candidates that ground to at least one row, in their original order.
inline UsabilityResult usability_filter(const std::vector<Evidence>& candidates, const Table& table) {
  UsabilityResult out;
  for (const auto& e : candidates) {
    if (check_usability(table, e))
      out.reliable.evidences.push_back(e);
    else
      out.unusable.push_back(e);
  }
  return out;
}

// -- orchestration ----------------------------------------------------------

struct EqdOutcome {
  EvidenceRounds rounds;
  ConsistencyReport report;
  std::vector<Evidence> candidates;
  ReliableEvidenceSet reliable;
  /// Generated evidences with no equivalent in E_r, for highlighting.
  std::vector<Evidence> discarded;
  bool exhausted = false;
  bool consistency_skipped = false;
};

/// Generated evidences that have no equivalent member in `reliable`,
/// deduplicated.
template <class Discriminate>
std::vector<Evidence> discarded_evidence(const EvidenceRounds& rounds, const ReliableEvidenceSet& reliable,
                                         Discriminate& same) {
  std::vector<Evidence> out;
  for (const auto& round : rounds.rounds) {
    for (const auto& e : round) {
      auto key = key_of(e);
      bool relevant = std::any_of(reliable.evidences.begin(), reliable.evidences.end(), [&](const Evidence& r) {
        return key_of(r) == key && same(r.condition, e.condition);
      });
      if (!relevant)
        add_if_new(out, e, same);
    }
  }
  return out;
}

/// Evidence generation, consistency assessment and usability filtering.
/// Provider exhaustion yields an empty E_r rather than an error.
inline EqdOutcome denoise_question(std::string_view question, const Table& table, const SubTable& representative_rows,
                                   const EqdConfig& cfg, LlmProvider& provider, Discriminator& same,
                                   const PromptSet& prompts = {}) {
  EqdOutcome out;
  try {
    out.rounds = generate_evidence_rounds(question, table, representative_rows, cfg.rounds, provider, prompts);
  } catch (const error& e) {
    if (e.code() != errc::provider_exhausted)
      throw;
    out.exhausted = true;
    out.rounds.rounds.assign(cfg.rounds, {});
    return out;
  }
  if (cfg.rounds == 1 || !cfg.consistency) {
    out.consistency_skipped = true;
    for (const auto& round : out.rounds.rounds)
      for (const auto& e : round)
        add_if_new(out.candidates, e, same);
  } else {
    auto assessed = consistency_assess(out.rounds.rounds, cfg.alpha, same);
    out.candidates = std::move(assessed.candidates);
    out.report = std::move(assessed.report);
  }
  if (cfg.usability)
    out.reliable = usability_filter(out.candidates, table).reliable;
  else
    out.reliable.evidences = out.candidates;
  out.discarded = discarded_evidence(out.rounds, out.reliable, same);
  return out;
}

} // namespace enotab
