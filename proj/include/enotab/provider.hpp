#pragma once

#include "enotab/error.hpp"
#include "enotab/prompts.hpp"
#include "enotab/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace enotab {

// -- roles and configuration -----------------------------------------------

enum class Role { evidence, tree, discriminator, verifier, keywords, answer, embed };

inline constexpr std::array<Role, 7> all_roles{Role::evidence, Role::tree,     Role::discriminator, Role::verifier,
                                               Role::keywords, Role::answer, Role::embed};

constexpr std::string_view to_string(Role r) {
  switch (r) {
    case Role::evidence: return "evidence";
    case Role::tree: return "tree";
    case Role::discriminator: return "discriminator";
    case Role::verifier: return "verifier";
    case Role::keywords: return "keywords";
    case Role::answer: return "answer";
    case Role::embed: return "embed";
  }
  return "";
}

inline std::optional<Role> parse_role(std::string_view s) {
  for (auto r : all_roles)
    if (s == to_string(r))
      return r;
  return std::nullopt;
}

struct RoleSettings {
  std::string model;
  double temperature = 0.0;
};

struct ProviderConfig {
  std::string endpoint = "https://api.openai.com";
  std::string chat_path = "/v1/chat/completions";
  std::string embed_path = "/v1/embeddings";
  std::string api_key_env = "OPENAI_API_KEY";
  int max_retries = 3;
  double timeout_seconds = 60;
  int backoff_ms = 500;
  std::map<Role, RoleSettings> roles = default_roles();

  static std::map<Role, RoleSettings> default_roles() {
    std::map<Role, RoleSettings> out;
    for (auto r : all_roles)
      out[r] = RoleSettings{"gpt-4o-mini", 0.0};
    out[Role::evidence].temperature = 0.7; // rounds need diversity
    out[Role::embed].model = "bge-large-en-v1.5";
    return out;
  }

  const RoleSettings& role(Role r) const {
    auto it = roles.find(r);
    if (it == roles.end())
      throw error{errc::invalid_config, "no model configured for role " + std::string{to_string(r)}};
    return it->second;
  }
};

// -- provider interface -----------------------------------------------------

/// Text-in, text-out access to every model role. Implementations must
/// accept concurrent calls. The base class keeps per-role call counts.
class LlmProvider {
public:
  virtual ~LlmProvider() = default;

  std::string complete(Role role, const std::string& prompt) {
    {
      std::lock_guard lock{count_mutex_};
      ++calls_[role];
    }
    return do_complete(role, prompt);
  }

  std::size_t calls(Role role) const {
    std::lock_guard lock{count_mutex_};
    auto it = calls_.find(role);
    return it == calls_.end() ? 0 : it->second;
  }

  std::map<Role, std::size_t> call_counts() const {
    std::lock_guard lock{count_mutex_};
    return calls_;
  }

protected:
  virtual std::string do_complete(Role role, const std::string& prompt) = 0;

private:
  mutable std::mutex count_mutex_;
  std::map<Role, std::size_t> calls_;
};

/// Unit-length text embeddings.
class Embedder {
public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(std::string_view text) = 0;
};

inline void normalize_l2(std::vector<double>& v) {
  double norm = 0;
  for (double x : v)
    norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0) {
    if (!v.empty())
      v[0] = 1.0;
    return;
  }
  for (double& x : v)
    x /= norm;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    throw error{errc::embedder_failure, "embedding dimensions differ"};
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0)
    return 0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

/// Feature-hashed bag of lowercased words with signed buckets. Offline and
/// deterministic.
class HashingEmbedder final : public Embedder {
public:
  explicit HashingEmbedder(std::size_t dimension = 256) : dimension_{dimension} {
  }

  std::vector<double> embed(std::string_view s) override {
    std::vector<double> v(dimension_, 0.0);
    for (const auto& tok : text::word_tokens(s)) {
      auto h = text::fnv1a64(tok);
      v[h % dimension_] += (h >> 63) ? -1.0 : 1.0;
    }
    normalize_l2(v);
    return v;
  }

private:
  std::size_t dimension_;
};

// -- fixtures and scripted replay ------------------------------------------

/// Fixture key for a prompt: FNV-1a-64 of the exact prompt bytes, in hex.
inline std::string request_digest(std::string_view prompt) {
  return text::to_hex(text::fnv1a64(prompt));
}

/// One canned response. `digest` is a request digest or `*` (any prompt of
/// the role); when `contains` is set the entry matches prompts containing
/// that text. Entries sharing a selector form a queue replayed in order,
/// the last response repeating once the queue is drained.
struct FixtureEntry {
  Role role = Role::answer;
  std::string digest;
  std::optional<std::string> contains;
  std::string response;
};

struct Fixture {
  std::vector<FixtureEntry> entries;
  bool strict = false;

  static Fixture parse(std::string_view jsonl) {
    Fixture f;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < jsonl.size()) {
      auto nl = jsonl.find('\n', pos);
      auto line = text::trim(jsonl.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
      pos = nl == std::string_view::npos ? jsonl.size() : nl + 1;
      ++line_no;
      if (line.empty())
        continue;
      auto where = "fixture line " + std::to_string(line_no);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw error{errc::malformed_input, where + ": " + e.what()};
      }
      if (!j.is_object() || !j.contains("role") || !j.contains("response") || !j["response"].is_string())
        throw error{errc::malformed_input, where + ": needs role and response"};
      auto role = parse_role(j["role"].get<std::string>());
      if (!role)
        throw error{errc::malformed_input, where + ": unknown role"};
      FixtureEntry e;
      e.role = *role;
      e.digest = j.value("digest", std::string{"*"});
      if (j.contains("contains"))
        e.contains = j["contains"].get<std::string>();
      e.response = j["response"].get<std::string>();
      f.entries.push_back(std::move(e));
    }
    return f;
  }

  static Fixture load(const std::string& path) {
    std::ifstream in{path, std::ios::binary};
    if (!in)
      throw error{errc::malformed_input, "cannot open fixture " + path};
    std::string data{std::istreambuf_iterator<char>{in}, std::istreambuf_iterator<char>{}};
    return parse(data);
  }

  static std::string to_line(Role role, std::string_view digest, std::string_view response) {
    nlohmann::ordered_json j;
    j["role"] = std::string{to_string(role)};
    j["digest"] = std::string{digest};
    j["response"] = std::string{response};
    return j.dump();
  }
};

/// Replays fixture responses verbatim. In non-strict mode a miss yields the
/// role default: empty evidence set, unparsable tree (fallback tree), empty
/// discriminator verdict (rule-based equality), verifier True, empty keyword
/// list, and an answer that echoes the prompt.
class ScriptedProvider final : public LlmProvider {
public:
  explicit ScriptedProvider(Fixture fixture) : strict_{fixture.strict} {
    for (auto& e : fixture.entries) {
      auto it = std::find_if(queues_.begin(), queues_.end(), [&](const Queue& q) {
        return q.role == e.role && q.digest == e.digest && q.contains == e.contains;
      });
      if (it == queues_.end()) {
        queues_.push_back(Queue{e.role, e.digest, e.contains, {}, 0});
        it = std::prev(queues_.end());
      }
      it->responses.push_back(std::move(e.response));
    }
  }

  static std::string default_response(Role role, const std::string& prompt) {
    switch (role) {
      case Role::evidence: return "[]";
      case Role::verifier: return "True";
      case Role::answer: return prompt;
      default: return "";
    }
  }

protected:
  std::string do_complete(Role role, const std::string& prompt) override {
    std::lock_guard lock{mutex_};
    auto digest = request_digest(prompt);
    Queue* hit = nullptr;
    for (auto& q : queues_)
      if (q.role == role && !q.contains && q.digest == digest) {
        hit = &q;
        break;
      }
    if (!hit)
      for (auto& q : queues_)
        if (q.role == role && q.contains && (q.digest == "*" || q.digest == digest) &&
            prompt.find(*q.contains) != std::string::npos) {
          hit = &q;
          break;
        }
    if (!hit)
      for (auto& q : queues_)
        if (q.role == role && !q.contains && q.digest == "*") {
          hit = &q;
          break;
        }
    if (!hit) {
      if (strict_)
        throw error{errc::fixture_miss, std::string{to_string(role)} + " request " + digest};
      return default_response(role, prompt);
    }
    auto i = std::min(hit->cursor, hit->responses.size() - 1);
    ++hit->cursor;
    return hit->responses[i];
  }

private:
  struct Queue {
    Role role;
    std::string digest;
    std::optional<std::string> contains;
    std::vector<std::string> responses;
    std::size_t cursor;
  };

  bool strict_;
  std::mutex mutex_;
  std::vector<Queue> queues_;
};

/// Forwards to another provider and appends every exchange as a fixture
/// line, so a live run can be replayed offline.
class RecordingProvider final : public LlmProvider {
public:
  RecordingProvider(LlmProvider& inner, std::ostream& sink) : inner_{inner}, sink_{sink} {
  }

protected:
  std::string do_complete(Role role, const std::string& prompt) override {
    auto response = inner_.complete(role, prompt);
    std::lock_guard lock{mutex_};
    sink_ << Fixture::to_line(role, request_digest(prompt), response) << '\n';
    return response;
  }

private:
  LlmProvider& inner_;
  std::ostream& sink_;
  std::mutex mutex_;
};

// -- reply parsing ----------------------------------------------------------

namespace detail {

inline std::optional<std::size_t> matching_bracket(std::string_view s, std::size_t open) {
  char o = s[open];
  char c = o == '{' ? '}' : ']';
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    char ch = s[i];
    if (in_string) {
      if (ch == '\\')
        ++i;
      else if (ch == '"')
        in_string = false;
      continue;
    }
    if (ch == '"')
      in_string = true;
    else if (ch == o)
      ++depth;
    else if (ch == c && --depth == 0)
      return i;
  }
  return std::nullopt;
}

inline std::optional<nlohmann::ordered_json> try_parse(std::string_view s) {
  try {
    return nlohmann::ordered_json::parse(s);
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

} // namespace detail

/// First well-formed JSON value in a model reply. Fenced blocks are tried
/// first, in order; otherwise the first balanced `{...}` or `[...]` that
/// parses. Surrounding prose is ignored.
inline std::optional<nlohmann::ordered_json> extract_json_block(std::string_view reply) {
  std::size_t pos = 0;
  while ((pos = reply.find("```", pos)) != std::string_view::npos) {
    auto body_start = reply.find('\n', pos + 3);
    if (body_start == std::string_view::npos)
      break;
    auto close = reply.find("```", body_start);
    if (close == std::string_view::npos)
      break;
    if (auto j = detail::try_parse(reply.substr(body_start + 1, close - body_start - 1)))
      return j;
    pos = close + 3;
  }
  for (std::size_t i = 0; i < reply.size(); ++i) {
    if (reply[i] != '{' && reply[i] != '[')
      continue;
    auto end = detail::matching_bracket(reply, i);
    if (!end)
      continue;
    if (auto j = detail::try_parse(reply.substr(i, *end - i + 1)))
      return j;
  }
  return std::nullopt;
}

/// `True`/`False` (case-insensitive, optional trailing period). With
/// `lenient`, also yes/no.
inline std::optional<bool> parse_bool_reply(std::string_view reply, bool lenient = false) {
  auto s = text::casefold(text::strip_enclosing_quotes(reply));
  while (!s.empty() && (s.back() == '.' || s.back() == '!'))
    s.pop_back();
  s = std::string{text::trim(s)};
  if (s == "true" || (lenient && s == "yes"))
    return true;
  if (s == "false" || (lenient && s == "no"))
    return false;
  return std::nullopt;
}

// -- discriminator and verifier ---------------------------------------------

/// Canonical form for the rule-based equivalence test: case-folded,
/// whitespace-collapsed, with leading `in` / `==` / `is` removed.
inline std::string rule_normal_form(std::string_view condition) {
  std::string s = text::normalize(text::strip_enclosing_quotes(condition));
  for (bool changed = true; changed;) {
    changed = false;
    for (std::string_view op : {"==", "in ", "is ", "="}) {
      if (s.size() > op.size() && s.compare(0, op.size(), op) == 0) {
        s = text::normalize(text::strip_enclosing_quotes(std::string_view{s}.substr(op.size())));
        changed = true;
      }
    }
  }
  return s;
}

inline bool rule_equivalent(std::string_view a, std::string_view b) {
  return rule_normal_form(a) == rule_normal_form(b);
}

enum class DiscriminatorMode { rule_based, model };

/// Semantic equivalence of two conditions. Symmetric (pairs are
/// canonicalized before lookup), reflexive without a model call, and cached
/// per unordered pair. One instance serves one question.
class Discriminator {
public:
  Discriminator() = default;

  Discriminator(DiscriminatorMode mode, LlmProvider* provider, std::string prompt_template = std::string{prompt_text::discriminator})
    : mode_{mode}, provider_{provider}, template_{std::move(prompt_template)} {
  }

  bool operator()(const std::string& a, const std::string& b) {
    if (a == b)
      return true;
    auto key = a < b ? std::pair{a, b} : std::pair{b, a};
    if (auto it = cache_.find(key); it != cache_.end())
      return it->second;
    bool verdict = decide(key.first, key.second);
    cache_.emplace(std::move(key), verdict);
    return verdict;
  }

  std::size_t model_calls() const noexcept {
    return model_calls_;
  }
  std::size_t fallbacks() const noexcept {
    return fallbacks_;
  }

private:
  bool decide(const std::string& a, const std::string& b) {
    if (mode_ == DiscriminatorMode::rule_based || provider_ == nullptr)
      return rule_equivalent(a, b);
    ++model_calls_;
    try {
      auto reply = provider_->complete(Role::discriminator, fill(template_, {{"condition_a", a}, {"condition_b", b}}));
      if (auto v = parse_bool_reply(reply, true))
        return *v;
    } catch (const error&) {
    }
    ++fallbacks_;
    return rule_equivalent(a, b);
  }

  DiscriminatorMode mode_ = DiscriminatorMode::rule_based;
  LlmProvider* provider_ = nullptr;
  std::string template_{prompt_text::discriminator};
  std::map<std::pair<std::string, std::string>, bool> cache_;
  std::size_t model_calls_ = 0;
  std::size_t fallbacks_ = 0;
};

/// Asks the verifier whether `table_rendering` suffices for the question.
/// Replies that are not a clean True/False count as True. Transport
/// failures surface as VerifierUnavailable.
inline bool verify_table(LlmProvider& provider, std::string_view table_rendering, std::string_view question,
                         std::string_view prompt_template = prompt_text::verifier) {
  std::string reply;
  try {
    reply = provider.complete(Role::verifier, fill(prompt_template, {{"table", table_rendering}, {"question", question}}));
  } catch (const error& e) {
    throw error{errc::verifier_unavailable, e.what()};
  }
  return parse_bool_reply(reply).value_or(true);
}

} // namespace enotab
