#pragma once

#include "enotab/error.hpp"
#include "enotab/provider.hpp"
#include "enotab/question_denoiser.hpp"
#include "enotab/retrieval.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

namespace enotab {

struct EtdConfig {
  bool and2or = true;
  bool verifier = true;
};

enum class ProviderKind { remote, scripted };
enum class EmbedderKind { hashing, remote };

struct Config {
  RetrievalConfig retrieval;
  EqdConfig eqd;
  EtdConfig etd;
  ProviderKind provider_kind = ProviderKind::remote;
  ProviderConfig provider;
  std::string fixture_path;
  bool fixture_strict = false;
  EmbedderKind embedder = EmbedderKind::hashing;
  std::size_t embed_dimension = 256;
  std::string prompts_dir;
  std::size_t parallelism = 1;
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> known) {
  if (!j.is_object())
    throw error{errc::invalid_config, "'" + section + "' must be an object"};
  std::set<std::string> names;
  for (const char* k : known)
    names.insert(k);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!names.count(it.key()))
      throw error{errc::invalid_config, "unknown key '" + (section.empty() ? "" : section + ".") + it.key() + "'"};
}

template <class T>
void read(const json& j, const char* key, T& slot, const std::string& section) {
  if (!j.contains(key))
    return;
  try {
    slot = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw error{errc::invalid_config, "'" + section + "." + key + "' has the wrong type"};
  }
}

inline void require(bool ok, const std::string& what) {
  if (!ok)
    throw error{errc::invalid_config, what};
}

} // namespace detail

/// Reads a configuration document. Absent keys keep their defaults; unknown
/// keys and out-of-range values are rejected.
inline Config config_from_json(const nlohmann::json& j) {
  using detail::read;
  Config cfg;
  detail::reject_unknown(j, "", {"retrieval", "eqd", "etd", "provider", "embedder", "prompts", "pipeline"});

  if (j.contains("retrieval")) {
    const auto& r = j["retrieval"];
    detail::reject_unknown(r, "retrieval", {"k", "lambda", "cap_max", "cap_frac", "minhash_signatures", "seed"});
    read(r, "k", cfg.retrieval.k, "retrieval");
    read(r, "lambda", cfg.retrieval.lambda, "retrieval");
    read(r, "cap_max", cfg.retrieval.cap_max, "retrieval");
    read(r, "cap_frac", cfg.retrieval.cap_frac, "retrieval");
    read(r, "minhash_signatures", cfg.retrieval.minhash_signatures, "retrieval");
    read(r, "seed", cfg.retrieval.seed, "retrieval");
  }
  detail::require(cfg.retrieval.k >= 1, "retrieval.k must be positive");
  detail::require(cfg.retrieval.lambda >= 0 && cfg.retrieval.lambda <= 1, "retrieval.lambda must lie in [0, 1]");
  detail::require(cfg.retrieval.cap_max >= 1, "retrieval.cap_max must be positive");
  detail::require(cfg.retrieval.cap_frac > 0 && cfg.retrieval.cap_frac <= 1, "retrieval.cap_frac must lie in (0, 1]");
  detail::require(cfg.retrieval.minhash_signatures >= 1, "retrieval.minhash_signatures must be positive");

  if (j.contains("eqd")) {
    const auto& e = j["eqd"];
    detail::reject_unknown(e, "eqd", {"rounds", "alpha", "discriminator", "consistency", "usability"});
    read(e, "rounds", cfg.eqd.rounds, "eqd");
    read(e, "alpha", cfg.eqd.alpha, "eqd");
    read(e, "consistency", cfg.eqd.consistency, "eqd");
    read(e, "usability", cfg.eqd.usability, "eqd");
    std::string mode = "rule_based";
    read(e, "discriminator", mode, "eqd");
    detail::require(mode == "rule_based" || mode == "model", "eqd.discriminator must be model or rule_based");
    cfg.eqd.discriminator = mode == "model" ? DiscriminatorMode::model : DiscriminatorMode::rule_based;
  }
  detail::require(cfg.eqd.rounds >= 1, "eqd.rounds must be at least 1");
  detail::require(cfg.eqd.alpha >= 0 && cfg.eqd.alpha <= 1, "eqd.alpha must lie in [0, 1]");

  if (j.contains("etd")) {
    const auto& e = j["etd"];
    detail::reject_unknown(e, "etd", {"and2or", "verifier"});
    read(e, "and2or", cfg.etd.and2or, "etd");
    read(e, "verifier", cfg.etd.verifier, "etd");
  }

  if (j.contains("provider")) {
    const auto& p = j["provider"];
    detail::reject_unknown(p, "provider", {"kind", "endpoint", "chat_path", "embed_path", "api_key_env", "max_retries",
                                           "timeout", "backoff_ms", "roles", "fixture", "strict"});
    std::string kind = "remote";
    read(p, "kind", kind, "provider");
    detail::require(kind == "remote" || kind == "scripted", "provider.kind must be remote or scripted");
    cfg.provider_kind = kind == "scripted" ? ProviderKind::scripted : ProviderKind::remote;
    read(p, "endpoint", cfg.provider.endpoint, "provider");
    read(p, "chat_path", cfg.provider.chat_path, "provider");
    read(p, "embed_path", cfg.provider.embed_path, "provider");
    read(p, "api_key_env", cfg.provider.api_key_env, "provider");
    read(p, "max_retries", cfg.provider.max_retries, "provider");
    read(p, "timeout", cfg.provider.timeout_seconds, "provider");
    read(p, "backoff_ms", cfg.provider.backoff_ms, "provider");
    read(p, "fixture", cfg.fixture_path, "provider");
    read(p, "strict", cfg.fixture_strict, "provider");
    if (p.contains("roles")) {
      const auto& roles = p["roles"];
      detail::require(roles.is_object(), "provider.roles must be an object");
      for (auto it = roles.begin(); it != roles.end(); ++it) {
        auto role = parse_role(it.key());
        detail::require(role.has_value(), "unknown role '" + it.key() + "'");
        auto section = "provider.roles." + it.key();
        detail::reject_unknown(*it, section, {"model", "temperature"});
        auto& slot = cfg.provider.roles[*role];
        read(*it, "model", slot.model, section);
        read(*it, "temperature", slot.temperature, section);
      }
    }
  }
  detail::require(cfg.provider.max_retries >= 0, "provider.max_retries must be non-negative");

  if (j.contains("embedder")) {
    const auto& e = j["embedder"];
    detail::reject_unknown(e, "embedder", {"kind", "dimension"});
    std::string kind = "hashing";
    read(e, "kind", kind, "embedder");
    detail::require(kind == "hashing" || kind == "remote", "embedder.kind must be hashing or remote");
    cfg.embedder = kind == "remote" ? EmbedderKind::remote : EmbedderKind::hashing;
    read(e, "dimension", cfg.embed_dimension, "embedder");
    detail::require(cfg.embed_dimension >= 1, "embedder.dimension must be positive");
  }

  if (j.contains("prompts")) {
    detail::reject_unknown(j["prompts"], "prompts", {"dir"});
    read(j["prompts"], "dir", cfg.prompts_dir, "prompts");
  }
  if (j.contains("pipeline")) {
    detail::reject_unknown(j["pipeline"], "pipeline", {"parallelism"});
    read(j["pipeline"], "parallelism", cfg.parallelism, "pipeline");
    detail::require(cfg.parallelism >= 1, "pipeline.parallelism must be positive");
  }
  return cfg;
}

/// Reads a configuration file. Relative fixture and prompt paths resolve
/// against the file's directory.
inline Config load_config(const std::string& path) {
  std::ifstream in{path};
  if (!in)
    throw error{errc::invalid_config, "cannot open " + path};
  Config cfg;
  try {
    cfg = config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw error{errc::invalid_config, path + ": " + e.what()};
  }
  auto base = std::filesystem::path{path}.parent_path();
  for (auto* p : {&cfg.fixture_path, &cfg.prompts_dir})
    if (!p->empty() && std::filesystem::path{*p}.is_relative())
      *p = (base / *p).string();
  return cfg;
}

} // namespace enotab
