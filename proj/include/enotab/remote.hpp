#pragma once

// Chat-completion and embedding clients over HTTP(S). Define
// CPPHTTPLIB_OPENSSL_SUPPORT (and link OpenSSL) for https endpoints.

#include "enotab/error.hpp"
#include "enotab/provider.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>

namespace enotab {

namespace detail {

class HttpJsonClient {
public:
  explicit HttpJsonClient(ProviderConfig cfg) : cfg_{std::move(cfg)} {
  }

  /// POSTs `body` to `path`, retrying connection failures, 429 and 5xx with
  /// exponential backoff. Other statuses fail at once.
  nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
    httplib::Client client{cfg_.endpoint};
    auto secs = static_cast<time_t>(cfg_.timeout_seconds);
    auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!cfg_.api_key_env.empty())
      if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
        headers.emplace("Authorization", std::string{"Bearer "} + key);

    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds{static_cast<long>(cfg_.backoff_ms) << (attempt - 1)});
      auto res = client.Post(path, headers, body.dump(), "application/json");
      if (!res) {
        last_error = "request failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status < 200 || res->status >= 300)
        throw error{errc::transport, "HTTP " + std::to_string(res->status) + ": " + res->body};
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw error{errc::transport, std::string{"response is not JSON: "} + e.what()};
      }
    }
    throw error{errc::transport, last_error + " after " + std::to_string(cfg_.max_retries + 1) + " attempts"};
  }

  const ProviderConfig& config() const noexcept {
    return cfg_;
  }

private:
  ProviderConfig cfg_;
};

} // namespace detail

class RemoteProvider final : public LlmProvider {
public:
  explicit RemoteProvider(ProviderConfig cfg) : client_{std::move(cfg)} {
  }

protected:
  std::string do_complete(Role role, const std::string& prompt) override {
    const auto& settings = client_.config().role(role);
    nlohmann::json body{
      {"model", settings.model},
      {"temperature", settings.temperature},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
    };
    auto reply = client_.post(client_.config().chat_path, body);
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw error{errc::transport, std::string{"unexpected completion shape: "} + e.what()};
    }
  }

private:
  detail::HttpJsonClient client_;
};

class RemoteEmbedder final : public Embedder {
public:
  explicit RemoteEmbedder(ProviderConfig cfg) : client_{std::move(cfg)} {
  }

  std::vector<double> embed(std::string_view s) override {
    nlohmann::json body{{"model", client_.config().role(Role::embed).model}, {"input", std::string{s}}};
    std::vector<double> v;
    try {
      v = client_.post(client_.config().embed_path, body).at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const error& e) {
      throw error{errc::embedder_failure, e.what()};
    } catch (const nlohmann::json::exception& e) {
      throw error{errc::embedder_failure, std::string{"unexpected embedding shape: "} + e.what()};
    }
    if (v.empty())
      throw error{errc::embedder_failure, "empty embedding"};
    normalize_l2(v);
    return v;
  }

private:
  detail::HttpJsonClient client_;
};

} // namespace enotab
