#include "enotab/remote.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <thread>

using namespace enotab;

namespace {

/// Local chat endpoint that fails a given number of times before answering.
class FlakyServer {
public:
  explicit FlakyServer(int failures, int failure_status = 503) : failures_{failures} {
    server_.Post("/v1/chat/completions", [this, failure_status](const httplib::Request& req, httplib::Response& res) {
      ++hits_;
      if (hits_ <= failures_) {
        res.status = failure_status;
        return;
      }
      auto body = nlohmann::json::parse(req.body);
      last_model_ = body["model"].get<std::string>();
      nlohmann::json reply{{"choices", {{{"message", {{"role", "assistant"}, {"content", "Answer: 2"}}}}}}};
      res.set_content(reply.dump(), "application/json");
    });
    server_.Post("/v1/embeddings", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"data": [{"embedding": [3.0, 4.0]}]})", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread{[this] { server_.listen_after_bind(); }};
    server_.wait_until_ready();
  }
  ~FlakyServer() {
    server_.stop();
    thread_.join();
  }

  ProviderConfig config(int retries) const {
    ProviderConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port_);
    cfg.max_retries = retries;
    cfg.backoff_ms = 1;
    cfg.timeout_seconds = 5;
    cfg.api_key_env = "";
    return cfg;
  }
  int hits() const {
    return hits_;
  }
  std::string last_model() const {
    return last_model_;
  }

private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  int failures_;
  std::atomic<int> hits_{0};
  std::string last_model_;
};

} // namespace

TEST(Remote, RetriesTransientFailures) {
  FlakyServer server{2};
  RemoteProvider provider{server.config(3)};
  EXPECT_EQ(provider.complete(Role::answer, "how many?"), "Answer: 2");
  EXPECT_EQ(server.hits(), 3);
  EXPECT_EQ(server.last_model(), "gpt-4o-mini");
}

TEST(Remote, GivesUpAfterRetryBudget) {
  FlakyServer server{5};
  RemoteProvider provider{server.config(1)};
  try {
    provider.complete(Role::answer, "q");
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::transport);
  }
  EXPECT_EQ(server.hits(), 2);
}

TEST(Remote, ClientErrorsAreNotRetried) {
  FlakyServer server{1, 400};
  RemoteProvider provider{server.config(3)};
  EXPECT_THROW(provider.complete(Role::answer, "q"), error);
  EXPECT_EQ(server.hits(), 1);
}

TEST(Remote, EmbeddingsAreNormalized) {
  FlakyServer server{0};
  RemoteEmbedder embedder{server.config(0)};
  auto v = embedder.embed("x");
  ASSERT_EQ(v.size(), 2u);
  EXPECT_NEAR(v[0], 0.6, 1e-12);
  EXPECT_NEAR(v[1], 0.8, 1e-12);
}

TEST(Remote, UnreachableEndpointIsEmbedderFailure) {
  ProviderConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1";
  cfg.max_retries = 0;
  cfg.timeout_seconds = 1;
  RemoteEmbedder embedder{cfg};
  try {
    embedder.embed("x");
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::embedder_failure);
  }
}
