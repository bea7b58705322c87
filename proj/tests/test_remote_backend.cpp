#if defined(INTENTGUARD_HAVE_OPENSSL)
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif

#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "intentguard/backend.hpp"
#include "intentguard/errors.hpp"
#include "intentguard/remote_backend.hpp"

using namespace intentguard;

namespace {

/// Loopback chat-completion server for driving the client.
class LocalServer {
 public:
  LocalServer() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++requests_;
      if (n <= fail_first_) {
        res.status = 500;
        res.set_content("overloaded", "text/plain");
        return;
      }
      if (always_status_ != 200) {
        res.status = always_status_;
        res.set_content("nope", "text/plain");
        return;
      }
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      nlohmann::json reply = {
          {"choices", {{{"message", {{"role", "assistant"}, {"content", reply_text_}}}}}},
          {"usage", {{"completion_tokens", 7}}},
      };
      res.set_content(reply.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~LocalServer() {
    server_.stop();
    thread_.join();
  }

  RemoteConfig client_config() const {
    RemoteConfig config;
    config.base_url = "http://127.0.0.1:" + std::to_string(port_);
    config.model = "test-model";
    config.backoff_base_s = 0.01;
    config.id = "loopback";
    return config;
  }

  std::atomic<int> requests_{0};
  int fail_first_ = 0;
  int always_status_ = 200;
  std::string reply_text_ = "hello from server";
  std::string last_body_;
  std::string last_auth_;

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace

TEST_CASE("remote generate parses the reply") {
  LocalServer server;
  RemoteBackend backend(server.client_config());
  Completion c = generate(backend, ChatTranscript::make("sys", "hi"), GenParams());
  CHECK(c.text == "hello from server");
  CHECK(c.token_count == 7);
  CHECK(server.requests_ == 1);
  auto body = nlohmann::json::parse(server.last_body_);
  CHECK(body.at("model") == "test-model");
  CHECK(body.at("messages").size() == 2);
  CHECK(body.at("messages")[0].at("role") == "system");
}

TEST_CASE("5xx responses retry with bounded attempts") {
  LocalServer server;
  server.fail_first_ = 2;  // two failures, third succeeds
  RemoteBackend backend(server.client_config());
  Completion c = generate(backend, ChatTranscript::from_user("hi"), GenParams());
  CHECK(c.text == "hello from server");
  CHECK(server.requests_ == 3);
}

TEST_CASE("persistent 5xx exhausts retries") {
  LocalServer server;
  server.fail_first_ = 100;
  RemoteBackend backend(server.client_config());
  CHECK_THROWS_AS(generate(backend, ChatTranscript::from_user("hi"), GenParams()), TransportError);
  CHECK(server.requests_ == 3);  // max_attempts default
}

TEST_CASE("4xx is not retried") {
  LocalServer server;
  server.always_status_ = 404;
  RemoteBackend backend(server.client_config());
  CHECK_THROWS_AS(generate(backend, ChatTranscript::from_user("hi"), GenParams()), TransportError);
  CHECK(server.requests_ == 1);
}

TEST_CASE("content refusals are returned, never retried") {
  LocalServer server;
  server.reply_text_ = "I cannot help with that.";
  RemoteBackend backend(server.client_config());
  Completion c = generate(backend, ChatTranscript::from_user("do something bad"), GenParams());
  CHECK(c.text == "I cannot help with that.");
  CHECK(server.requests_ == 1);
}

TEST_CASE("prefill is rejected before any network call when unsupported") {
  LocalServer server;
  RemoteBackend backend(server.client_config());  // supports_prefill defaults to false
  GenParams params;
  params.prefill = "Sure, here";
  CHECK_THROWS_AS(generate(backend, ChatTranscript::from_user("hi"), params), CapabilityError);
  CHECK(server.requests_ == 0);
}

TEST_CASE("prefill-capable endpoints seed the assistant turn") {
  LocalServer server;
  server.reply_text_ = " are the steps";
  RemoteConfig config = server.client_config();
  config.supports_prefill = true;
  RemoteBackend backend(config);
  GenParams params;
  params.prefill = "Here";
  Completion c = generate(backend, ChatTranscript::from_user("list steps"), params);
  CHECK(c.text == "Here are the steps");
  auto body = nlohmann::json::parse(server.last_body_);
  CHECK(body.at("messages").back().at("role") == "assistant");
  CHECK(body.at("messages").back().at("content") == "Here");
}

TEST_CASE("api key env var is configurable") {
  LocalServer server;
  RemoteConfig config = server.client_config();
  config.api_key_env = "INTENTGUARD_TEST_KEY";
  setenv("INTENTGUARD_TEST_KEY", "sk-test", 1);
  RemoteBackend backend(config);
  generate(backend, ChatTranscript::from_user("hi"), GenParams());
  CHECK(server.last_auth_ == "Bearer sk-test");
  unsetenv("INTENTGUARD_TEST_KEY");
}

TEST_CASE("logprobs are not a remote capability") {
  LocalServer server;
  RemoteBackend backend(server.client_config());
  CHECK_THROWS_AS(token_logprobs(backend, ChatTranscript::from_user("q"), "x"), CapabilityError);
}
