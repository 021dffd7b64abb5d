#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>

#include "iun/http.hpp"
#include "stub_server.hpp"

using namespace iun::http;
using namespace std::chrono_literals;

TEST(Http, StatusClasses) {
  for (int s : {429, 500, 502, 503, 599}) EXPECT_TRUE(is_retryable_status(s)) << s;
  for (int s : {200, 400, 401, 403, 404, 422}) EXPECT_FALSE(is_retryable_status(s)) << s;
  EXPECT_TRUE(is_auth_status(401));
  EXPECT_TRUE(is_auth_status(403));
  EXPECT_FALSE(is_auth_status(429));
}

TEST(Http, ExponentialBackoffIsCapped) {
  RetryPolicy p;
  p.initial_backoff = 100ms;
  p.max_backoff = 1000ms;
  EXPECT_EQ(p.backoff_for(0), 100ms);
  EXPECT_EQ(p.backoff_for(1), 200ms);
  EXPECT_EQ(p.backoff_for(3), 800ms);
  EXPECT_EQ(p.backoff_for(4), 1000ms);
  EXPECT_EQ(p.backoff_for(40), 1000ms);
  std::chrono::milliseconds slept{0};
  p.sleep = [&](std::chrono::milliseconds d) { slept += d; };
  p.wait(2);
  EXPECT_EQ(slept, 400ms);
}

TEST(Http, RateLimiterSpacesRequests) {
  RateLimiter limiter(50.0, 1.0);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 6; ++i) limiter.acquire();
  // One token up front, then 5 more at 50/s: at least ~100 ms.
  EXPECT_GE(std::chrono::steady_clock::now() - start, 90ms);

  RateLimiter off(0.0, 1.0);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 1000; ++i) off.acquire();
  EXPECT_LT(std::chrono::steady_clock::now() - t0, 50ms);
}

TEST(Http, OptionsFromEnvironment) {
  ::setenv("IUN_API_BASE", "http://example.invalid/v1", 1);
  ::setenv("IUN_API_KEY", "k-123", 1);
  auto opts = options_from_env();
  EXPECT_EQ(opts.base_url, "http://example.invalid/v1");
  EXPECT_EQ(opts.bearer_token, "k-123");
  EXPECT_EQ(options_from_env("http://override:1").base_url, "http://override:1");
  ::unsetenv("IUN_API_BASE");
  ::unsetenv("IUN_API_KEY");
  EXPECT_TRUE(options_from_env().bearer_token.empty());
}

TEST(Http, ClientPostsJsonAndReportsStatus) {
  testing_support::StubServer server([](const testing_support::StubServer::Request& r) {
    return std::make_pair(r.path == "/api/ok" ? 200 : 418, std::string(R"({"echo":)") + r.body + "}");
  });
  ClientOptions opts;
  opts.base_url = server.base_url("/api/");
  auto client = make_client(opts);
  const auto ok = client->post_json("/ok", R"({"x":1})");
  EXPECT_EQ(ok.status, 200);
  EXPECT_EQ(ok.body, R"({"echo":{"x":1}})");
  EXPECT_EQ(client->post_json("teapot", "{}").status, 418);
  EXPECT_TRUE(server.requests()[0].authorization.empty());
}

TEST(Http, ConnectionFailureIsTransportError) {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  ClientOptions opts;
  opts.base_url = "http://127.0.0.1:" + std::to_string(port);
  opts.timeout = std::chrono::seconds(2);
  auto client = make_client(opts);
  EXPECT_THROW(client->post_json("/x", "{}"), TransportError);
}
