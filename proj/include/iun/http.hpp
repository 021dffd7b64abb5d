#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>

namespace iun::http {

struct Response {
  int status = 0;
  std::string body;
};

/// Connection-level failure (refused, reset, timeout). Always retryable.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Client {
 public:
  virtual ~Client() = default;
  /// POSTs a JSON body to `path` relative to the client's base URL.
  virtual Response post_json(const std::string& path, const std::string& body) = 0;
};

struct ClientOptions {
  std::string base_url;  // e.g. "http://127.0.0.1:8080/v1"
  std::string bearer_token;
  std::chrono::seconds timeout{60};
};

/// cpp-httplib backed client. Thread-safe: each call opens its own connection.
std::unique_ptr<Client> make_client(const ClientOptions& options);

/// Reads IUN_API_BASE / IUN_API_KEY, letting an explicit base URL win.
ClientOptions options_from_env(const std::string& base_url_override = {});

bool is_retryable_status(int status);
bool is_auth_status(int status);

using SleepFn = std::function<void(std::chrono::milliseconds)>;

struct RetryPolicy {
  std::size_t max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::milliseconds max_backoff{30000};
  SleepFn sleep;  // defaults to std::this_thread::sleep_for when empty

  std::chrono::milliseconds backoff_for(std::size_t retry_index) const;
  void wait(std::size_t retry_index) const;
};

/// Token bucket: `rate` tokens per second, bursts up to `burst`. A rate of
/// zero disables limiting.
class RateLimiter {
 public:
  RateLimiter(double rate_per_second, double burst);
  void acquire();

 private:
  using Clock = std::chrono::steady_clock;
  double rate_;
  double burst_;
  double tokens_;
  Clock::time_point last_;
  std::mutex mutex_;
};

}  // namespace iun::http
