#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "iun/http.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <thread>

#include "iun/error.hpp"

namespace iun::http {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "base URL needs a scheme: " + url, url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) out.prefix = url.substr(path_start);
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

class HttplibClient final : public Client {
 public:
  explicit HttplibClient(ClientOptions options) : options_(std::move(options)), url_(split_url(options_.base_url)) {}

  Response post_json(const std::string& path, const std::string& body) override {
    httplib::Client cli(url_.origin);
    cli.set_connection_timeout(options_.timeout);
    cli.set_read_timeout(options_.timeout);
    cli.set_write_timeout(options_.timeout);
    httplib::Headers headers;
    if (!options_.bearer_token.empty()) {
      headers.emplace("Authorization", "Bearer " + options_.bearer_token);
    }
    const std::string full = url_.prefix + (path.empty() || path.front() == '/' ? path : "/" + path);
    auto res = cli.Post(full, headers, body, "application/json");
    if (!res) throw TransportError("POST " + full + " failed: " + httplib::to_string(res.error()));
    return Response{res->status, res->body};
  }

 private:
  ClientOptions options_;
  SplitUrl url_;
};

}  // namespace

std::unique_ptr<Client> make_client(const ClientOptions& options) {
  return std::make_unique<HttplibClient>(options);
}

ClientOptions options_from_env(const std::string& base_url_override) {
  ClientOptions opts;
  if (!base_url_override.empty()) {
    opts.base_url = base_url_override;
  } else if (const char* base = std::getenv("IUN_API_BASE")) {
    opts.base_url = base;
  }
  if (const char* key = std::getenv("IUN_API_KEY")) opts.bearer_token = key;
  return opts;
}

bool is_retryable_status(int status) { return status == 429 || (status >= 500 && status <= 599); }

bool is_auth_status(int status) { return status == 401 || status == 403; }

std::chrono::milliseconds RetryPolicy::backoff_for(std::size_t retry_index) const {
  auto ms = initial_backoff.count();
  for (std::size_t i = 0; i < retry_index && ms < max_backoff.count(); ++i) ms *= 2;
  return std::chrono::milliseconds(std::min<long long>(ms, max_backoff.count()));
}

void RetryPolicy::wait(std::size_t retry_index) const {
  const auto delay = backoff_for(retry_index);
  if (sleep) {
    sleep(delay);
  } else {
    std::this_thread::sleep_for(delay);
  }
}

RateLimiter::RateLimiter(double rate_per_second, double burst)
    : rate_(rate_per_second), burst_(std::max(1.0, burst)), tokens_(std::max(1.0, burst)), last_(Clock::now()) {}

void RateLimiter::acquire() {
  if (rate_ <= 0.0) return;
  std::unique_lock lock(mutex_);
  for (;;) {
    const auto now = Clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(burst_, tokens_ + elapsed * rate_);
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
    lock.unlock();
    std::this_thread::sleep_for(wait);
    lock.lock();
  }
}

}  // namespace iun::http
