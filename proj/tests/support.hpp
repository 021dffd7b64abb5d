#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "iun/embeddings.hpp"
#include "iun/error.hpp"
#include "iun/http.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "iun") {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// In-process Client answering from a handler; records every request.
class ScriptedClient : public iun::http::Client {
 public:
  using Handler = std::function<iun::http::Response(const std::string& path, const std::string& body)>;

  explicit ScriptedClient(Handler handler) : handler_(std::move(handler)) {}

  iun::http::Response post_json(const std::string& path, const std::string& body) override {
    {
      std::lock_guard lock(mutex_);
      paths_.push_back(path);
      bodies_.push_back(body);
    }
    return handler_(path, body);
  }

  std::size_t calls() const {
    std::lock_guard lock(mutex_);
    return bodies_.size();
  }
  std::vector<std::string> bodies() const {
    std::lock_guard lock(mutex_);
    return bodies_;
  }
  std::vector<std::string> paths() const {
    std::lock_guard lock(mutex_);
    return paths_;
  }

 private:
  Handler handler_;
  mutable std::mutex mutex_;
  std::vector<std::string> paths_;
  std::vector<std::string> bodies_;
};

inline iun::http::RetryPolicy no_sleep_retry(std::size_t attempts = 3) {
  iun::http::RetryPolicy p;
  p.max_attempts = attempts;
  p.sleep = [](std::chrono::milliseconds) {};
  return p;
}

inline iun::embeddings::EmbeddingMatrix make_matrix(const std::vector<double>& data, std::size_t dim,
                                                    const std::string& model = "test") {
  iun::embeddings::EmbeddingMatrix m;
  m.spec = {model, dim};
  for (std::size_t r = 0; r < data.size() / dim; ++r) m.ids.push_back("r" + std::to_string(r));
  m.data = data;
  return m;
}

template <class F>
iun::ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const iun::Error& e) {
    return e.code();
  }
  return iun::ErrorCode::Internal;
}

}  // namespace testing_support

#define EXPECT_IUN_ERROR(stmt, code_value) \
  EXPECT_EQ(::testing_support::error_code_of([&] { (void)(stmt); }), (code_value))
