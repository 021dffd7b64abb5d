#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

namespace iun {

/// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

/// SplitMix64: 64-bit state, one add and a three-step xorshift-multiply
/// finalizer per draw. Sequence is fixed by the seed on every platform.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Standard normal via Box-Muller (no cached second value).
  double normal() noexcept;

 private:
  std::uint64_t state_;
};

std::string read_text_file(const std::filesystem::path& path);

/// Writes through a sibling temporary file and renames it into place.
void write_text_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Fixed "%.{precision}f" rendering; negative zero is printed as zero.
std::string format_fixed(double value, int precision = 6);

std::string_view trim(std::string_view s);

/// Runs fn(i) for i in [0, n) on at most `workers` threads. The first
/// exception thrown by any call is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace iun
