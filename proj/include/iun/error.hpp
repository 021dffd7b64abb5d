#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace iun {

enum class ErrorCode {
  // corpus
  FileMissing,
  MalformedLine,
  InvalidUtf8,
  InvalidDocument,
  DuplicateId,
  ShortCorpus,
  // embeddings
  BadMagic,
  Truncated,
  TrailingData,
  NonFinite,
  IdRowMismatch,
  EmptyMatrix,
  Io,
  DimensionDrift,
  HttpStatus,
  RetriesExhausted,
  Auth,
  OutDimTooLarge,
  RankDeficient,
  // clustering
  KOutOfRange,
  MissingId,
  UnknownId,
  NonIntegerLabel,
  // features
  InsufficientClusters,
  EmptyInput,
  PercentileOutOfRange,
  UnknownVariant,
  // scoring
  MalformedResponse,
  ConflictingScores,
  InvalidScore,
  IntersectionTooSmall,
  // stats
  LengthMismatch,
  Undefined,
  InsufficientOverlap,
  InvalidRange,
  // runner
  Config,
  ConfigHashMismatch,
  EmptyResults,
  InvalidArgument,
  Internal,
};

std::string_view to_string(ErrorCode code);

/// Base exception for everything the library reports. `detail()` carries the
/// offending identifier or field path when there is one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {})
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

class ShortCorpusError : public Error {
 public:
  ShortCorpusError(std::size_t requested, std::size_t available);
  std::size_t requested() const noexcept { return requested_; }
  std::size_t available() const noexcept { return available_; }

 private:
  std::size_t requested_;
  std::size_t available_;
};

class NonFiniteError : public Error {
 public:
  NonFiniteError(std::size_t row, std::size_t col);
  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

class RankDeficientError : public Error {
 public:
  RankDeficientError(std::size_t requested, std::size_t rank);
  std::size_t rank() const noexcept { return rank_; }

 private:
  std::size_t rank_;
};

class MalformedLineError : public Error {
 public:
  MalformedLineError(ErrorCode code, std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace iun
