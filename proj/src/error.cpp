#include "iun/error.hpp"

namespace iun {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::FileMissing: return "FileMissing";
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::InvalidUtf8: return "InvalidUtf8";
    case ErrorCode::InvalidDocument: return "InvalidDocument";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::ShortCorpus: return "ShortCorpus";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::TrailingData: return "TrailingData";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::IdRowMismatch: return "IdRowMismatch";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::Io: return "Io";
    case ErrorCode::DimensionDrift: return "DimensionDrift";
    case ErrorCode::HttpStatus: return "HttpStatus";
    case ErrorCode::RetriesExhausted: return "RetriesExhausted";
    case ErrorCode::Auth: return "Auth";
    case ErrorCode::OutDimTooLarge: return "OutDimTooLarge";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::KOutOfRange: return "KOutOfRange";
    case ErrorCode::MissingId: return "MissingId";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::NonIntegerLabel: return "NonIntegerLabel";
    case ErrorCode::InsufficientClusters: return "InsufficientClusters";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::PercentileOutOfRange: return "PercentileOutOfRange";
    case ErrorCode::UnknownVariant: return "UnknownVariant";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::ConflictingScores: return "ConflictingScores";
    case ErrorCode::InvalidScore: return "InvalidScore";
    case ErrorCode::IntersectionTooSmall: return "IntersectionTooSmall";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::Undefined: return "Undefined";
    case ErrorCode::InsufficientOverlap: return "InsufficientOverlap";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::Config: return "Config";
    case ErrorCode::ConfigHashMismatch: return "ConfigHashMismatch";
    case ErrorCode::EmptyResults: return "EmptyResults";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

ShortCorpusError::ShortCorpusError(std::size_t requested, std::size_t available)
    : Error(ErrorCode::ShortCorpus,
            "corpus has " + std::to_string(available) + " documents, " +
                std::to_string(requested) + " requested"),
      requested_(requested),
      available_(available) {}

NonFiniteError::NonFiniteError(std::size_t row, std::size_t col)
    : Error(ErrorCode::NonFinite,
            "non-finite value at row " + std::to_string(row) + ", col " + std::to_string(col)),
      row_(row),
      col_(col) {}

RankDeficientError::RankDeficientError(std::size_t requested, std::size_t rank)
    : Error(ErrorCode::RankDeficient,
            "requested " + std::to_string(requested) + " components but data rank is " +
                std::to_string(rank)),
      rank_(rank) {}

MalformedLineError::MalformedLineError(ErrorCode code, std::size_t line, const std::string& what)
    : Error(code, "line " + std::to_string(line) + ": " + what, std::to_string(line)),
      line_(line) {}

}  // namespace iun
