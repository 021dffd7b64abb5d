#pragma once

#include <cstddef>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iun/corpus.hpp"
#include "iun/http.hpp"

namespace iun::embeddings {

struct EmbeddingSpec {
  std::string model;
  std::size_t dim = 0;

  bool operator==(const EmbeddingSpec&) const = default;
};

enum class ReductionMethod { None, Pca, ExternalUmap };

std::string to_string(ReductionMethod method);
ReductionMethod parse_reduction_method(const std::string& text);

/// Reduction provenance. `n_neighbors` and `min_dist` are recorded only for
/// external UMAP runs; `out_dim` is zero when no reduction was applied.
struct ReductionSpec {
  ReductionMethod method = ReductionMethod::None;
  std::size_t out_dim = 0;
  std::optional<int> n_neighbors;
  std::optional<double> min_dist;

  bool operator==(const ReductionSpec&) const = default;

  /// Short label used in reports, e.g. "none", "pca-d20", "d20-n10".
  std::string label() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ReductionSpec& r);
void from_json(const nlohmann::json& j, ReductionSpec& r);

/// Id-aligned dense matrix. Values are held in double precision; the EMB1
/// file stores them as binary32, so in-memory values only survive a
/// write/read cycle bit-exactly when they are representable as float.
struct EmbeddingMatrix {
  std::vector<std::string> ids;
  std::vector<double> data;  // row-major, ids.size() x spec.dim
  EmbeddingSpec spec;
  ReductionSpec reduction;

  std::size_t rows() const noexcept { return ids.size(); }
  std::size_t cols() const noexcept { return spec.dim; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * spec.dim, spec.dim}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * spec.dim, spec.dim}; }
  double at(std::size_t r, std::size_t c) const { return data[r * spec.dim + c]; }

  /// Throws on empty matrix, shape mismatch, non-finite entries or duplicate ids.
  void validate() const;

  /// Rows whose ids are listed, in that order. Throws MissingId otherwise.
  EmbeddingMatrix select(std::span<const std::string> wanted_ids) const;
};

/// EMB1 encoding (little-endian): "EMB1", u32 rows, u32 cols, u32 meta_len,
/// meta JSON {"ids","model","reduction"}, rows*cols binary32 values.
std::string encode_matrix(const EmbeddingMatrix& m);
EmbeddingMatrix decode_matrix(std::string_view bytes);

void write_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path);
EmbeddingMatrix read_matrix(const std::filesystem::path& path);

struct RemoteEmbedOptions {
  std::string model;
  std::string path = "/embeddings";
  std::size_t batch_size = 64;
  std::size_t max_in_flight = 1;
  http::RetryPolicy retry;
  /// JSONL of already-fetched rows; rows found here are not requested again.
  std::optional<std::filesystem::path> checkpoint;
};

struct RemoteEmbedStats {
  std::size_t requests = 0;  // successful batch requests issued in this call
  std::size_t retries = 0;
  std::size_t resumed_rows = 0;
};

/// Fetches one embedding per chunk from an embeddings endpoint, rows aligned
/// to chunk order. Retries 429/5xx/transport failures with exponential
/// backoff; 401/403 and other statuses are fatal.
EmbeddingMatrix embed_remote(std::span<const corpus::Chunk> chunks, const RemoteEmbedOptions& options,
                             http::Client& client, RemoteEmbedStats* stats = nullptr);

/// Principal axes of the row-centered data, leading `out_dim` components.
struct PcaModel {
  std::vector<double> mean;          // length dim
  std::vector<double> components;    // out_dim x dim, row-major, unit rows
  std::vector<double> eigenvalues;   // descending, all `dim` of them
  std::size_t dim = 0;
  std::size_t out_dim = 0;
};

/// Covariance uses the (rows - 1) normalization. Each component's entry of
/// largest magnitude is made positive. Throws OutDimTooLarge when out_dim
/// exceeds dim or rows, RankDeficientError when fewer than out_dim
/// eigenvalues are numerically nonzero.
PcaModel fit_pca(const EmbeddingMatrix& m, std::size_t out_dim);

EmbeddingMatrix reduce_pca(const EmbeddingMatrix& m, std::size_t out_dim);

}  // namespace iun::embeddings
