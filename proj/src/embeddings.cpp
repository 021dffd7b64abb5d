#include "iun/embeddings.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "iun/error.hpp"
#include "iun/util.hpp"

namespace iun::embeddings {

namespace {

using json = nlohmann::json;

constexpr std::string_view kMagic = "EMB1";
constexpr std::size_t kHeaderSize = 16;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

void to_json(json& j, const ReductionSpec& r) {
  j = {{"method", to_string(r.method)}};
  if (r.method != ReductionMethod::None) j["out_dim"] = r.out_dim;
  if (r.n_neighbors) j["n_neighbors"] = *r.n_neighbors;
  if (r.min_dist) j["min_dist"] = *r.min_dist;
}

void from_json(const json& j, ReductionSpec& r) {
  r = ReductionSpec{};
  r.method = parse_reduction_method(j.at("method").get<std::string>());
  if (j.contains("out_dim")) r.out_dim = j["out_dim"].get<std::size_t>();
  if (j.contains("n_neighbors")) r.n_neighbors = j["n_neighbors"].get<int>();
  if (j.contains("min_dist")) r.min_dist = j["min_dist"].get<double>();
}

std::string to_string(ReductionMethod method) {
  switch (method) {
    case ReductionMethod::None: return "none";
    case ReductionMethod::Pca: return "pca";
    case ReductionMethod::ExternalUmap: return "external-umap";
  }
  return "none";
}

ReductionMethod parse_reduction_method(const std::string& text) {
  if (text == "none") return ReductionMethod::None;
  if (text == "pca") return ReductionMethod::Pca;
  if (text == "external-umap" || text == "umap") return ReductionMethod::ExternalUmap;
  throw Error(ErrorCode::InvalidArgument, "unknown reduction method: " + text, text);
}

std::string ReductionSpec::label() const {
  switch (method) {
    case ReductionMethod::None: return "none";
    case ReductionMethod::Pca: return "pca-d" + std::to_string(out_dim);
    case ReductionMethod::ExternalUmap:
      return "d" + std::to_string(out_dim) + "-n" + std::to_string(n_neighbors.value_or(0));
  }
  return "none";
}

void ReductionSpec::validate() const {
  if (method != ReductionMethod::None && out_dim < 2) {
    throw Error(ErrorCode::InvalidArgument, "reduction out_dim must be >= 2");
  }
  const bool has_meta = n_neighbors.has_value() || min_dist.has_value();
  if (method == ReductionMethod::ExternalUmap && !(n_neighbors && min_dist)) {
    throw Error(ErrorCode::InvalidArgument, "external-umap reduction needs n_neighbors and min_dist");
  }
  if (method != ReductionMethod::ExternalUmap && has_meta) {
    throw Error(ErrorCode::InvalidArgument, "n_neighbors/min_dist only apply to external-umap");
  }
}

void EmbeddingMatrix::validate() const {
  if (ids.empty()) throw Error(ErrorCode::EmptyMatrix, "embedding matrix has no rows");
  if (data.size() != ids.size() * spec.dim) {
    throw Error(ErrorCode::IdRowMismatch, "matrix payload does not match ids x dim");
  }
  for (std::size_t r = 0; r < rows(); ++r) {
    for (std::size_t c = 0; c < cols(); ++c) {
      if (!std::isfinite(at(r, c))) throw NonFiniteError(r, c);
    }
  }
  std::unordered_set<std::string_view> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) throw Error(ErrorCode::DuplicateId, "duplicate matrix id " + id, id);
  }
}

EmbeddingMatrix EmbeddingMatrix::select(std::span<const std::string> wanted_ids) const {
  std::unordered_map<std::string_view, std::size_t> index;
  index.reserve(ids.size());
  for (std::size_t r = 0; r < ids.size(); ++r) index.emplace(ids[r], r);
  EmbeddingMatrix out;
  out.spec = spec;
  out.reduction = reduction;
  out.ids.assign(wanted_ids.begin(), wanted_ids.end());
  out.data.reserve(wanted_ids.size() * spec.dim);
  for (const auto& id : wanted_ids) {
    const auto it = index.find(id);
    if (it == index.end()) throw Error(ErrorCode::MissingId, "matrix has no row for id " + id, id);
    const auto r = row(it->second);
    out.data.insert(out.data.end(), r.begin(), r.end());
  }
  return out;
}

std::string encode_matrix(const EmbeddingMatrix& m) {
  m.validate();
  const json meta = {{"ids", m.ids}, {"model", m.spec.model}, {"reduction", json(m.reduction)}};
  const std::string meta_text = meta.dump();
  std::string out;
  out.reserve(kHeaderSize + meta_text.size() + 4 * m.data.size());
  out.append(kMagic);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  put_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  out.append(meta_text);
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    const float f = static_cast<float>(m.data[i]);
    if (!std::isfinite(f)) throw NonFiniteError(i / m.cols(), i % m.cols());
    put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

EmbeddingMatrix decode_matrix(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    throw Error(ErrorCode::BadMagic, "not an EMB1 file");
  }
  if (bytes.size() < kHeaderSize) throw Error(ErrorCode::Truncated, "EMB1 header truncated");
  const std::size_t rows = get_u32(bytes, 4);
  const std::size_t cols = get_u32(bytes, 8);
  const std::size_t meta_len = get_u32(bytes, 12);
  if (bytes.size() < kHeaderSize + meta_len) throw Error(ErrorCode::Truncated, "EMB1 metadata truncated");
  const std::size_t payload = rows * cols * 4;
  const std::size_t expected = kHeaderSize + meta_len + payload;
  if (bytes.size() < expected) {
    throw Error(ErrorCode::Truncated, "EMB1 payload truncated: expected " + std::to_string(expected) +
                                          " bytes, found " + std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) throw Error(ErrorCode::TrailingData, "EMB1 file has trailing bytes");
  if (rows == 0) throw Error(ErrorCode::EmptyMatrix, "EMB1 file has no rows");

  EmbeddingMatrix m;
  try {
    const json meta = json::parse(bytes.substr(kHeaderSize, meta_len));
    m.ids = meta.at("ids").get<std::vector<std::string>>();
    m.spec.model = meta.at("model").get<std::string>();
    m.reduction = meta.at("reduction").get<ReductionSpec>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("EMB1 metadata is invalid: ") + e.what());
  }
  if (m.ids.size() != rows) {
    throw Error(ErrorCode::IdRowMismatch,
                "EMB1 header has " + std::to_string(rows) + " rows but " + std::to_string(m.ids.size()) + " ids");
  }
  m.spec.dim = cols;
  m.data.resize(rows * cols);
  std::size_t pos = kHeaderSize + meta_len;
  for (std::size_t i = 0; i < m.data.size(); ++i, pos += 4) {
    const float f = std::bit_cast<float>(get_u32(bytes, pos));
    if (!std::isfinite(f)) throw NonFiniteError(i / cols, i % cols);
    m.data[i] = f;
  }
  m.validate();
  return m;
}

void write_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  write_text_file_atomic(path, encode_matrix(m));
}

EmbeddingMatrix read_matrix(const std::filesystem::path& path) { return decode_matrix(read_text_file(path)); }

// ---------------------------------------------------------------------------
// Remote embeddings

namespace {

struct Checkpoint {
  std::unordered_map<std::size_t, std::pair<std::string, std::vector<double>>> rows;
};

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Checkpoint cp;
  std::ifstream in(path);
  if (!in) return cp;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      cp.rows[j.at("index").get<std::size_t>()] = {j.at("sha256").get<std::string>(),
                                                    j.at("embedding").get<std::vector<double>>()};
    } catch (const json::exception&) {
      // A torn final line from an interrupted run; the row is fetched again.
    }
  }
  return cp;
}

std::vector<std::vector<double>> request_batch(const std::vector<const corpus::Chunk*>& batch,
                                               const RemoteEmbedOptions& options, http::Client& client,
                                               std::atomic<std::size_t>& retries) {
  json body = {{"model", options.model}, {"input", json::array()}};
  for (const auto* c : batch) body["input"].push_back(c->text);
  const std::string payload = body.dump();

  std::string last_failure;
  for (std::size_t attempt = 0; attempt < std::max<std::size_t>(1, options.retry.max_attempts); ++attempt) {
    if (attempt > 0) {
      ++retries;
      options.retry.wait(attempt - 1);
    }
    http::Response res;
    try {
      res = client.post_json(options.path, payload);
    } catch (const http::TransportError& e) {
      last_failure = e.what();
      continue;
    }
    if (http::is_auth_status(res.status)) {
      throw Error(ErrorCode::Auth, "embedding endpoint rejected credentials (HTTP " + std::to_string(res.status) + ")");
    }
    if (http::is_retryable_status(res.status)) {
      last_failure = "HTTP " + std::to_string(res.status);
      continue;
    }
    if (res.status < 200 || res.status >= 300) {
      throw Error(ErrorCode::HttpStatus, "embedding endpoint returned HTTP " + std::to_string(res.status),
                  std::to_string(res.status));
    }
    std::vector<std::vector<double>> rows(batch.size());
    std::vector<bool> filled(batch.size(), false);
    try {
      const json j = json::parse(res.body);
      for (const auto& item : j.at("data")) {
        const auto idx = item.at("index").get<std::size_t>();
        if (idx >= batch.size() || filled[idx]) {
          throw Error(ErrorCode::MalformedResponse, "embedding response index out of range or repeated");
        }
        rows[idx] = item.at("embedding").get<std::vector<double>>();
        filled[idx] = true;
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedResponse, std::string("embedding response: ") + e.what());
    }
    if (std::find(filled.begin(), filled.end(), false) != filled.end()) {
      throw Error(ErrorCode::MalformedResponse, "embedding response is missing rows");
    }
    return rows;
  }
  throw Error(ErrorCode::RetriesExhausted, "embedding request failed after retries: " + last_failure);
}

}  // namespace

EmbeddingMatrix embed_remote(std::span<const corpus::Chunk> chunks, const RemoteEmbedOptions& options,
                             http::Client& client, RemoteEmbedStats* stats) {
  if (options.batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (chunks.empty()) throw Error(ErrorCode::EmptyMatrix, "no chunks to embed");

  std::vector<std::vector<double>> rows(chunks.size());
  std::vector<std::size_t> missing;
  std::size_t resumed = 0;
  if (options.checkpoint) {
    auto cp = load_checkpoint(*options.checkpoint);
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      auto it = cp.rows.find(i);
      if (it != cp.rows.end() && it->second.first == chunks[i].sha256) {
        rows[i] = std::move(it->second.second);
        ++resumed;
      } else {
        missing.push_back(i);
      }
    }
  } else {
    for (std::size_t i = 0; i < chunks.size(); ++i) missing.push_back(i);
  }

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < missing.size(); b += options.batch_size) {
    batches.emplace_back(missing.begin() + static_cast<std::ptrdiff_t>(b),
                         missing.begin() + static_cast<std::ptrdiff_t>(std::min(missing.size(), b + options.batch_size)));
  }

  std::mutex mutex;
  std::optional<std::size_t> dim;
  for (const auto& r : rows) {
    if (!r.empty()) {
      dim = r.size();
      break;
    }
  }
  std::ofstream checkpoint_out;
  if (options.checkpoint) {
    if (options.checkpoint->has_parent_path()) std::filesystem::create_directories(options.checkpoint->parent_path());
    checkpoint_out.open(*options.checkpoint, std::ios::app);
  }
  std::atomic<std::size_t> requests{0};
  std::atomic<std::size_t> retries{0};

  parallel_for(batches.size(), std::max<std::size_t>(1, options.max_in_flight), [&](std::size_t b) {
    std::vector<const corpus::Chunk*> batch;
    for (auto i : batches[b]) batch.push_back(&chunks[i]);
    auto result = request_batch(batch, options, client, retries);
    ++requests;
    std::lock_guard lock(mutex);
    for (std::size_t k = 0; k < result.size(); ++k) {
      if (!dim) dim = result[k].size();
      if (result[k].size() != *dim) {
        throw Error(ErrorCode::DimensionDrift, "embedding dimension changed from " + std::to_string(*dim) + " to " +
                                                   std::to_string(result[k].size()));
      }
      const std::size_t i = batches[b][k];
      if (checkpoint_out) {
        checkpoint_out << json{{"index", i}, {"sha256", chunks[i].sha256}, {"embedding", result[k]}}.dump() << '\n';
      }
      rows[i] = std::move(result[k]);
    }
    if (checkpoint_out) checkpoint_out.flush();
  });

  if (stats) {
    stats->requests = requests;
    stats->retries = retries;
    stats->resumed_rows = resumed;
  }

  EmbeddingMatrix m;
  m.spec.model = options.model;
  m.spec.dim = dim.value_or(0);
  m.ids.reserve(chunks.size());
  m.data.reserve(chunks.size() * m.spec.dim);
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (rows[i].size() != m.spec.dim) {
      throw Error(ErrorCode::DimensionDrift, "embedding dimension changed between resumed and fetched rows");
    }
    m.ids.push_back(chunks[i].doc_id);
    m.data.insert(m.data.end(), rows[i].begin(), rows[i].end());
  }
  if (m.spec.dim < 2) throw Error(ErrorCode::MalformedResponse, "embedding dimension must be >= 2");
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// PCA

PcaModel fit_pca(const EmbeddingMatrix& m, std::size_t out_dim) {
  m.validate();
  const std::size_t n = m.rows();
  const std::size_t d = m.cols();
  if (out_dim < 1 || out_dim > d || out_dim > n) {
    throw Error(ErrorCode::OutDimTooLarge, "PCA out_dim " + std::to_string(out_dim) + " is not within [1, min(" +
                                                std::to_string(d) + ", " + std::to_string(n) + ")]");
  }

  PcaModel model;
  model.dim = d;
  model.out_dim = out_dim;
  model.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) model.mean[c] += m.at(r, c);
  }
  for (auto& v : model.mean) v /= static_cast<double>(n);

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  std::vector<double> centered(d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) centered[c] = m.at(r, c) - model.mean[c];
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) cov(a, b) += centered[a] * centered[b];
    }
  }
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) /= denom;
      cov(b, a) = cov(a, b);
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::Internal, "covariance eigendecomposition failed");
  // Eigen returns ascending eigenvalues.
  const auto& values = solver.eigenvalues();
  const auto& vectors = solver.eigenvectors();
  model.eigenvalues.resize(d);
  for (std::size_t i = 0; i < d; ++i) model.eigenvalues[i] = values(static_cast<Eigen::Index>(d - 1 - i));

  const double largest = std::max(0.0, model.eigenvalues.front());
  const double tol = largest * 1e-10;
  std::size_t rank = 0;
  for (double v : model.eigenvalues) {
    if (v > tol && largest > 0.0) ++rank;
  }
  if (rank < out_dim) throw RankDeficientError(out_dim, rank);

  model.components.resize(out_dim * d);
  for (std::size_t k = 0; k < out_dim; ++k) {
    const auto col = static_cast<Eigen::Index>(d - 1 - k);
    std::size_t arg = 0;
    for (std::size_t c = 1; c < d; ++c) {
      if (std::abs(vectors(static_cast<Eigen::Index>(c), col)) >
          std::abs(vectors(static_cast<Eigen::Index>(arg), col))) {
        arg = c;
      }
    }
    const double sign = vectors(static_cast<Eigen::Index>(arg), col) < 0.0 ? -1.0 : 1.0;
    for (std::size_t c = 0; c < d; ++c) {
      model.components[k * d + c] = sign * vectors(static_cast<Eigen::Index>(c), col);
    }
  }
  return model;
}

EmbeddingMatrix reduce_pca(const EmbeddingMatrix& m, std::size_t out_dim) {
  if (out_dim < 2) throw Error(ErrorCode::InvalidArgument, "PCA out_dim must be >= 2");
  const PcaModel model = fit_pca(m, out_dim);
  EmbeddingMatrix out;
  out.ids = m.ids;
  out.spec = EmbeddingSpec{m.spec.model, out_dim};
  out.reduction = ReductionSpec{ReductionMethod::Pca, out_dim, std::nullopt, std::nullopt};
  out.data.assign(m.rows() * out_dim, 0.0);
  const std::size_t d = m.cols();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t k = 0; k < out_dim; ++k) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += (m.at(r, c) - model.mean[c]) * model.components[k * d + c];
      out.data[r * out_dim + k] = acc;
    }
  }
  return out;
}

}  // namespace iun::embeddings
