#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "iun/corpus.hpp"
#include "iun/embeddings.hpp"

namespace iun::clustering {

inline constexpr int kNoise = -1;
inline constexpr std::size_t kKMeansMaxIterations = 300;
inline constexpr std::size_t kMinValidClusters = 20;
inline constexpr std::size_t kMaxValidClusters = 100;

/// One clustering outcome with its full experiment coordinates. `algorithm`
/// is "kmeans", "ward" or "external:<label>".
struct ClusterCase {
  corpus::CorpusSpec corpus;
  embeddings::EmbeddingSpec embedding;
  embeddings::ReductionSpec reduction;
  std::string algorithm;
  std::size_t target_k = 0;
  std::vector<int> labels;  // aligned to matrix rows, kNoise for noise
  std::size_t n_clusters = 0;
  std::optional<std::uint64_t> seed;

  /// Stable identifier built from the coordinates, safe for file names.
  std::string case_id() const;

  /// Checks label density, length and the no-noise rule for native algorithms.
  void validate(std::size_t rows) const;
};

struct ClusterMembership {
  int cluster_id = 0;
  std::vector<std::size_t> member_rows;  // ascending
  std::size_t size() const noexcept { return member_rows.size(); }
};

std::vector<ClusterMembership> memberships(const ClusterCase& c);

struct KMeansTrace {
  ClusterCase result;
  std::vector<double> centers;            // k x dim, row-major
  std::vector<double> inertia_history;    // after every assignment step
  std::size_t iterations = 0;
  bool converged = false;
};

/// Lloyd's algorithm with k-means++ seeding drawn from SplitMix64(seed),
/// n_init = 1, at most 300 iterations. Empty clusters are reseeded at the
/// point farthest from its assigned center. Returns exactly k non-empty
/// clusters. Throws KOutOfRange unless 1 <= k <= rows.
KMeansTrace kmeans_trace(const embeddings::EmbeddingMatrix& m, std::size_t k, std::uint64_t seed);
ClusterCase kmeans(const embeddings::EmbeddingMatrix& m, std::size_t k, std::uint64_t seed);

/// Agglomerative merge record. `a` < `b` are slot indices (the merged
/// cluster keeps slot `a`); `height` is the Ward distance sqrt(cost).
struct Merge {
  std::size_t a = 0;
  std::size_t b = 0;
  double cost = 0.0;
  double height = 0.0;
  std::size_t size = 0;
};

/// Complete Ward dendrogram over the matrix rows: n - 1 merges in order.
struct Dendrogram {
  std::size_t n = 0;
  std::vector<Merge> merges;
};

/// Ward linkage by Lance-Williams updates on the squared-Euclidean condensed
/// matrix, always merging the globally cheapest pair; ties go to the
/// lexicographically smallest (a, b) slot pair. Memory is O(n^2).
Dendrogram ward_linkage(const embeddings::EmbeddingMatrix& m);

/// Labels after applying the first n - k merges, renumbered by first row.
std::vector<int> cut_dendrogram(const Dendrogram& d, std::size_t k);

ClusterCase ward(const embeddings::EmbeddingMatrix& m, std::size_t k);
ClusterCase ward_from_dendrogram(const embeddings::EmbeddingMatrix& m, const Dendrogram& d, std::size_t k);

/// Reads an "id,label" CSV covering every matrix id once. Leading lines of
/// the form "# algorithm=<label>" name the producing algorithm; otherwise
/// `algorithm_label` is used. Non-noise labels are renumbered densely in
/// order of first appearance along the matrix rows.
ClusterCase load_assignments(const std::filesystem::path& path, const embeddings::EmbeddingMatrix& m,
                             const std::string& algorithm_label = "external");

void write_assignments(const ClusterCase& c, const std::vector<std::string>& ids, const std::filesystem::path& path);

/// Renumbers non-noise labels to 0..n-1 by first appearance; returns n.
std::size_t renumber_labels(std::vector<int>& labels);

struct Validity {
  bool valid = true;
  std::string reason;  // "too_few" / "too_many" when rejected

  static Validity ok() { return {true, {}}; }
  static Validity rejected(std::string why) { return {false, std::move(why)}; }
};

Validity validate_case(const ClusterCase& c, std::size_t min_clusters = kMinValidClusters,
                       std::size_t max_clusters = kMaxValidClusters);

/// JSON sidecar with every ClusterCase field except labels.
std::string case_manifest_json(const ClusterCase& c);

}  // namespace iun::clustering
