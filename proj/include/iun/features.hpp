#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "iun/clustering.hpp"
#include "iun/embeddings.hpp"

namespace iun::features {

inline constexpr std::size_t kMinEligibleSize = 3;

/// Percentile levels carried by every feature row (the D90 - Dp sweep plus D90).
inline constexpr std::array<int, 13> kPercentileLevels = {10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60, 65, 90};

/// Centroids of the non-noise clusters of one case, in the matrix space.
struct ClusterGeometry {
  std::size_t dim = 0;
  std::vector<double> centers;  // n_clusters x dim
  std::vector<std::size_t> sizes;
  std::vector<bool> eligible;   // size >= 3

  std::size_t n_clusters() const noexcept { return sizes.size(); }
  std::span<const double> center(std::size_t c) const { return {centers.data() + c * dim, dim}; }
};

/// Linear interpolation between order statistics at rank (p/100)(n-1).
double percentile(std::span<const double> values, double p);

/// Same, for input already sorted ascending.
double percentile_sorted(std::span<const double> sorted, double p);

ClusterGeometry centers(const embeddings::EmbeddingMatrix& m, const clustering::ClusterCase& c);

/// Euclidean distances from one cluster's center to every other center,
/// ineligible clusters included. Throws InsufficientClusters below 2 clusters.
std::vector<double> distance_pool(const ClusterGeometry& g, std::size_t cluster_id);

double feature_d90_50(std::span<const double> pool);

enum class VariantKind {
  D90MinusP,   // D90 - Dp
  Combo,       // 2 D90 - D50 - D20
  AMinusD50,   // mean(pool) - D50
  D90,         // D90 alone
  NegD50,      // -D50 alone
};

struct FeatureVariant {
  VariantKind kind = VariantKind::D90MinusP;
  int p = 50;  // only for D90MinusP

  /// "d90_50", "d90_minus_p20", "combo_2d90_d50_d20", "a_minus_d50", "d90", "neg_d50".
  std::string name() const;
  static FeatureVariant parse(const std::string& name);

  bool operator==(const FeatureVariant&) const = default;
};

/// The D90 - Dp sweep, the combo and the average-anchored variant.
std::vector<FeatureVariant> sweep_variants();

double feature_variant(std::span<const double> pool, const FeatureVariant& variant);

struct FeatureRow {
  int cluster_id = 0;
  std::size_t size = 0;
  std::array<double, kPercentileLevels.size()> d{};  // aligned with kPercentileLevels
  double avg_dist = 0.0;
  double d90_50 = 0.0;
  double combo = 0.0;
  double a_minus_d50 = 0.0;

  double percentile_at(int p) const;
  double value(const FeatureVariant& v) const;
};

/// One row per eligible cluster, ordered by cluster id.
std::vector<FeatureRow> feature_table(const embeddings::EmbeddingMatrix& m, const clustering::ClusterCase& c);
std::vector<FeatureRow> feature_table(const ClusterGeometry& g);

std::string feature_table_csv(std::span<const FeatureRow> rows);

}  // namespace iun::features
