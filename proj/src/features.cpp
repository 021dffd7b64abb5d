#include "iun/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iun/error.hpp"
#include "iun/util.hpp"

namespace iun::features {

double percentile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorCode::EmptyInput, "percentile of an empty list");
  if (!(p >= 0.0 && p <= 100.0)) {
    throw Error(ErrorCode::PercentileOutOfRange, "percentile level outside [0, 100]");
  }
  const double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const double frac = rank - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted[lo];
  const double v = sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
  // Rounding may not leave the bracketing interval; this keeps D_p monotone in p.
  return std::clamp(v, sorted[lo], sorted[lo + 1]);
}

double percentile(std::span<const double> values, double p) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return percentile_sorted(sorted, p);
}

ClusterGeometry centers(const embeddings::EmbeddingMatrix& m, const clustering::ClusterCase& c) {
  c.validate(m.rows());
  ClusterGeometry g;
  g.dim = m.cols();
  g.centers.assign(c.n_clusters * g.dim, 0.0);
  g.sizes.assign(c.n_clusters, 0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (c.labels[r] == clustering::kNoise) continue;
    const auto k = static_cast<std::size_t>(c.labels[r]);
    ++g.sizes[k];
    const auto row = m.row(r);
    for (std::size_t j = 0; j < g.dim; ++j) g.centers[k * g.dim + j] += row[j];
  }
  g.eligible.resize(c.n_clusters);
  for (std::size_t k = 0; k < c.n_clusters; ++k) {
    if (g.sizes[k] == 0) throw Error(ErrorCode::Internal, "cluster " + std::to_string(k) + " has no members");
    for (std::size_t j = 0; j < g.dim; ++j) g.centers[k * g.dim + j] /= static_cast<double>(g.sizes[k]);
    g.eligible[k] = g.sizes[k] >= kMinEligibleSize;
  }
  return g;
}

std::vector<double> distance_pool(const ClusterGeometry& g, std::size_t cluster_id) {
  if (g.n_clusters() < 2) {
    throw Error(ErrorCode::InsufficientClusters, "distance pools need at least 2 clusters");
  }
  if (cluster_id >= g.n_clusters()) throw Error(ErrorCode::InvalidArgument, "cluster id out of range");
  std::vector<double> pool;
  pool.reserve(g.n_clusters() - 1);
  const auto a = g.center(cluster_id);
  for (std::size_t other = 0; other < g.n_clusters(); ++other) {
    if (other == cluster_id) continue;
    const auto b = g.center(other);
    double acc = 0.0;
    for (std::size_t j = 0; j < g.dim; ++j) {
      const double d = a[j] - b[j];
      acc += d * d;
    }
    pool.push_back(std::sqrt(acc));
  }
  return pool;
}

double feature_d90_50(std::span<const double> pool) { return percentile(pool, 90) - percentile(pool, 50); }

std::string FeatureVariant::name() const {
  switch (kind) {
    case VariantKind::D90MinusP: return p == 50 ? "d90_50" : "d90_minus_p" + std::to_string(p);
    case VariantKind::Combo: return "combo_2d90_d50_d20";
    case VariantKind::AMinusD50: return "a_minus_d50";
    case VariantKind::D90: return "d90";
    case VariantKind::NegD50: return "neg_d50";
  }
  return {};
}

FeatureVariant FeatureVariant::parse(const std::string& name) {
  if (name == "d90_50") return {VariantKind::D90MinusP, 50};
  if (name == "combo_2d90_d50_d20" || name == "combo") return {VariantKind::Combo, 0};
  if (name == "a_minus_d50") return {VariantKind::AMinusD50, 0};
  if (name == "d90") return {VariantKind::D90, 0};
  if (name == "neg_d50") return {VariantKind::NegD50, 0};
  constexpr std::string_view kPrefix = "d90_minus_p";
  if (name.rfind(kPrefix, 0) == 0) {
    const std::string digits = name.substr(kPrefix.size());
    if (!digits.empty() && digits.size() <= 2 && std::all_of(digits.begin(), digits.end(), ::isdigit)) {
      const int p = std::stoi(digits);
      if (p >= 10 && p <= 65 && p % 5 == 0) return {VariantKind::D90MinusP, p};
    }
  }
  throw Error(ErrorCode::UnknownVariant, "unknown feature variant: " + name, name);
}

std::vector<FeatureVariant> sweep_variants() {
  std::vector<FeatureVariant> out;
  for (int p = 10; p <= 65; p += 5) out.push_back({VariantKind::D90MinusP, p});
  out.push_back({VariantKind::Combo, 0});
  out.push_back({VariantKind::AMinusD50, 0});
  return out;
}

double feature_variant(std::span<const double> pool, const FeatureVariant& variant) {
  if (pool.empty()) throw Error(ErrorCode::EmptyInput, "feature of an empty distance pool");
  std::vector<double> sorted(pool.begin(), pool.end());
  std::sort(sorted.begin(), sorted.end());
  const double d90 = percentile_sorted(sorted, 90);
  switch (variant.kind) {
    case VariantKind::D90MinusP:
      if (variant.p < 10 || variant.p > 65 || variant.p % 5 != 0) {
        throw Error(ErrorCode::UnknownVariant, "unsupported percentile for D90 - Dp: " + std::to_string(variant.p));
      }
      return d90 - percentile_sorted(sorted, variant.p);
    case VariantKind::Combo: return 2.0 * d90 - percentile_sorted(sorted, 50) - percentile_sorted(sorted, 20);
    case VariantKind::AMinusD50: {
      const double mean = std::accumulate(pool.begin(), pool.end(), 0.0) / static_cast<double>(pool.size());
      return mean - percentile_sorted(sorted, 50);
    }
    case VariantKind::D90: return d90;
    case VariantKind::NegD50: return -percentile_sorted(sorted, 50);
  }
  throw Error(ErrorCode::UnknownVariant, "unknown feature variant");
}

double FeatureRow::percentile_at(int p) const {
  for (std::size_t i = 0; i < kPercentileLevels.size(); ++i) {
    if (kPercentileLevels[i] == p) return d[i];
  }
  throw Error(ErrorCode::UnknownVariant, "percentile D" + std::to_string(p) + " is not tabulated");
}

double FeatureRow::value(const FeatureVariant& v) const {
  switch (v.kind) {
    case VariantKind::D90MinusP: return v.p == 50 ? d90_50 : percentile_at(90) - percentile_at(v.p);
    case VariantKind::Combo: return combo;
    case VariantKind::AMinusD50: return a_minus_d50;
    case VariantKind::D90: return percentile_at(90);
    case VariantKind::NegD50: return -percentile_at(50);
  }
  throw Error(ErrorCode::UnknownVariant, "unknown feature variant");
}

std::vector<FeatureRow> feature_table(const ClusterGeometry& g) {
  if (g.n_clusters() < 2) throw Error(ErrorCode::InsufficientClusters, "feature tables need at least 2 clusters");
  std::vector<FeatureRow> rows;
  for (std::size_t c = 0; c < g.n_clusters(); ++c) {
    if (!g.eligible[c]) continue;
    auto pool = distance_pool(g, c);
    FeatureRow row;
    row.cluster_id = static_cast<int>(c);
    row.size = g.sizes[c];
    row.avg_dist = std::accumulate(pool.begin(), pool.end(), 0.0) / static_cast<double>(pool.size());
    std::sort(pool.begin(), pool.end());
    for (std::size_t i = 0; i < kPercentileLevels.size(); ++i) row.d[i] = percentile_sorted(pool, kPercentileLevels[i]);
    const double d90 = row.percentile_at(90);
    const double d50 = row.percentile_at(50);
    row.d90_50 = d90 - d50;
    row.combo = 2.0 * d90 - d50 - row.percentile_at(20);
    row.a_minus_d50 = row.avg_dist - d50;
    rows.push_back(row);
  }
  return rows;
}

std::vector<FeatureRow> feature_table(const embeddings::EmbeddingMatrix& m, const clustering::ClusterCase& c) {
  return feature_table(centers(m, c));
}

std::string feature_table_csv(std::span<const FeatureRow> rows) {
  std::string out = "cluster_id,size";
  for (int p : kPercentileLevels) out += ",d" + std::to_string(p);
  out += ",avg_dist,d90_50,combo,a_minus_d50\n";
  for (const auto& r : rows) {
    out += std::to_string(r.cluster_id) + "," + std::to_string(r.size);
    for (double v : r.d) out += "," + format_fixed(v, 9);
    out += "," + format_fixed(r.avg_dist, 9) + "," + format_fixed(r.d90_50, 9) + "," + format_fixed(r.combo, 9) + "," +
           format_fixed(r.a_minus_d50, 9) + "\n";
  }
  return out;
}

}  // namespace iun::features
