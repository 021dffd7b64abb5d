#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "iun/features.hpp"

namespace iun::scoring {
struct ClusterScore;
}

namespace iun::stats {

/// Kendall tau-b in O(n log n) (Knight's merge-sort counting).
/// Throws LengthMismatch, InvalidArgument for n < 2, Undefined when either
/// vector is entirely tied.
double kendall_tau_b(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of average ranks.
double spearman(std::span<const double> x, std::span<const double> y);

/// 1-based average ranks (ties share the mean rank). Ascending unless
/// `descending` is set, in which case the largest value gets rank 1.
std::vector<double> average_ranks(std::span<const double> values, bool descending = false);

/// Where a clustering case sits in the experiment grid; carried through
/// correlation results so aggregates can split on any coordinate.
struct CaseCoordinates {
  std::string case_id;
  std::string dataset;
  std::size_t data_size = 0;
  std::string embedding;
  std::string reduction;
  std::string algorithm;
  std::size_t target_k = 0;
  std::size_t n_clusters = 0;
};

struct CorrelationResult {
  CaseCoordinates coords;
  std::string feature;
  std::string scorer;
  double tau_b = 0.0;
  double spearman = 0.0;
  std::size_t n = 0;
};

/// A case whose correlation is undefined (for example constant scores).
struct SkippedCorrelation {
  CaseCoordinates coords;
  std::string feature;
  std::string scorer;
  std::string reason;
};

using CorrelationOutcome = std::variant<CorrelationResult, SkippedCorrelation>;

inline constexpr std::size_t kMinCorrelationPairs = 3;

/// Joins eligible feature rows and cluster scores on cluster id and
/// correlates the feature with the mean score. Throws InsufficientOverlap
/// below 3 joined clusters.
CorrelationOutcome correlate_case(std::span<const features::FeatureRow> features,
                                  std::span<const scoring::ClusterScore> scores,
                                  const features::FeatureVariant& feature, const std::string& scorer,
                                  const CaseCoordinates& coords = {});

enum class Split { Dataset, DataSize, Algorithm, NClusters, Reduction, Embedding, All };

std::string to_string(Split split);

/// "<50", "50-70" (inclusive) or ">70".
std::string n_clusters_bucket(std::size_t n_clusters);

enum class Metric { TauB, Spearman };

struct AggregateRow {
  std::string split;
  std::string group;
  double avg = 0.0;
  double stdev = 0.0;  // population
  double f_pos = 0.0;  // fraction of values > 0
  std::size_t n_cases = 0;
};

/// Groups results by `split`. Group order: fixed bucket order for NClusters,
/// ascending for DataSize, first appearance otherwise.
std::vector<AggregateRow> aggregate(std::span<const CorrelationResult> results, Split split,
                                    Metric metric = Metric::TauB);

/// Mean, population standard deviation and fraction of positive values.
AggregateRow summarize(std::span<const double> values);

struct Histogram {
  double low = 0.0;
  double high = 0.0;
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
  std::size_t underflow = 0;
  std::size_t overflow = 0;
};

/// Equal-width bins over [low, high]. A value on an interior edge goes to
/// the upper bin; `high` itself goes to the last bin; values outside the
/// range are tallied in underflow/overflow.
Histogram histogram(std::span<const double> values, std::size_t bins, double low, double high);

std::string histogram_csv(const Histogram& h);

struct GapSummary {
  double median = 0.0;
  double avg = 0.0;
  double p97_5 = 0.0;
};

struct GapCurve {
  std::vector<double> gaps;        // ascending, in [0, 100]
  std::vector<double> cumulative;  // i / n for the i-th sorted gap
  GapSummary summary;
};

/// Normalized rank gaps |rank_feature - rank_score| / n * 100 per joined
/// cluster; both rankings descending with average ranks for ties.
std::vector<double> rank_gaps(std::span<const features::FeatureRow> features,
                              std::span<const scoring::ClusterScore> scores, const features::FeatureVariant& feature);

GapCurve gap_curve(std::span<const features::FeatureRow> features, std::span<const scoring::ClusterScore> scores,
                   const features::FeatureVariant& feature);

/// Curve over a pooled set of gaps (e.g. from many cases).
GapCurve gap_curve_from_gaps(std::vector<double> gaps);

std::string gap_curve_csv(const GapCurve& curve);

}  // namespace iun::stats
