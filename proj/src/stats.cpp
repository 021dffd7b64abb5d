#include "iun/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>

#include "iun/error.hpp"
#include "iun/scoring.hpp"
#include "iun/util.hpp"

namespace iun::stats {

namespace {

void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "vectors differ in length (" + std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
  }
  if (x.size() < 2) throw Error(ErrorCode::InvalidArgument, "correlation needs at least 2 pairs");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw Error(ErrorCode::NonFinite, "non-finite correlation input");
  }
}

std::int64_t tied_pairs(std::int64_t run) { return run * (run - 1) / 2; }

// Sorts v ascending, returns the number of inversions removed.
std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo;
  std::size_t j = mid;
  std::size_t k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct Joined {
  std::vector<double> feature;
  std::vector<double> score;
};

Joined join(std::span<const features::FeatureRow> features, std::span<const scoring::ClusterScore> scores,
            const features::FeatureVariant& feature) {
  std::map<int, double> by_cluster;
  for (const auto& s : scores) by_cluster.emplace(s.cluster_id, s.mean);
  std::vector<std::pair<int, double>> rows;
  for (const auto& f : features) rows.emplace_back(f.cluster_id, f.value(feature));
  std::sort(rows.begin(), rows.end());
  Joined out;
  for (const auto& [id, value] : rows) {
    const auto it = by_cluster.find(id);
    if (it == by_cluster.end()) continue;
    out.feature.push_back(value);
    out.score.push_back(it->second);
  }
  if (out.feature.size() < kMinCorrelationPairs) {
    throw Error(ErrorCode::InsufficientOverlap, "only " + std::to_string(out.feature.size()) +
                                                    " clusters have both a feature and a score");
  }
  return out;
}

}  // namespace

double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });

  std::int64_t ties_x = 0;
  std::int64_t ties_xy = 0;
  std::int64_t run_x = 1;
  std::int64_t run_xy = 1;
  for (std::size_t i = 1; i < n; ++i) {
    const bool same_x = x[order[i]] == x[order[i - 1]];
    const bool same_y = y[order[i]] == y[order[i - 1]];
    if (same_x) {
      ++run_x;
      if (same_y) {
        ++run_xy;
      } else {
        ties_xy += tied_pairs(run_xy);
        run_xy = 1;
      }
    } else {
      ties_x += tied_pairs(run_x);
      ties_xy += tied_pairs(run_xy);
      run_x = 1;
      run_xy = 1;
    }
  }
  ties_x += tied_pairs(run_x);
  ties_xy += tied_pairs(run_xy);

  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
  std::vector<double> buf(n);
  const std::int64_t swaps = merge_count(ys, buf, 0, n);

  std::int64_t ties_y = 0;
  std::int64_t run_y = 1;
  for (std::size_t i = 1; i < n; ++i) {
    if (ys[i] == ys[i - 1]) {
      ++run_y;
    } else {
      ties_y += tied_pairs(run_y);
      run_y = 1;
    }
  }
  ties_y += tied_pairs(run_y);

  const std::int64_t total = tied_pairs(static_cast<std::int64_t>(n));
  const std::int64_t s = total - ties_x - ties_y + ties_xy - 2 * swaps;
  const std::int64_t denom_x = total - ties_x;
  const std::int64_t denom_y = total - ties_y;
  if (denom_x == 0 || denom_y == 0) throw Error(ErrorCode::Undefined, "tau-b is undefined for an all-tied vector");
  return static_cast<double>(s) / std::sqrt(static_cast<double>(denom_x) * static_cast<double>(denom_y));
}

std::vector<double> average_ranks(std::span<const double> values, bool descending) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? values[a] > values[b] : values[a] < values[b];
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // positions i..j-1 hold rank i+1..j
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = mean_of(rx);
  const double my = mean_of(ry);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mx;
    const double dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::Undefined, "spearman is undefined for constant ranks");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationOutcome correlate_case(std::span<const features::FeatureRow> features,
                                  std::span<const scoring::ClusterScore> scores,
                                  const features::FeatureVariant& feature, const std::string& scorer,
                                  const CaseCoordinates& coords) {
  const Joined joined = join(features, scores, feature);
  try {
    CorrelationResult r;
    r.coords = coords;
    r.feature = feature.name();
    r.scorer = scorer;
    r.n = joined.feature.size();
    r.tau_b = kendall_tau_b(joined.feature, joined.score);
    r.spearman = spearman(joined.feature, joined.score);
    return r;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Undefined) throw;
    const bool constant_scores =
        std::adjacent_find(joined.score.begin(), joined.score.end(), std::not_equal_to<>()) == joined.score.end();
    return SkippedCorrelation{coords, feature.name(), scorer,
                              constant_scores ? "undefined: constant scores" : "undefined: constant feature"};
  }
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Dataset: return "dataset";
    case Split::DataSize: return "data_size";
    case Split::Algorithm: return "algorithm";
    case Split::NClusters: return "n_clust";
    case Split::Reduction: return "reduction";
    case Split::Embedding: return "embedding";
    case Split::All: return "all";
  }
  return "all";
}

std::string n_clusters_bucket(std::size_t n_clusters) {
  if (n_clusters < 50) return "<50";
  if (n_clusters <= 70) return "50-70";
  return ">70";
}

AggregateRow summarize(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptyResults, "nothing to summarize");
  AggregateRow row;
  row.n_cases = values.size();
  row.avg = mean_of(values);
  double ss = 0.0;
  std::size_t positive = 0;
  for (double v : values) {
    ss += (v - row.avg) * (v - row.avg);
    if (v > 0.0) ++positive;
  }
  row.stdev = std::sqrt(ss / static_cast<double>(values.size()));
  row.f_pos = static_cast<double>(positive) / static_cast<double>(values.size());
  return row;
}

std::vector<AggregateRow> aggregate(std::span<const CorrelationResult> results, Split split, Metric metric) {
  if (results.empty()) throw Error(ErrorCode::EmptyResults, "no correlation results to aggregate");
  auto key_of = [split](const CorrelationResult& r) -> std::string {
    switch (split) {
      case Split::Dataset: return r.coords.dataset;
      case Split::DataSize: return std::to_string(r.coords.data_size);
      case Split::Algorithm: return r.coords.algorithm;
      case Split::NClusters: return n_clusters_bucket(r.coords.n_clusters);
      case Split::Reduction: return r.coords.reduction;
      case Split::Embedding: return r.coords.embedding;
      case Split::All: return "all";
    }
    return "all";
  };

  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> groups;
  for (const auto& r : results) {
    const auto key = key_of(r);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(metric == Metric::TauB ? r.tau_b : r.spearman);
  }
  if (split == Split::NClusters) {
    const std::vector<std::string> fixed = {"<50", "50-70", ">70"};
    order.clear();
    for (const auto& b : fixed) {
      if (groups.count(b)) order.push_back(b);
    }
  } else if (split == Split::DataSize) {
    std::sort(order.begin(), order.end(),
              [](const std::string& a, const std::string& b) { return std::stoull(a) < std::stoull(b); });
  }

  std::vector<AggregateRow> out;
  for (const auto& key : order) {
    AggregateRow row = summarize(groups[key]);
    row.split = to_string(split);
    row.group = key;
    out.push_back(std::move(row));
  }
  return out;
}

Histogram histogram(std::span<const double> values, std::size_t bins, double low, double high) {
  if (bins < 1 || !(low < high) || !std::isfinite(low) || !std::isfinite(high)) {
    throw Error(ErrorCode::InvalidRange, "histogram needs bins >= 1 and low < high");
  }
  Histogram h;
  h.low = low;
  h.high = high;
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    h.edges[i] = low + (high - low) * static_cast<double>(i) / static_cast<double>(bins);
  }
  h.edges.back() = high;
  h.counts.assign(bins, 0);
  for (double v : values) {
    if (v < low) {
      ++h.underflow;
    } else if (v > high) {
      ++h.overflow;
    } else {
      const auto interior_begin = h.edges.begin() + 1;
      const auto interior_end = h.edges.end() - 1;
      const auto idx = static_cast<std::size_t>(std::upper_bound(interior_begin, interior_end, v) - interior_begin);
      ++h.counts[idx];
    }
  }
  return h;
}

std::string histogram_csv(const Histogram& h) {
  std::string out = "bin_low,bin_high,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    out += format_fixed(h.edges[i], 4) + "," + format_fixed(h.edges[i + 1], 4) + "," + std::to_string(h.counts[i]) +
           "\n";
  }
  out += "-inf," + format_fixed(h.low, 4) + "," + std::to_string(h.underflow) + "\n";
  out += format_fixed(h.high, 4) + ",inf," + std::to_string(h.overflow) + "\n";
  return out;
}

std::vector<double> rank_gaps(std::span<const features::FeatureRow> features,
                              std::span<const scoring::ClusterScore> scores, const features::FeatureVariant& feature) {
  const Joined joined = join(features, scores, feature);
  const auto rf = average_ranks(joined.feature, true);
  const auto rs = average_ranks(joined.score, true);
  const double n = static_cast<double>(rf.size());
  std::vector<double> gaps(rf.size());
  for (std::size_t i = 0; i < rf.size(); ++i) gaps[i] = std::abs(rf[i] - rs[i]) / n * 100.0;
  return gaps;
}

GapCurve gap_curve_from_gaps(std::vector<double> gaps) {
  if (gaps.empty()) throw Error(ErrorCode::EmptyInput, "gap curve of no clusters");
  GapCurve curve;
  std::sort(gaps.begin(), gaps.end());
  curve.gaps = std::move(gaps);
  const std::size_t n = curve.gaps.size();
  curve.cumulative.resize(n);
  for (std::size_t i = 0; i < n; ++i) curve.cumulative[i] = static_cast<double>(i + 1) / static_cast<double>(n);
  curve.summary.median = features::percentile_sorted(curve.gaps, 50.0);
  curve.summary.avg = mean_of(curve.gaps);
  curve.summary.p97_5 = features::percentile_sorted(curve.gaps, 97.5);
  return curve;
}

GapCurve gap_curve(std::span<const features::FeatureRow> features, std::span<const scoring::ClusterScore> scores,
                   const features::FeatureVariant& feature) {
  return gap_curve_from_gaps(rank_gaps(features, scores, feature));
}

std::string gap_curve_csv(const GapCurve& curve) {
  std::string out = "normalized_gap,cumulative_fraction\n";
  for (std::size_t i = 0; i < curve.gaps.size(); ++i) {
    out += format_fixed(curve.gaps[i], 6) + "," + format_fixed(curve.cumulative[i], 6) + "\n";
  }
  return out;
}

}  // namespace iun::stats
