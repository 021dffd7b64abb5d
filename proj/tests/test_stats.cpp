#include <gtest/gtest.h>

#include <cmath>

#include "iun/features.hpp"
#include "iun/scoring.hpp"
#include "iun/stats.hpp"
#include "iun/util.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace iun;
using namespace iun::stats;

namespace {

std::vector<double> tied_vector(SplitMix64& rng, std::size_t n, std::uint64_t levels) {
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(rng.below(levels));
  return v;
}

features::FeatureRow row(int id, double value) {
  features::FeatureRow r;
  r.cluster_id = id;
  r.size = 3;
  r.d90_50 = value;
  return r;
}

scoring::ClusterScore score(int id, double mean) { return {id, mean, 0.0, 3}; }

CorrelationResult result(double tau, const std::string& dataset = "XS", std::size_t n_clusters = 40) {
  CorrelationResult r;
  r.coords.dataset = dataset;
  r.coords.n_clusters = n_clusters;
  r.tau_b = tau;
  r.spearman = tau;
  return r;
}

const features::FeatureVariant kD9050 = features::FeatureVariant::parse("d90_50");

}  // namespace

TEST(KendallTauB, Examples) {
  const std::vector<double> a = {1, 2, 3, 4}, b = {4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(kendall_tau_b(a, a), 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau_b(a, b), -1.0);
  EXPECT_NEAR(kendall_tau_b(std::vector<double>{1, 1, 2}, std::vector<double>{1, 2, 3}), 2.0 / std::sqrt(6.0), 1e-15);
  EXPECT_IUN_ERROR(kendall_tau_b(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), ErrorCode::Undefined);
  EXPECT_IUN_ERROR(kendall_tau_b(a, std::vector<double>{1, 2}), ErrorCode::LengthMismatch);
  EXPECT_IUN_ERROR(kendall_tau_b(std::vector<double>{1}, std::vector<double>{1}), ErrorCode::InvalidArgument);
}

TEST(KendallTauB, MatchesPairCountingOracleOnTiedVectors) {
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(120);
    auto x = tied_vector(rng, n, 1 + rng.below(8));
    auto y = tied_vector(rng, n, 1 + rng.below(8));
    x[0] = 0, x[1] = 1, y[0] = 1, y[1] = 0;  // never entirely tied
    EXPECT_NEAR(kendall_tau_b(x, y), oracle::kendall_tau_b(x, y), 1e-12);
  }
}

TEST(KendallTauB, SymmetryReversalAndMonotoneInvariance) {
  SplitMix64 rng(5);
  std::vector<double> x(60), y(60);
  for (std::size_t i = 0; i < 60; ++i) x[i] = rng.normal(), y[i] = x[i] + rng.normal();
  const double t = kendall_tau_b(x, y);
  EXPECT_DOUBLE_EQ(kendall_tau_b(y, x), t);
  std::vector<double> neg = y, warped = y;
  for (auto& v : neg) v = -v;
  for (auto& v : warped) v = std::exp(v) + 3.0;
  EXPECT_DOUBLE_EQ(kendall_tau_b(x, neg), -t);
  EXPECT_DOUBLE_EQ(kendall_tau_b(x, warped), t);
}

TEST(Spearman, ExamplesAndOracle) {
  const std::vector<double> a = {3, 1, 4, 1, 5, 9, 2, 6};
  EXPECT_DOUBLE_EQ(spearman(a, a), 1.0);
  std::vector<double> warped = a;
  for (auto& v : warped) v = std::exp(v);
  const std::vector<double> b = {2, 7, 1, 8, 2, 8, 1, 8};
  EXPECT_NEAR(spearman(b, warped), spearman(b, a), 1e-15);
  EXPECT_IUN_ERROR(spearman(a, std::vector<double>(8, 1.0)), ErrorCode::Undefined);

  SplitMix64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(100), y(100);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    EXPECT_NEAR(spearman(x, y), oracle::spearman(x, y), 1e-12);
  }
}

TEST(AverageRanks, TiesShareMeanRank) {
  EXPECT_EQ(average_ranks(std::vector<double>{10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
  EXPECT_EQ(average_ranks(std::vector<double>{10, 20, 20, 5}, true), (std::vector<double>{3, 1.5, 1.5, 4}));
}

TEST(CorrelateCase, PerfectAndDegenerate) {
  std::vector<features::FeatureRow> f;
  std::vector<scoring::ClusterScore> s;
  for (int i = 0; i < 10; ++i) {
    f.push_back(row(i, i * 0.5));
    s.push_back(score(i, 1.0 + 0.3 * i));
  }
  const auto out = correlate_case(f, s, kD9050, "LLM");
  ASSERT_TRUE(std::holds_alternative<CorrelationResult>(out));
  EXPECT_DOUBLE_EQ(std::get<CorrelationResult>(out).tau_b, 1.0);
  EXPECT_DOUBLE_EQ(std::get<CorrelationResult>(out).spearman, 1.0);
  EXPECT_EQ(std::get<CorrelationResult>(out).n, 10u);

  for (auto& x : s) x.mean = 3.0;
  const auto skipped = correlate_case(f, s, kD9050, "LLM");
  ASSERT_TRUE(std::holds_alternative<SkippedCorrelation>(skipped));
  EXPECT_EQ(std::get<SkippedCorrelation>(skipped).reason, "undefined: constant scores");
}

TEST(CorrelateCase, JoinsOnClusterIdAndNeedsThreePairs) {
  std::vector<features::FeatureRow> f = {row(0, 1), row(1, 2), row(2, 3), row(3, 4)};
  std::vector<scoring::ClusterScore> s = {score(3, 4), score(1, 2), score(9, 1)};
  EXPECT_IUN_ERROR(correlate_case(f, s, kD9050, "LLM"), ErrorCode::InsufficientOverlap);
  s.push_back(score(0, 1));
  const auto out = correlate_case(f, s, kD9050, "LLM");
  EXPECT_EQ(std::get<CorrelationResult>(out).n, 3u);
  EXPECT_DOUBLE_EQ(std::get<CorrelationResult>(out).tau_b, 1.0);
}

TEST(Aggregate, HandArithmeticAndBuckets) {
  std::vector<CorrelationResult> rs = {result(0.1), result(-0.2), result(0.3)};
  const auto rows = aggregate(rs, Split::Dataset);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NEAR(rows[0].avg, 0.2 / 3.0, 1e-15);
  EXPECT_NEAR(rows[0].f_pos, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(rows[0].n_cases, 3u);
  EXPECT_NEAR(rows[0].stdev, std::sqrt(((0.1 - 0.2 / 3) * (0.1 - 0.2 / 3) + (-0.2 - 0.2 / 3) * (-0.2 - 0.2 / 3) +
                                        (0.3 - 0.2 / 3) * (0.3 - 0.2 / 3)) /
                                       3.0),
              1e-15);

  std::vector<CorrelationResult> single = {result(0.5)};
  const auto one = aggregate(single, Split::All);
  EXPECT_EQ(one[0].avg, 0.5);
  EXPECT_EQ(one[0].stdev, 0.0);
  EXPECT_EQ(one[0].f_pos, 1.0);

  EXPECT_EQ(n_clusters_bucket(49), "<50");
  EXPECT_EQ(n_clusters_bucket(50), "50-70");
  EXPECT_EQ(n_clusters_bucket(70), "50-70");
  EXPECT_EQ(n_clusters_bucket(71), ">70");
  std::vector<CorrelationResult> mix = {result(0.1, "XS", 80), result(0.2, "XS", 50), result(0.3, "XS", 70),
                                        result(0.4, "XS", 20)};
  const auto buckets = aggregate(mix, Split::NClusters);
  ASSERT_EQ(buckets.size(), 3u);
  EXPECT_EQ(buckets[0].group, "<50");
  EXPECT_EQ(buckets[1].group, "50-70");
  EXPECT_EQ(buckets[1].n_cases, 2u);
  EXPECT_EQ(buckets[2].group, ">70");
}

TEST(Aggregate, AllPositiveGivesFullFPos) {
  std::vector<CorrelationResult> rs = {result(0.2, "XS"), result(0.4, "CNN"), result(0.01, "XS")};
  for (const auto& r : aggregate(rs, Split::Dataset)) EXPECT_EQ(r.f_pos, 1.0);
  const auto by = aggregate(rs, Split::Dataset);
  EXPECT_EQ(by[0].group, "XS");
  EXPECT_EQ(by[1].group, "CNN");
}

TEST(Histogram, Boundaries) {
  const auto h = histogram(std::vector<double>{1.0, 5.0}, 4, 1, 5);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{1, 0, 0, 1}));
  const auto b = histogram(std::vector<double>{2.0}, 4, 1, 5);
  EXPECT_EQ(b.counts, (std::vector<std::size_t>{0, 1, 0, 0}));
  const auto o = histogram(std::vector<double>{0.5, 5.5, 6.0, 3.0}, 4, 1, 5);
  EXPECT_EQ(o.underflow, 1u);
  EXPECT_EQ(o.overflow, 2u);
  EXPECT_IUN_ERROR(histogram(std::vector<double>{}, 4, 5, 1), ErrorCode::InvalidRange);
  EXPECT_IUN_ERROR(histogram(std::vector<double>{}, 0, 1, 5), ErrorCode::InvalidRange);
}

TEST(Histogram, UniformCountsWithinBinomialBound) {
  SplitMix64 rng(31);
  std::vector<double> values(10000);
  for (auto& v : values) v = rng.uniform();
  const auto h = histogram(values, 20, 0, 1);
  const double sigma = std::sqrt(10000 * 0.05 * 0.95);
  for (auto c : h.counts) EXPECT_LT(std::abs(static_cast<double>(c) - 500.0), 5 * sigma);
}

TEST(Histogram, Csv) {
  const auto csv = histogram_csv(histogram(std::vector<double>{1.0, 2.0, 9.0}, 2, 1, 3));
  EXPECT_EQ(csv, "bin_low,bin_high,count\n1.0000,2.0000,1\n2.0000,3.0000,1\n-inf,1.0000,0\n3.0000,inf,1\n");
}

TEST(GapCurve, HandExample) {
  // Feature ranks [1..5], score ranks [2,1,3,5,4].
  std::vector<features::FeatureRow> f;
  std::vector<scoring::ClusterScore> s;
  const double feat[] = {5, 4, 3, 2, 1};
  const double sc[] = {4, 5, 3, 1, 2};
  for (int i = 0; i < 5; ++i) {
    f.push_back(row(i, feat[i]));
    s.push_back(score(i, sc[i]));
  }
  EXPECT_EQ(rank_gaps(f, s, kD9050), (std::vector<double>{20, 20, 0, 20, 20}));
  const auto curve = gap_curve(f, s, kD9050);
  EXPECT_EQ(curve.gaps, (std::vector<double>{0, 20, 20, 20, 20}));
  EXPECT_EQ(curve.cumulative.back(), 1.0);
  EXPECT_DOUBLE_EQ(curve.summary.median, 20.0);
  EXPECT_DOUBLE_EQ(curve.summary.avg, 16.0);
  EXPECT_DOUBLE_EQ(curve.summary.p97_5, 20.0);
}

TEST(GapCurve, IdentityAndSwap) {
  std::vector<features::FeatureRow> f = {row(0, 1), row(1, 2), row(2, 3)};
  std::vector<scoring::ClusterScore> s = {score(0, 1), score(1, 2), score(2, 3)};
  const auto same = gap_curve(f, s, kD9050);
  EXPECT_EQ(same.summary.median, 0.0);
  EXPECT_EQ(same.summary.avg, 0.0);
  EXPECT_EQ(same.summary.p97_5, 0.0);

  const auto swapped = gap_curve_from_gaps({50.0, 50.0});
  EXPECT_EQ(swapped.summary.avg, 50.0);
  EXPECT_IUN_ERROR(gap_curve_from_gaps({}), ErrorCode::EmptyInput);
}

TEST(GapCurve, CumulativeMonotoneAndBounded) {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + rng.below(60);
    std::vector<features::FeatureRow> f;
    std::vector<scoring::ClusterScore> s;
    for (std::size_t i = 0; i < n; ++i) {
      f.push_back(row(static_cast<int>(i), static_cast<double>(rng.below(10))));
      s.push_back(score(static_cast<int>(i), 1.0 + static_cast<double>(rng.below(5))));
    }
    const auto c = gap_curve(f, s, kD9050);
    for (std::size_t i = 1; i < c.cumulative.size(); ++i) EXPECT_GE(c.cumulative[i], c.cumulative[i - 1]);
    EXPECT_EQ(c.cumulative.back(), 1.0);
    EXPECT_GE(c.gaps.front(), 0.0);
    EXPECT_LE(c.gaps.back(), 100.0);
    for (double v : {c.summary.median, c.summary.avg, c.summary.p97_5}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 100.0);
    }
  }
}

TEST(GapCurve, Csv) {
  const auto csv = gap_curve_csv(gap_curve_from_gaps({20, 0}));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "normalized_gap,cumulative_fraction");
}
