#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iun/features.hpp"
#include "iun/scoring.hpp"
#include "iun/stats.hpp"

namespace iun::runner {
struct ExperimentConfig;
struct RunManifest;
}  // namespace iun::runner

namespace iun::report {

/// One planned clustering case. `status` is "valid", "too_few", "too_many"
/// or "failed"; only valid cases enter aggregates.
struct CaseRow {
  stats::CaseCoordinates coords;
  std::string status;
};

/// Everything the report needs from one case x scorer cell.
struct CellResult {
  stats::CaseCoordinates coords;
  std::string scorer;
  bool valid = true;
  std::string reason;
  std::vector<features::FeatureRow> features;          // eligible clusters
  std::vector<scoring::ClusterScore> cluster_scores;   // clusters with >= 3 ok scores
  std::vector<stats::CorrelationOutcome> outcomes;     // one per correlated variant
};

/// Correlates every variant; an invalid case gets no outcomes, and too
/// little overlap becomes a skipped outcome rather than an error.
CellResult compute_cell(const stats::CaseCoordinates& coords, const std::string& scorer, bool valid,
                        std::string reason, std::vector<features::FeatureRow> features,
                        std::vector<scoring::ClusterScore> cluster_scores,
                        std::span<const features::FeatureVariant> variants);

nlohmann::json feature_rows_to_json(std::span<const features::FeatureRow> rows);
std::vector<features::FeatureRow> feature_rows_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CellResult& cell);
CellResult cell_from_json(const nlohmann::json& j);
nlohmann::json to_json(const stats::CaseCoordinates& c);
stats::CaseCoordinates coordinates_from_json(const nlohmann::json& j);

struct CrossScorerRow {
  std::string dataset;
  std::size_t data_size = 0;
  std::string scorer_a;
  std::string scorer_b;
  std::size_t n_docs = 0;
  double tau_b = 0.0;
};

struct ScorerInfo {
  std::string name;
  scoring::ScoreScale scale = scoring::ScoreScale::Likert;
};

struct ReportInput {
  std::vector<CaseRow> cases;
  std::vector<CellResult> cells;
  std::vector<CrossScorerRow> cross;
  std::vector<ScorerInfo> scorers;
  std::vector<std::string> features;          // aggregated in the correlation grids
  std::vector<std::string> variant_features;  // rows of the variant comparison
  std::string gap_feature = "d90_50";
};

/// File name -> contents. A pure function of the input, so two calls on the
/// same artifacts give byte-identical bundles. Throws EmptyResults when no
/// cell was correlated.
using Bundle = std::map<std::string, std::string>;
Bundle build_report(const ReportInput& input);

/// Replaces the bundle directory's contents with `bundle`.
void write_bundle(const Bundle& bundle, const std::filesystem::path& dir);

/// Gathers cases, cells and cross-scorer rows from the cache for every
/// completed task of the manifest.
ReportInput collect_report_input(const runner::ExperimentConfig& cfg, const runner::RunManifest& manifest);

/// Builds and writes <output_dir>/report; returns that directory.
std::filesystem::path write_report(const runner::ExperimentConfig& cfg, const runner::RunManifest& manifest);

}  // namespace iun::report
