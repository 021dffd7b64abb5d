#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "iun/embeddings.hpp"
#include "iun/features.hpp"
#include "iun/http.hpp"
#include "iun/scoring.hpp"

namespace iun::runner {

struct DatasetConfig {
  std::string name;
  std::string path;  // JSONL corpus, relative to the config file
};

/// Either a precomputed matrix (path template) or a remote endpoint.
struct EmbeddingConfig {
  std::string name;
  std::string matrix;
  std::string endpoint;
  std::string model;
  std::string path = "/embeddings";
  std::size_t batch_size = 64;
  std::size_t max_in_flight = 1;

  bool remote() const { return matrix.empty(); }
};

struct ReductionConfig {
  embeddings::ReductionSpec spec;
  std::string matrix;  // external-umap only
};

struct ExternalAlgorithm {
  std::string label;
  std::string assignments;  // path template
};

/// Templates may use {corpus}, {size}, {embedding}, {reduction} and {k}.
std::string expand_template(const std::string& tmpl, const std::map<std::string, std::string>& vars);

struct ExperimentConfig {
  std::filesystem::path base_dir;  // relative paths resolve against this
  std::vector<DatasetConfig> datasets;
  std::vector<std::size_t> sizes = {5000, 10000, 15000, 20000};
  std::vector<EmbeddingConfig> embeddings;
  std::vector<ReductionConfig> reductions;  // defaults to a single "none"
  std::vector<std::string> algorithms = {"kmeans", "ward"};
  std::vector<ExternalAlgorithm> external;
  std::vector<std::size_t> target_ks = {20, 30, 40, 50, 60, 70, 80, 90, 100};
  std::vector<scoring::ScorerSpec> scorers;
  std::vector<std::string> features = {"d90_50"};
  bool feature_sweep = false;
  std::uint64_t seed = 0;
  std::size_t chunk_limit = corpus::kDefaultChunkLimit;
  std::size_t min_clusters = clustering::kMinValidClusters;
  std::size_t max_clusters = clustering::kMaxValidClusters;
  std::filesystem::path output_dir = "out";
  std::filesystem::path cache_dir = "cache";
  std::size_t parallelism = 1;

  /// Throws Config errors whose detail() is the offending field path.
  void validate() const;

  std::filesystem::path resolve(const std::string& path) const;

  /// Every semantically meaningful field; excludes output/cache dirs,
  /// parallelism, endpoints and throttling.
  nlohmann::json canonical_json() const;
  std::string hash() const;

  /// Variants computed by the correlate stage: D90 alone, -D50 alone and
  /// D90 - D50, then the configured ones, then the sweep when enabled.
  std::vector<features::FeatureVariant> correlated_features() const;
  std::vector<features::FeatureVariant> reported_features() const;
};

ExperimentConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

enum class TaskKind { Chunk, Embed, Reduce, Linkage, Cluster, Score, Feature, Correlate };

std::string to_string(TaskKind kind);

struct Task {
  std::string id;
  TaskKind kind = TaskKind::Chunk;
  std::vector<std::string> deps;
  std::vector<std::string> outputs;  // relative to the cache dir
  nlohmann::json params;             // everything the task needs
  bool cached = false;               // done in an existing manifest with outputs present
};

struct Plan {
  std::string config_hash;
  std::vector<Task> tasks;  // topological order

  std::size_t count(TaskKind kind) const;
  std::size_t runnable(TaskKind kind) const;
  const Task* find(const std::string& id) const;
};

enum class TaskStatus { Done, Failed, Skipped };

std::string to_string(TaskStatus status);

struct TaskRecord {
  TaskKind kind = TaskKind::Chunk;
  TaskStatus status = TaskStatus::Done;
  std::string error;
  std::vector<std::string> outputs;
  nlohmann::json params;
  nlohmann::json provenance;  // results worth keeping (e.g. case validity)
};

struct RunManifest {
  std::string config_hash;
  std::map<std::string, TaskRecord> tasks;
  bool reported = false;

  /// "complete", "partial", "failed" or "pending" per stage name.
  std::map<std::string, std::string> stage_status() const;
  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

std::optional<RunManifest> read_manifest(const std::filesystem::path& path);
std::filesystem::path manifest_path(const ExperimentConfig& cfg);

/// The full grid in topological order, without consulting any manifest.
Plan enumerate_grid(const ExperimentConfig& cfg);

/// Enumerates the full grid and marks tasks already done. Throws ConfigHashMismatch when the output dir
/// already holds a manifest of a different experiment.
Plan plan(const ExperimentConfig& cfg);

struct RunOptions {
  std::set<TaskKind> kinds;  // empty = every kind
  bool report = true;
  /// Replaces the endpoint clients (tests, stubs); not owned.
  http::Client* client = nullptr;
  std::function<void(const std::string&)> log;
};

struct RunSummary {
  RunManifest manifest;
  std::size_t executed = 0;
  std::size_t reused = 0;
  std::size_t failed = 0;
  std::size_t skipped = 0;
  bool report_written = false;

  /// 0 when every selected task succeeded, 2 otherwise.
  int exit_code() const { return failed == 0 && skipped == 0 ? 0 : 2; }
};

/// Executes the plan on a bounded worker pool. A failed task marks its
/// dependents skipped; the manifest is rewritten at most once a second and at the end.
RunSummary run(const ExperimentConfig& cfg, const Plan& plan, const RunOptions& options = {});

/// Kinds that must run for a CLI stage ("chunk", "reduce", "cluster",
/// "features", "score", "correlate", "run").
std::set<TaskKind> kinds_through(const std::string& stage);

}  // namespace iun::runner
