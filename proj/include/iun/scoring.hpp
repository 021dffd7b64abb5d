#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iun/clustering.hpp"
#include "iun/corpus.hpp"
#include "iun/http.hpp"

namespace iun::scoring {

enum class ScorerKind { Llm, Nli, File };
enum class PromptVariant { User, System };
enum class ScoreScale { Likert, Real };

std::string to_string(ScorerKind kind);
ScorerKind parse_scorer_kind(const std::string& text);
std::string to_string(PromptVariant variant);
PromptVariant parse_prompt_variant(const std::string& text);

inline constexpr double kFailureWarningFraction = 0.01;
inline constexpr std::size_t kMinScoredMembers = 3;

struct ScorerSpec {
  ScorerKind kind = ScorerKind::Llm;
  std::string name;      // label used in reports and cache keys, e.g. "LLM", "B", "D"
  std::string model;     // model id sent to the endpoint
  std::string endpoint;  // base URL; empty means IUN_API_BASE
  std::string path;      // request path; defaults per kind
  PromptVariant prompt_variant = PromptVariant::User;
  bool escalate = false;
  std::vector<double> temperatures = {0.0, 0.3, 0.7};
  http::RetryPolicy retry;  // transport-level retries per attempt
  std::size_t max_in_flight = 4;
  double rate_limit = 0.0;  // requests per second, 0 = unlimited
  double burst = 1.0;
  std::filesystem::path file;  // kind = file
  ScoreScale file_scale = ScoreScale::Likert;

  ScoreScale scale() const;
  std::string request_path() const;
  /// Temperatures actually tried: all of them with escalation, the first otherwise.
  std::vector<double> schedule() const;
  void validate() const;
};

enum class ScoreStatus { Ok, Failed };

struct ScoreRecord {
  std::string doc_id;
  std::string scorer;
  std::string model;
  std::string chunk_sha256;
  std::optional<double> score;  // set iff status is ok
  ScoreStatus status = ScoreStatus::Failed;
  std::string reason;           // failed records only
  bool transport_failure = false;

  bool ok() const noexcept { return status == ScoreStatus::Ok; }
  std::string key() const { return doc_id + '\n' + scorer + '\n' + chunk_sha256; }
};

std::string to_jsonl_line(const ScoreRecord& r);

struct ClusterScore {
  int cluster_id = 0;
  double mean = 0.0;
  double stdev = 0.0;  // population
  std::size_t n_scored = 0;
};

/// Instruction text preceding the article (user variant) or sent as the
/// system message (system variant).
const std::string& prompt_text(PromptVariant variant);

/// Chat-completions body for one attempt.
std::string chat_request_body(const ScorerSpec& spec, const corpus::Chunk& chunk, double temperature);

/// Accepts exactly "1".."5" after trimming whitespace.
std::optional<int> parse_likert(std::string_view content);

/// One chunk through the chat endpoint. Unparseable answers move along the
/// temperature schedule; exhausting it or the transport retries yields a
/// failed record. Auth failures throw.
ScoreRecord llm_score(const corpus::Chunk& chunk, const ScorerSpec& spec, http::Client& client);

/// Score of class "urgent" from the classification endpoint. Throws
/// MalformedResponse for a missing class or a non-finite value.
ScoreRecord nli_score(const corpus::Chunk& chunk, const ScorerSpec& spec, http::Client& client);

/// Reads a JSONL score file, keeping records of `spec.name` (a record with
/// no "scorer" key belongs to it). Identical duplicates collapse; differing
/// ones throw ConflictingScores. Likert scorers reject non-integer or
/// out-of-range ok scores with InvalidScore.
std::vector<ScoreRecord> load_scores(const std::filesystem::path& path, const ScorerSpec& spec);

/// Append-only JSONL cache keyed by doc_id + scorer + chunk_sha256.
class ScoreCache {
 public:
  explicit ScoreCache(std::filesystem::path path);

  std::optional<ScoreRecord> find(const std::string& key) const;
  void append(const ScoreRecord& r);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  std::map<std::string, ScoreRecord> records_;
  mutable std::mutex mutex_;
};

struct ScoreSummary {
  std::size_t total = 0;
  std::size_t ok = 0;
  std::size_t failed = 0;             // unparseable or malformed answers
  std::size_t transport_failures = 0; // retries exhausted; not cached
  std::size_t cached = 0;
  std::size_t network_calls = 0;
  double failure_fraction = 0.0;
  bool warned = false;
};

using WarnFn = std::function<void(const std::string&)>;

/// Scores every chunk, returning records aligned with `chunks`. Cache hits
/// are reused; misses go to the endpoint with at most max_in_flight
/// requests and the spec's rate limit. File scorers read spec.file and need
/// neither a client nor a cache. Warns (default: stderr) when the failure
/// fraction of a Likert scorer exceeds 1%.
std::vector<ScoreRecord> score_corpus(std::span<const corpus::Chunk> chunks, const ScorerSpec& spec, ScoreCache* cache,
                                      http::Client* client, ScoreSummary* summary = nullptr, const WarnFn& warn = {});

/// Mean and population stdev of ok member scores per cluster, for clusters
/// with at least 3 ok members, ordered by cluster id. `row_ids` maps matrix
/// rows to document ids.
std::vector<ClusterScore> cluster_scores(std::span<const ScoreRecord> records, const clustering::ClusterCase& c,
                                         std::span<const std::string> row_ids);

/// Kendall tau-b over documents with ok records in both sets. Throws
/// IntersectionTooSmall below 2 common documents.
double cross_scorer_correlation(std::span<const ScoreRecord> a, std::span<const ScoreRecord> b);

}  // namespace iun::scoring
