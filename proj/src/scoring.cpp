#include "iun/scoring.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "iun/error.hpp"
#include "iun/stats.hpp"
#include "iun/util.hpp"

namespace iun::scoring {

namespace {

using json = nlohmann::json;

const std::string kUserPrompt =
    "Assign a score in Likert scale (1 to 5) to rate the importance and urgency of a news article.\n"
    "Your answer should contain only one digit: 1, 2, 3, 4 or 5.\n"
    "Here is a simple guide for assigning the score to the text:\n"
    "1: The text is not a news article.\n"
    "2: The news in the text can be perceived as not important and not urgent.\n"
    "3: The news in the text can be perceived as having low importance and low urgency.\n"
    "4: The news in the text can be perceived as important and urgent.\n"
    "5: The news in the text can be perceived as highly important and urgent.\n"
    "This is the text:";

const std::string kSystemPrompt =
    "You are a labeler, skilled in rating the importance and urgency of news.\n"
    "You are using Likert scale (1 to 5):\n"
    "1: The text does not have news.\n"
    "2: The news in the text can be perceived as not important and not urgent.\n"
    "3: The news in the text can be perceived as having low importance and low urgency.\n"
    "4: The news in the text can be perceived as important and urgent.\n"
    "5: The news in the text can be perceived as highly important and urgent.\n"
    "Rate the provided text. Respond with one digit: 1, 2, 3, 4 or 5.";

ScoreRecord base_record(const corpus::Chunk& chunk, const ScorerSpec& spec) {
  ScoreRecord r;
  r.doc_id = chunk.doc_id;
  r.scorer = spec.name;
  r.model = spec.model;
  r.chunk_sha256 = chunk.sha256;
  return r;
}

ScoreRecord failed(ScoreRecord r, std::string reason, bool transport) {
  r.status = ScoreStatus::Failed;
  r.score.reset();
  r.reason = std::move(reason);
  r.transport_failure = transport;
  return r;
}

// Posts with transport-level retries. Returns nullopt with `failure` set
// when retries run out; throws on auth and non-retryable statuses.
std::optional<std::string> post_with_retry(http::Client& client, const ScorerSpec& spec, const std::string& body,
                                           std::string& failure) {
  const std::size_t attempts = std::max<std::size_t>(1, spec.retry.max_attempts);
  for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) spec.retry.wait(attempt - 1);
    http::Response res;
    try {
      res = client.post_json(spec.request_path(), body);
    } catch (const http::TransportError& e) {
      failure = std::string("transport: ") + e.what();
      continue;
    }
    if (http::is_auth_status(res.status)) {
      throw Error(ErrorCode::Auth, "scoring endpoint rejected credentials (HTTP " + std::to_string(res.status) + ")");
    }
    if (http::is_retryable_status(res.status)) {
      failure = "transport: HTTP " + std::to_string(res.status);
      continue;
    }
    if (res.status < 200 || res.status >= 300) {
      throw Error(ErrorCode::HttpStatus, "scoring endpoint returned HTTP " + std::to_string(res.status),
                  std::to_string(res.status));
    }
    return std::move(res.body);
  }
  return std::nullopt;
}

void check_likert(const ScoreRecord& r) {
  if (!r.ok()) return;
  const double s = *r.score;
  if (!(s >= 1.0 && s <= 5.0) || s != std::floor(s)) {
    throw Error(ErrorCode::InvalidScore, "Likert score " + format_fixed(s, 3) + " for " + r.doc_id + " is not in 1..5",
                r.doc_id);
  }
}

ScoreRecord parse_record(const std::string& line, const std::string& default_scorer) {
  const json j = json::parse(line);
  ScoreRecord r;
  r.doc_id = j.at("doc_id").get<std::string>();
  r.scorer = j.contains("scorer") ? j.at("scorer").get<std::string>() : default_scorer;
  r.model = j.value("model", std::string{});
  r.chunk_sha256 = j.value("chunk_sha256", std::string{});
  const std::string status = j.value("status", std::string("ok"));
  if (status == "ok") {
    r.status = ScoreStatus::Ok;
    if (!j.contains("score") || !j.at("score").is_number()) {
      throw Error(ErrorCode::InvalidScore, "ok record without a numeric score", r.doc_id);
    }
    r.score = j.at("score").get<double>();
    if (!std::isfinite(*r.score)) throw Error(ErrorCode::InvalidScore, "non-finite score", r.doc_id);
  } else if (status == "failed") {
    r.status = ScoreStatus::Failed;
    r.reason = j.value("reason", std::string{});
  } else {
    throw Error(ErrorCode::InvalidScore, "unknown status \"" + status + "\"", r.doc_id);
  }
  if (r.doc_id.empty()) throw Error(ErrorCode::InvalidDocument, "score record with empty doc_id");
  return r;
}

bool same_outcome(const ScoreRecord& a, const ScoreRecord& b) {
  return a.status == b.status && a.score == b.score && a.model == b.model;
}

// Decorator counting calls and applying the endpoint's rate limit.
class MeteredClient : public http::Client {
 public:
  MeteredClient(http::Client& inner, double rate, double burst) : inner_(inner), limiter_(rate, burst) {}

  http::Response post_json(const std::string& path, const std::string& body) override {
    limiter_.acquire();
    ++calls_;
    return inner_.post_json(path, body);
  }

  std::size_t calls() const { return calls_; }

 private:
  http::Client& inner_;
  http::RateLimiter limiter_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace

std::string to_string(ScorerKind kind) {
  switch (kind) {
    case ScorerKind::Llm: return "llm";
    case ScorerKind::Nli: return "nli";
    case ScorerKind::File: return "file";
  }
  return "llm";
}

ScorerKind parse_scorer_kind(const std::string& text) {
  if (text == "llm") return ScorerKind::Llm;
  if (text == "nli") return ScorerKind::Nli;
  if (text == "file") return ScorerKind::File;
  throw Error(ErrorCode::Config, "unknown scorer kind: " + text, text);
}

std::string to_string(PromptVariant variant) { return variant == PromptVariant::User ? "user" : "system"; }

PromptVariant parse_prompt_variant(const std::string& text) {
  if (text == "user") return PromptVariant::User;
  if (text == "system") return PromptVariant::System;
  throw Error(ErrorCode::Config, "unknown prompt variant: " + text, text);
}

ScoreScale ScorerSpec::scale() const {
  switch (kind) {
    case ScorerKind::Llm: return ScoreScale::Likert;
    case ScorerKind::Nli: return ScoreScale::Real;
    case ScorerKind::File: return file_scale;
  }
  return ScoreScale::Real;
}

std::string ScorerSpec::request_path() const {
  if (!path.empty()) return path;
  return kind == ScorerKind::Nli ? "/classify" : "/chat/completions";
}

std::vector<double> ScorerSpec::schedule() const {
  if (temperatures.empty()) return {0.0};
  if (!escalate) return {temperatures.front()};
  return temperatures;
}

void ScorerSpec::validate() const {
  if (name.empty()) throw Error(ErrorCode::Config, "scorer needs a name");
  if (kind == ScorerKind::File) {
    if (file.empty()) throw Error(ErrorCode::Config, "file scorer " + name + " needs a path", name);
    if (!endpoint.empty()) throw Error(ErrorCode::Config, "file scorer " + name + " must not name an endpoint", name);
  } else {
    if (!file.empty()) throw Error(ErrorCode::Config, "endpoint scorer " + name + " must not name a file", name);
    if (model.empty()) throw Error(ErrorCode::Config, "scorer " + name + " needs a model", name);
  }
  if (max_in_flight < 1) throw Error(ErrorCode::Config, "max_in_flight must be >= 1", name);
  if (rate_limit < 0.0) throw Error(ErrorCode::Config, "rate_limit must be >= 0", name);
  for (double t : temperatures) {
    if (!(t >= 0.0 && t <= 2.0)) throw Error(ErrorCode::Config, "temperature outside [0, 2]", name);
  }
}

std::string to_jsonl_line(const ScoreRecord& r) {
  json j = {{"doc_id", r.doc_id},
            {"scorer", r.scorer},
            {"model", r.model},
            {"chunk_sha256", r.chunk_sha256},
            {"score", r.score ? json(*r.score) : json(nullptr)},
            {"status", r.ok() ? "ok" : "failed"}};
  if (!r.ok() && !r.reason.empty()) j["reason"] = r.reason;
  return j.dump();
}

const std::string& prompt_text(PromptVariant variant) {
  return variant == PromptVariant::User ? kUserPrompt : kSystemPrompt;
}

std::string chat_request_body(const ScorerSpec& spec, const corpus::Chunk& chunk, double temperature) {
  json messages = json::array();
  if (spec.prompt_variant == PromptVariant::User) {
    messages.push_back({{"role", "user"}, {"content", kUserPrompt + "\n" + chunk.text}});
  } else {
    messages.push_back({{"role", "system"}, {"content", kSystemPrompt}});
    messages.push_back({{"role", "user"}, {"content", chunk.text}});
  }
  return json{{"model", spec.model}, {"temperature", temperature}, {"max_tokens", 1}, {"messages", messages}}.dump();
}

std::optional<int> parse_likert(std::string_view content) {
  const auto t = trim(content);
  if (t.size() != 1 || t[0] < '1' || t[0] > '5') return std::nullopt;
  return t[0] - '0';
}

ScoreRecord llm_score(const corpus::Chunk& chunk, const ScorerSpec& spec, http::Client& client) {
  if (spec.kind != ScorerKind::Llm) throw Error(ErrorCode::InvalidArgument, "llm_score needs an llm scorer");
  ScoreRecord r = base_record(chunk, spec);
  std::string last;
  for (double temperature : spec.schedule()) {
    std::string failure;
    const auto body = post_with_retry(client, spec, chat_request_body(spec, chunk, temperature), failure);
    if (!body) return failed(std::move(r), failure, true);
    std::string content;
    try {
      const json j = json::parse(*body);
      content = j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedResponse, std::string("chat response: ") + e.what(), chunk.doc_id);
    }
    if (const auto v = parse_likert(content)) {
      r.status = ScoreStatus::Ok;
      r.score = *v;
      return r;
    }
    last = content;
  }
  return failed(std::move(r), "unparseable answer: " + json(last).dump(), false);
}

ScoreRecord nli_score(const corpus::Chunk& chunk, const ScorerSpec& spec, http::Client& client) {
  if (spec.kind != ScorerKind::Nli) throw Error(ErrorCode::InvalidArgument, "nli_score needs an nli scorer");
  ScoreRecord r = base_record(chunk, spec);
  json req = {{"text", chunk.text}, {"labels", {"urgent", "not urgent"}}};
  if (!spec.model.empty()) req["model"] = spec.model;
  std::string failure;
  const auto body = post_with_retry(client, spec, req.dump(), failure);
  if (!body) return failed(std::move(r), failure, true);
  double value = 0.0;
  try {
    const json j = json::parse(*body);
    const json& scores = j.contains("scores") ? j.at("scores") : j;
    if (!scores.is_object() || !scores.contains("urgent")) {
      throw Error(ErrorCode::MalformedResponse, "classification response has no \"urgent\" class", chunk.doc_id);
    }
    value = scores.at("urgent").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedResponse, std::string("classification response: ") + e.what(), chunk.doc_id);
  }
  if (!std::isfinite(value)) throw Error(ErrorCode::MalformedResponse, "non-finite class score", chunk.doc_id);
  r.status = ScoreStatus::Ok;
  r.score = value;
  return r;
}

std::vector<ScoreRecord> load_scores(const std::filesystem::path& path, const ScorerSpec& spec) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::FileMissing, "no score file at " + path.string(), path.string());
  std::ifstream in(path);
  std::string line;
  std::size_t line_no = 0;
  std::vector<ScoreRecord> out;
  std::unordered_map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ScoreRecord r;
    try {
      r = parse_record(line, spec.name);
    } catch (const json::exception& e) {
      throw MalformedLineError(ErrorCode::MalformedLine, line_no, e.what());
    }
    if (r.scorer != spec.name) continue;
    if (spec.scale() == ScoreScale::Likert) check_likert(r);
    const auto [it, inserted] = index.emplace(r.key(), out.size());
    if (inserted) {
      out.push_back(std::move(r));
    } else if (!same_outcome(out[it->second], r)) {
      throw Error(ErrorCode::ConflictingScores, "conflicting scores for document " + r.doc_id, r.doc_id);
    }
  }
  return out;
}

ScoreCache::ScoreCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      auto r = parse_record(line, {});
      records_[r.key()] = std::move(r);
    } catch (const json::exception&) {
      // Torn last line of an interrupted run; that record is recomputed.
    }
  }
}

std::optional<ScoreRecord> ScoreCache::find(const std::string& key) const {
  std::lock_guard lock(mutex_);
  const auto it = records_.find(key);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void ScoreCache::append(const ScoreRecord& r) {
  std::lock_guard lock(mutex_);
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app);
  out << to_jsonl_line(r) << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::Io, "cannot append to score cache " + path_.string(), path_.string());
  records_[r.key()] = r;
}

std::size_t ScoreCache::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

std::vector<ScoreRecord> score_corpus(std::span<const corpus::Chunk> chunks, const ScorerSpec& spec, ScoreCache* cache,
                                      http::Client* client, ScoreSummary* summary, const WarnFn& warn) {
  spec.validate();
  std::vector<ScoreRecord> out(chunks.size());
  ScoreSummary s;
  s.total = chunks.size();

  if (spec.kind == ScorerKind::File) {
    std::unordered_map<std::string, const ScoreRecord*> by_key;
    std::unordered_map<std::string, const ScoreRecord*> by_doc;
    const auto records = load_scores(spec.file, spec);
    for (const auto& r : records) {
      if (r.chunk_sha256.empty()) {
        by_doc[r.doc_id] = &r;
      } else {
        by_key[r.key()] = &r;
      }
    }
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      ScoreRecord r = base_record(chunks[i], spec);
      const ScoreRecord* hit = nullptr;
      if (auto it = by_key.find(r.key()); it != by_key.end()) {
        hit = it->second;
      } else if (auto d = by_doc.find(r.doc_id); d != by_doc.end()) {
        hit = d->second;
      }
      if (hit) {
        r.status = hit->status;
        r.score = hit->score;
        r.reason = hit->reason;
        if (!hit->model.empty()) r.model = hit->model;
      } else {
        r = failed(std::move(r), "absent from score file", false);
      }
      out[i] = std::move(r);
    }
  } else {
    if (!client) throw Error(ErrorCode::InvalidArgument, "endpoint scorer " + spec.name + " needs a client");
    std::vector<std::size_t> misses;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      const ScoreRecord probe = base_record(chunks[i], spec);
      if (cache) {
        if (auto hit = cache->find(probe.key())) {
          out[i] = std::move(*hit);
          ++s.cached;
          continue;
        }
      }
      misses.push_back(i);
    }
    MeteredClient metered(*client, spec.rate_limit, spec.burst);
    parallel_for(misses.size(), spec.max_in_flight, [&](std::size_t m) {
      const std::size_t i = misses[m];
      ScoreRecord r;
      try {
        r = spec.kind == ScorerKind::Llm ? llm_score(chunks[i], spec, metered) : nli_score(chunks[i], spec, metered);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::MalformedResponse) throw;
        r = failed(base_record(chunks[i], spec), e.what(), false);
      }
      // Transport failures are transient and stay out of the cache.
      if (cache && !r.transport_failure) cache->append(r);
      out[i] = std::move(r);
    });
    s.network_calls = metered.calls();
  }

  for (const auto& r : out) {
    if (r.ok()) {
      ++s.ok;
    } else if (r.transport_failure) {
      ++s.transport_failures;
    } else {
      ++s.failed;
    }
  }
  s.failure_fraction =
      s.total == 0 ? 0.0 : static_cast<double>(s.failed + s.transport_failures) / static_cast<double>(s.total);
  if (spec.scale() == ScoreScale::Likert && s.failure_fraction > kFailureWarningFraction) {
    s.warned = true;
    const std::string msg = "scorer " + spec.name + ": " + std::to_string(s.failed + s.transport_failures) + " of " +
                            std::to_string(s.total) + " documents failed (" + format_fixed(100.0 * s.failure_fraction, 2) +
                            "% > 1%)";
    if (warn) {
      warn(msg);
    } else {
      std::cerr << "warning: " << msg << '\n';
    }
  }
  if (summary) *summary = s;
  return out;
}

std::vector<ClusterScore> cluster_scores(std::span<const ScoreRecord> records, const clustering::ClusterCase& c,
                                         std::span<const std::string> row_ids) {
  if (row_ids.size() != c.labels.size()) {
    throw Error(ErrorCode::LengthMismatch, "row ids and labels differ in length");
  }
  std::unordered_map<std::string, double> score_of;
  for (const auto& r : records) {
    if (r.ok()) score_of[r.doc_id] = *r.score;
  }
  std::vector<std::vector<double>> members(c.n_clusters);
  for (std::size_t row = 0; row < c.labels.size(); ++row) {
    if (c.labels[row] == clustering::kNoise) continue;
    const auto it = score_of.find(row_ids[row]);
    if (it != score_of.end()) members[static_cast<std::size_t>(c.labels[row])].push_back(it->second);
  }
  std::vector<ClusterScore> out;
  for (std::size_t k = 0; k < members.size(); ++k) {
    const auto& v = members[k];
    if (v.size() < kMinScoredMembers) continue;
    ClusterScore cs;
    cs.cluster_id = static_cast<int>(k);
    cs.n_scored = v.size();
    double sum = 0.0;
    for (double x : v) sum += x;
    cs.mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - cs.mean) * (x - cs.mean);
    cs.stdev = std::sqrt(ss / static_cast<double>(v.size()));
    out.push_back(cs);
  }
  return out;
}

double cross_scorer_correlation(std::span<const ScoreRecord> a, std::span<const ScoreRecord> b) {
  std::map<std::string, double> left;
  for (const auto& r : a) {
    if (r.ok()) left[r.doc_id] = *r.score;
  }
  std::vector<double> x;
  std::vector<double> y;
  std::map<std::string, double> right;
  for (const auto& r : b) {
    if (r.ok()) right[r.doc_id] = *r.score;
  }
  for (const auto& [id, score] : left) {
    const auto it = right.find(id);
    if (it == right.end()) continue;
    x.push_back(score);
    y.push_back(it->second);
  }
  if (x.size() < 2) {
    throw Error(ErrorCode::IntersectionTooSmall,
                "only " + std::to_string(x.size()) + " documents are scored by both scorers");
  }
  return stats::kendall_tau_b(x, y);
}

}  // namespace iun::scoring
