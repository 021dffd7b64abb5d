#include <gtest/gtest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "iun/scoring.hpp"
#include "iun/util.hpp"
#include "stub_server.hpp"
#include "support.hpp"

using namespace iun;
using namespace iun::scoring;
using nlohmann::json;
using testing_support::chat_response;
using testing_support::ScriptedClient;
using testing_support::TempDir;

namespace {

ScorerSpec llm_spec(bool escalate = false) {
  ScorerSpec s;
  s.kind = ScorerKind::Llm;
  s.name = "LLM";
  s.model = "gpt-test";
  s.escalate = escalate;
  s.retry = testing_support::no_sleep_retry(2);
  return s;
}

ScorerSpec nli_spec() {
  ScorerSpec s;
  s.kind = ScorerKind::Nli;
  s.name = "B";
  s.model = "bart";
  s.retry = testing_support::no_sleep_retry(2);
  return s;
}

corpus::Chunk chunk(const std::string& id, const std::string& text = "Storm hits the coast.") {
  return corpus::top_chunk({id, text});
}

std::vector<corpus::Chunk> chunks(std::size_t n) {
  std::vector<corpus::Chunk> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(chunk("d" + std::to_string(i), "Story " + std::to_string(i) + "."));
  return out;
}

// Answers with the next entry of `answers` for each call, repeating the last.
ScriptedClient::Handler sequence(std::vector<std::string> answers) {
  auto n = std::make_shared<std::atomic<std::size_t>>(0);
  return [answers, n](const std::string&, const std::string&) {
    const std::size_t i = std::min(n->fetch_add(1), answers.size() - 1);
    return http::Response{200, chat_response(answers[i])};
  };
}

ScoreRecord ok_record(const std::string& doc, double score, const std::string& scorer = "LLM") {
  ScoreRecord r;
  r.doc_id = doc;
  r.scorer = scorer;
  r.status = ScoreStatus::Ok;
  r.score = score;
  return r;
}

std::filesystem::path write_lines(const TempDir& dir, const std::vector<std::string>& lines) {
  const auto path = dir / "scores.jsonl";
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
  return path;
}

}  // namespace

TEST(ParseLikert, AcceptsExactlyOneToFive) {
  for (int v = 1; v <= 5; ++v) EXPECT_EQ(parse_likert(std::to_string(v)), v);
  EXPECT_EQ(parse_likert(" 3\n"), 3);
  for (const char* bad : {"", "0", "6", "The", "3.", "33", "3 4", "three", "-1", "4/5"}) {
    EXPECT_EQ(parse_likert(bad), std::nullopt) << bad;
  }
}

TEST(ChatRequest, WireFormatForBothVariants) {
  auto spec = llm_spec();
  const auto c = chunk("a");
  const auto user = json::parse(chat_request_body(spec, c, 0.0));
  EXPECT_EQ(user["model"], "gpt-test");
  EXPECT_EQ(user["temperature"], 0.0);
  EXPECT_EQ(user["max_tokens"], 1);
  ASSERT_EQ(user["messages"].size(), 1u);
  EXPECT_EQ(user["messages"][0]["role"], "user");
  EXPECT_EQ(user["messages"][0]["content"], prompt_text(PromptVariant::User) + "\n" + c.text);

  spec.prompt_variant = PromptVariant::System;
  const auto sys = json::parse(chat_request_body(spec, c, 0.3));
  ASSERT_EQ(sys["messages"].size(), 2u);
  EXPECT_EQ(sys["messages"][0]["role"], "system");
  EXPECT_EQ(sys["messages"][0]["content"], prompt_text(PromptVariant::System));
  EXPECT_EQ(sys["messages"][1]["content"], c.text);
  EXPECT_EQ(sys["temperature"], 0.3);

  for (auto variant : {PromptVariant::User, PromptVariant::System}) {
    for (int v = 1; v <= 5; ++v) {
      EXPECT_NE(prompt_text(variant).find(std::to_string(v) + ": The "), std::string::npos);
    }
  }
}

TEST(LlmScore, DirectParse) {
  ScriptedClient client(sequence({"3"}));
  const auto r = llm_score(chunk("a"), llm_spec(), client);
  EXPECT_TRUE(r.ok());
  EXPECT_EQ(r.score, 3.0);
  EXPECT_EQ(r.chunk_sha256, chunk("a").sha256);
  EXPECT_EQ(client.paths()[0], "/chat/completions");
}

TEST(LlmScore, EscalationFirstParseableWins) {
  ScriptedClient client(sequence({"The", "6", "4"}));
  const auto r = llm_score(chunk("a"), llm_spec(true), client);
  EXPECT_EQ(r.score, 4.0);
  ASSERT_EQ(client.calls(), 3u);
  const auto bodies = client.bodies();
  EXPECT_EQ(json::parse(bodies[0])["temperature"], 0.0);
  EXPECT_EQ(json::parse(bodies[1])["temperature"], 0.3);
  EXPECT_EQ(json::parse(bodies[2])["temperature"], 0.7);
}

TEST(LlmScore, ExhaustedScheduleFailsWithoutScore) {
  ScriptedClient client(sequence({"The", "6", "so"}));
  const auto r = llm_score(chunk("a"), llm_spec(true), client);
  EXPECT_FALSE(r.ok());
  EXPECT_FALSE(r.score.has_value());
  EXPECT_FALSE(r.transport_failure);

  // Without escalation only the zero-temperature answer counts.
  ScriptedClient once(sequence({"The", "4"}));
  EXPECT_FALSE(llm_score(chunk("a"), llm_spec(false), once).ok());
  EXPECT_EQ(once.calls(), 1u);
}

TEST(LlmScore, TransportAndAuthFailures) {
  ScriptedClient down([](const std::string&, const std::string&) { return http::Response{503, ""}; });
  const auto r = llm_score(chunk("a"), llm_spec(), down);
  EXPECT_FALSE(r.ok());
  EXPECT_TRUE(r.transport_failure);
  EXPECT_EQ(down.calls(), 2u);

  ScriptedClient denied([](const std::string&, const std::string&) { return http::Response{401, ""}; });
  EXPECT_IUN_ERROR(llm_score(chunk("a"), llm_spec(), denied), ErrorCode::Auth);
  ScriptedClient garbage([](const std::string&, const std::string&) { return http::Response{200, "{}"}; });
  EXPECT_IUN_ERROR(llm_score(chunk("a"), llm_spec(), garbage), ErrorCode::MalformedResponse);
}

TEST(NliScore, ExtractsUrgentClass) {
  ScriptedClient client([](const std::string&, const std::string& body) {
    const auto req = json::parse(body);
    EXPECT_EQ(req["labels"], json({"urgent", "not urgent"}));
    return http::Response{200, R"({"scores":{"urgent":0.8,"not urgent":0.2}})"};
  });
  const auto r = nli_score(chunk("a"), nli_spec(), client);
  EXPECT_EQ(r.score, 0.8);
  EXPECT_EQ(client.paths()[0], "/classify");

  ScriptedClient flat([](const std::string&, const std::string&) {
    return http::Response{200, R"({"urgent":-2.5,"not urgent":1.0})"};
  });
  EXPECT_EQ(nli_score(chunk("a"), nli_spec(), flat).score, -2.5);

  ScriptedClient missing([](const std::string&, const std::string&) {
    return http::Response{200, R"({"scores":{"not urgent":0.2}})"};
  });
  EXPECT_IUN_ERROR(nli_score(chunk("a"), nli_spec(), missing), ErrorCode::MalformedResponse);
}

TEST(NliScore, IdenticalTextsServedFromCache) {
  TempDir dir;
  ScoreCache cache(dir / "cache.jsonl");
  ScriptedClient client([](const std::string&, const std::string&) {
    return http::Response{200, R"({"scores":{"urgent":1.5,"not urgent":0.0}})"};
  });
  std::vector<corpus::Chunk> cs = {chunk("a", "Same text."), chunk("b", "Same text.")};
  const auto first = score_corpus(cs, nli_spec(), &cache, &client);
  EXPECT_EQ(first[0].score, first[1].score);
  const auto again = score_corpus(cs, nli_spec(), &cache, &client);
  EXPECT_EQ(client.calls(), 2u);
  EXPECT_EQ(again[0].score, first[0].score);
}

TEST(LoadScores, DedupConflictAndInvalid) {
  TempDir dir;
  const std::string a = R"({"doc_id":"a","scorer":"LLM","model":"m","chunk_sha256":"x","score":3,"status":"ok"})";
  auto recs = load_scores(write_lines(dir, {a, a}), llm_spec());
  EXPECT_EQ(recs.size(), 1u);

  const std::string a4 = R"({"doc_id":"a","scorer":"LLM","model":"m","chunk_sha256":"x","score":4,"status":"ok"})";
  EXPECT_IUN_ERROR(load_scores(write_lines(dir, {a, a4}), llm_spec()), ErrorCode::ConflictingScores);

  const std::string half = R"({"doc_id":"b","scorer":"LLM","chunk_sha256":"y","score":2.5,"status":"ok"})";
  EXPECT_IUN_ERROR(load_scores(write_lines(dir, {half}), llm_spec()), ErrorCode::InvalidScore);
  const std::string six = R"({"doc_id":"b","scorer":"LLM","chunk_sha256":"y","score":6,"status":"ok"})";
  EXPECT_IUN_ERROR(load_scores(write_lines(dir, {six}), llm_spec()), ErrorCode::InvalidScore);

  // Real-valued scorers take any finite score; other scorers are filtered out.
  const std::string b = R"({"doc_id":"a","scorer":"B","chunk_sha256":"x","score":-1.25,"status":"ok"})";
  EXPECT_EQ(load_scores(write_lines(dir, {a, b}), nli_spec()).at(0).score, -1.25);

  EXPECT_IUN_ERROR(load_scores(write_lines(dir, {a, "{oops"}), llm_spec()), ErrorCode::MalformedLine);
}

TEST(ScoreCorpus, CacheContract) {
  TempDir dir;
  ScoreCache cache(dir / "cache.jsonl");
  const auto cs = chunks(10);
  ScriptedClient warmup(sequence({"2"}));
  std::vector<corpus::Chunk> first4(cs.begin(), cs.begin() + 4);
  score_corpus(first4, llm_spec(), &cache, &warmup);

  ScriptedClient client(sequence({"5"}));
  ScoreSummary s;
  const auto recs = score_corpus(cs, llm_spec(), &cache, &client, &s);
  EXPECT_EQ(client.calls(), 6u);
  EXPECT_EQ(s.network_calls, 6u);
  EXPECT_EQ(s.cached, 4u);
  EXPECT_EQ(recs[0].score, 2.0);
  EXPECT_EQ(recs[9].score, 5.0);

  // A fresh cache object over the same file: zero calls, same records.
  ScoreCache reopened(dir / "cache.jsonl");
  ScriptedClient idle(sequence({"1"}));
  const auto again = score_corpus(cs, llm_spec(), &reopened, &idle, &s);
  EXPECT_EQ(idle.calls(), 0u);
  EXPECT_EQ(s.network_calls, 0u);
  for (std::size_t i = 0; i < cs.size(); ++i) EXPECT_EQ(to_jsonl_line(again[i]), to_jsonl_line(recs[i]));
}

TEST(ScoreCorpus, TransportFailuresAreNotCached) {
  TempDir dir;
  ScoreCache cache(dir / "cache.jsonl");
  ScriptedClient down([](const std::string&, const std::string&) { return http::Response{500, ""}; });
  ScoreSummary s;
  score_corpus(chunks(3), llm_spec(), &cache, &down, &s, [](const std::string&) {});
  EXPECT_EQ(s.transport_failures, 3u);
  EXPECT_EQ(s.failed, 0u);
  EXPECT_EQ(cache.size(), 0u);
}

TEST(ScoreCorpus, WarnsAboveOnePercent) {
  auto answers = [](std::size_t bad) {
    return [bad](const std::string&, const std::string& body) {
      const auto content = json::parse(body)["messages"][0]["content"].get<std::string>();
      const auto n = std::stoul(content.substr(content.rfind("Story ") + 6));
      return http::Response{200, chat_response(n < bad ? "maybe" : "3")};
    };
  };
  std::vector<std::string> warnings;
  ScoreSummary s;
  ScriptedClient two(answers(2));
  score_corpus(chunks(100), llm_spec(), nullptr, &two, &s, [&](const std::string& m) { warnings.push_back(m); });
  EXPECT_EQ(s.failed, 2u);
  EXPECT_DOUBLE_EQ(s.failure_fraction, 0.02);
  EXPECT_TRUE(s.warned);
  EXPECT_EQ(warnings.size(), 1u);

  warnings.clear();
  ScriptedClient one(answers(1));
  score_corpus(chunks(100), llm_spec(), nullptr, &one, &s, [&](const std::string& m) { warnings.push_back(m); });
  EXPECT_FALSE(s.warned);
  EXPECT_TRUE(warnings.empty());
}

TEST(ScoreCorpus, FileScorerMatchesByDigestThenId) {
  TempDir dir;
  const auto cs = chunks(3);
  json rec0 = {{"doc_id", "d0"}, {"scorer", "LLM"}, {"chunk_sha256", cs[0].sha256}, {"score", 4}, {"status", "ok"}};
  json rec1 = {{"doc_id", "d1"}, {"score", 2}};
  ScorerSpec spec;
  spec.kind = ScorerKind::File;
  spec.name = "LLM";
  spec.file = write_lines(dir, {rec0.dump(), rec1.dump()});
  ScoreSummary s;
  const auto recs = score_corpus(cs, spec, nullptr, nullptr, &s, [](const std::string&) {});
  EXPECT_EQ(recs[0].score, 4.0);
  EXPECT_EQ(recs[1].score, 2.0);
  EXPECT_FALSE(recs[2].ok());
  EXPECT_EQ(recs[2].reason, "absent from score file");
  EXPECT_EQ(s.network_calls, 0u);
}

TEST(ClusterScores, MeansStdevsAndThreshold) {
  clustering::ClusterCase c;
  c.algorithm = "kmeans";
  c.labels = {0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 2};
  c.n_clusters = 3;
  std::vector<std::string> ids;
  for (int i = 0; i < 11; ++i) ids.push_back("d" + std::to_string(i));
  std::vector<ScoreRecord> recs = {ok_record("d0", 4), ok_record("d1", 5), ok_record("d2", 4),
                                   ok_record("d3", 3), ok_record("d4", 3), ok_record("d5", 3),
                                   ok_record("d6", 1), ok_record("d7", 2)};
  for (const char* id : {"d8", "d9", "d10"}) {
    ScoreRecord f;
    f.doc_id = id;
    f.scorer = "LLM";
    recs.push_back(f);
  }
  const auto out = cluster_scores(recs, c, ids);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_NEAR(out[0].mean, 13.0 / 3.0, 1e-15);
  EXPECT_NEAR(out[0].stdev, std::sqrt(2.0 / 9.0), 1e-15);
  EXPECT_EQ(out[1].mean, 3.0);
  EXPECT_EQ(out[1].stdev, 0.0);
  EXPECT_EQ(out[1].n_scored, 3u);
}

TEST(CrossScorer, IdentityReversalAndIntersection) {
  std::vector<ScoreRecord> a, b, neg;
  for (int i = 0; i < 100; ++i) {
    a.push_back(ok_record("d" + std::to_string(i), i * 0.5));
    b.push_back(ok_record("d" + std::to_string(i), i * 0.5, "B"));
    neg.push_back(ok_record("d" + std::to_string(i), -i * 0.5, "D"));
  }
  EXPECT_DOUBLE_EQ(cross_scorer_correlation(a, b), 1.0);
  EXPECT_DOUBLE_EQ(cross_scorer_correlation(a, neg), -1.0);
  std::vector<ScoreRecord> lone = {ok_record("d1", 1.0), ok_record("zz", 2.0)};
  EXPECT_IUN_ERROR(cross_scorer_correlation(a, lone), ErrorCode::IntersectionTooSmall);
}

TEST(StubServer, EndToEndOverHttp) {
  testing_support::StubServer server([](const testing_support::StubServer::Request& r) {
    const auto req = json::parse(r.body);
    const std::string answer = req["temperature"] == 0.0 ? "The" : "4";
    return std::make_pair(200, chat_response(answer));
  });
  http::ClientOptions opts;
  opts.base_url = server.base_url();
  opts.bearer_token = "secret";
  auto client = http::make_client(opts);
  const auto r = llm_score(chunk("a"), llm_spec(true), *client);
  EXPECT_EQ(r.score, 4.0);
  const auto reqs = server.requests();
  ASSERT_EQ(reqs.size(), 2u);
  EXPECT_EQ(reqs[0].path, "/v1/chat/completions");
  EXPECT_EQ(reqs[0].authorization, "Bearer secret");
}
