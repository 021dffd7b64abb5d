// Acceptance checks: one PASS/FAIL line per criterion.
//
//   iun_acceptance [--expect-fail 5,6]
//
// Exit status is 0 when the set of failing criteria equals the expected set
// (empty by default), 1 otherwise.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iun/clustering.hpp"
#include "iun/features.hpp"
#include "iun/report.hpp"
#include "iun/runner.hpp"
#include "iun/scoring.hpp"
#include "iun/stats.hpp"
#include "iun/synthetic.hpp"
#include "iun/util.hpp"
#include "oracles.hpp"
#include "stub_server.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace iun;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

const fs::path kData = IUN_TEST_DATA_DIR;

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Accumulates the first failure message of a criterion.
struct Check {
  Outcome out;
  void require(bool ok, const std::string& what) {
    if (!ok && out.pass) {
      out.pass = false;
      out.detail = what;
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 3) { return format_fixed(v, precision); }

runner::RunSummary run_fixture(const testing_support::TempDir& dir, const std::vector<std::size_t>& ks = {},
                               const std::vector<std::string>& algorithms = {}) {
  auto cfg = runner::load_config(kData / "fixture" / "config.toml");
  cfg.output_dir = dir / "out";
  cfg.cache_dir = dir / "cache";
  if (!ks.empty()) cfg.target_ks = ks;
  if (!algorithms.empty()) cfg.algorithms = algorithms;
  runner::RunOptions opts;
  opts.log = [](const std::string&) {};
  return runner::run(cfg, runner::plan(cfg), opts);
}

Outcome golden_fixture() {
  Check c;
  testing_support::TempDir dir("iun-accept");
  const auto t0 = Clock::now();
  const auto summary = run_fixture(dir);
  const double elapsed = seconds_since(t0);
  c.require(summary.exit_code() == 0, "fixture run exit code " + std::to_string(summary.exit_code()));
  const fs::path golden = kData / "golden";
  const fs::path produced = dir / "out" / "report";
  std::set<std::string> want, got;
  for (const auto& e : fs::directory_iterator(golden)) want.insert(e.path().filename().string());
  if (fs::exists(produced))
    for (const auto& e : fs::directory_iterator(produced)) got.insert(e.path().filename().string());
  c.require(want == got, "bundle file set differs from golden (" + std::to_string(got.size()) + " vs " +
                             std::to_string(want.size()) + " files)");
  for (const auto& name : want) {
    if (got.count(name)) c.require(read_text_file(golden / name) == read_text_file(produced / name), name + " differs");
  }
  c.require(elapsed < 60.0, "runtime " + fmt(elapsed) + " s");
  if (c.out.pass) c.out.detail = std::to_string(want.size()) + " files byte-identical, " + fmt(elapsed, 2) + " s";
  return c.out;
}

Outcome statistics_oracles() {
  Check c;
  const auto t0 = Clock::now();
  SplitMix64 rng(20240501);
  double worst_tau = 0, worst_rho = 0;
  int pairs = 0;
  while (pairs < 200) {
    const std::size_t n = 2 + rng.below(499);
    const auto levels = 2 + rng.below(20);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = static_cast<double>(rng.below(levels));
    for (auto& v : y) v = static_cast<double>(rng.below(levels));
    const bool degenerate = std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) ||
                            std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
    if (degenerate) continue;
    ++pairs;
    worst_tau = std::max(worst_tau, std::abs(stats::kendall_tau_b(x, y) - oracle::kendall_tau_b(x, y)));
    worst_rho = std::max(worst_rho, std::abs(stats::spearman(x, y) - oracle::spearman(x, y)));
  }
  const double elapsed = seconds_since(t0);
  c.require(worst_tau <= 1e-12, "tau-b deviates by " + std::to_string(worst_tau));
  c.require(worst_rho <= 1e-12, "spearman deviates by " + std::to_string(worst_rho));
  c.require(elapsed < 10.0, "runtime " + fmt(elapsed) + " s");
  if (c.out.pass) {
    std::ostringstream d;
    d << "200 tied pairs, max |dtau| " << worst_tau << ", max |drho| " << worst_rho << ", " << fmt(elapsed, 2) << " s";
    c.out.detail = d.str();
  }
  return c.out;
}

Outcome clustering_oracles() {
  Check c;
  const auto t0 = Clock::now();
  SplitMix64 rng(777);
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t n = 2 + rng.below(49);
    const std::size_t d = 1 + rng.below(5);
    const std::size_t k = 1 + rng.below(n);
    std::vector<double> data(n * d);
    for (auto& v : data) v = rng.normal();
    const auto m = testing_support::make_matrix(data, d);
    c.require(clustering::ward(m, k).labels == oracle::canonical(oracle::ward(data, d, k)),
              "ward differs from naive reference on instance " + std::to_string(inst));
  }
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 5 + rng.below(300);
    const std::size_t d = 1 + rng.below(6);
    const std::size_t k = 1 + rng.below(std::min<std::size_t>(n, 20));
    std::vector<double> data(n * d);
    for (auto& v : data) v = rng.uniform() * 10;
    const auto trace = clustering::kmeans_trace(testing_support::make_matrix(data, d), k, rng.next());
    for (std::size_t i = 1; i < trace.inertia_history.size(); ++i) {
      c.require(trace.inertia_history[i] <= trace.inertia_history[i - 1],
                "kmeans inertia increased on instance " + std::to_string(inst));
    }
    c.require(trace.result.n_clusters == k, "kmeans returned fewer than k clusters");
  }
  const auto blobs = clustering::kmeans_trace(testing_support::make_matrix({0, 0, 0, 1, 10, 0, 10, 1}, 2), 2, 0);
  c.require(blobs.inertia_history.back() == 1.0, "two-blob inertia " + std::to_string(blobs.inertia_history.back()));
  const double elapsed = seconds_since(t0);
  c.require(elapsed < 30.0, "runtime " + fmt(elapsed) + " s");
  if (c.out.pass) c.out.detail = "20 ward instances identical, 50 kmeans traces monotone, two-blob inertia 1.0";
  return c.out;
}

Outcome feature_oracles() {
  Check c;
  SplitMix64 rng(4242);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> pool(1 + rng.below(200));
    for (auto& v : pool) v = std::abs(rng.normal()) * 10;
    const double p = rng.uniform() * 100;
    worst = std::max(worst, std::abs(features::percentile(pool, p) - oracle::percentile(pool, p)));
    c.require(features::feature_d90_50(pool) >= 0.0, "negative d90_50");
  }
  c.require(worst <= 1e-12, "percentile deviates by " + std::to_string(worst));

  double worst_shift = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    synthetic::PlantedOptions o;
    o.seed = seed;
    o.n_clusters = 25;
    o.dim = 6;
    const auto data = synthetic::planted_signal(o);
    auto m = testing_support::make_matrix(data.points, data.dim);
    clustering::ClusterCase cs;
    cs.algorithm = "external:planted";
    cs.labels = data.labels;
    cs.n_clusters = clustering::renumber_labels(cs.labels);
    const auto base = features::feature_table(m, cs);
    auto moved = m, scaled = m;
    for (std::size_t i = 0; i < m.data.size(); ++i) {
      moved.data[i] += 3.0 - static_cast<double>(i % m.cols());
      scaled.data[i] *= 4.0;
    }
    const auto t = features::feature_table(moved, cs);
    const auto s = features::feature_table(scaled, cs);
    for (std::size_t r = 0; r < base.size(); ++r) {
      for (std::size_t i = 0; i < base[r].d.size(); ++i) {
        worst_shift = std::max(worst_shift, std::abs(t[r].d[i] - base[r].d[i]));
        worst_shift = std::max(worst_shift, std::abs(s[r].d[i] - 4.0 * base[r].d[i]));
      }
    }
    std::vector<double> fb, fs_;
    for (std::size_t r = 0; r < base.size(); ++r) fb.push_back(base[r].d90_50), fs_.push_back(s[r].d90_50);
    c.require(stats::average_ranks(fb) == stats::average_ranks(fs_), "scaling changed the feature rank order");
  }
  c.require(worst_shift <= 1e-9, "invariance violated by " + std::to_string(worst_shift));
  if (c.out.pass) {
    std::ostringstream d;
    d << "1000 pools max |dp| " << worst << ", invariance max error " << worst_shift;
    c.out.detail = d.str();
  }
  return c.out;
}

struct PlantedEnsemble {
  std::vector<double> tau_d90_50;
  std::vector<double> tau_combo;
  double seconds = 0;
};

// Kendall tau-b between planted importance and the feature, per seed.
PlantedEnsemble planted_ensemble() {
  PlantedEnsemble e;
  const auto t0 = Clock::now();
  const auto d9050 = features::FeatureVariant::parse("d90_50");
  const auto combo = features::FeatureVariant::parse("combo_2d90_d50_d20");
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    synthetic::PlantedOptions o;
    o.seed = seed;
    const auto data = synthetic::planted_signal(o);
    clustering::ClusterCase cs;
    cs.algorithm = "external:planted";
    cs.labels = data.labels;
    cs.n_clusters = clustering::renumber_labels(cs.labels);
    const auto rows = features::feature_table(testing_support::make_matrix(data.points, data.dim), cs);
    std::vector<double> importance, f1, f2;
    // Renumbering follows first appearance; map back through the first member.
    std::vector<int> original(cs.n_clusters, 0);
    for (std::size_t r = 0; r < cs.labels.size(); ++r) original[cs.labels[r]] = data.labels[r];
    for (const auto& row : rows) {
      importance.push_back(data.importance[original[row.cluster_id]]);
      f1.push_back(row.value(d9050));
      f2.push_back(row.value(combo));
    }
    e.tau_d90_50.push_back(stats::kendall_tau_b(importance, f1));
    e.tau_combo.push_back(stats::kendall_tau_b(importance, f2));
  }
  e.seconds = seconds_since(t0);
  return e;
}

Outcome planted_signal(const PlantedEnsemble& e) {
  Check c;
  const auto s = stats::summarize(e.tau_d90_50);
  c.require(s.avg > 0.3, "mean tau-b " + fmt(s.avg) + " <= 0.3 (f_pos " + fmt(s.f_pos, 2) + ")");
  c.require(s.f_pos >= 0.95, "f_pos " + fmt(s.f_pos, 2) + " < 0.95 (mean tau-b " + fmt(s.avg) + ")");
  c.require(e.seconds < 60.0, "runtime " + fmt(e.seconds) + " s");
  if (c.out.pass) c.out.detail = "mean tau-b " + fmt(s.avg) + ", f_pos " + fmt(s.f_pos, 2);
  return c.out;
}

Outcome variant_ordering(const PlantedEnsemble& e) {
  Check c;
  const double base = stats::summarize(e.tau_d90_50).avg;
  const double combo = stats::summarize(e.tau_combo).avg;
  c.require(combo >= base - 0.05, "combo mean tau-b " + fmt(combo) + " < d90_50 mean " + fmt(base) + " - 0.05");
  if (c.out.pass) c.out.detail = "combo " + fmt(combo) + " vs d90_50 " + fmt(base);
  return c.out;
}

Outcome scoring_protocol() {
  Check c;
  // The stub answers from a per-text script keyed by the article text.
  std::map<std::string, std::vector<std::string>> script = {
      {"Plain.", {"3"}},          {"Padded.", {" 4\n"}},     {"Six.", {"6"}},
      {"Escalate.", {"The", "6", "4"}}, {"Never.", {"The", "6", "so"}}};
  std::mutex mutex;
  std::map<std::string, std::size_t> seen;
  testing_support::StubServer server([&](const testing_support::StubServer::Request& r) {
    const auto req = json::parse(r.body);
    const auto content = req["messages"].back()["content"].get<std::string>();
    const auto text = content.substr(content.rfind('\n') + 1);
    std::lock_guard lock(mutex);
    const auto& answers = script.count(text) ? script[text] : script["Plain."];
    const std::size_t i = std::min(seen[text]++, answers.size() - 1);
    return std::make_pair(200, testing_support::chat_response(answers[i]));
  });
  http::ClientOptions co;
  co.base_url = server.base_url();
  auto client = http::make_client(co);

  scoring::ScorerSpec spec;
  spec.kind = scoring::ScorerKind::Llm;
  spec.name = "LLM";
  spec.model = "stub";
  spec.retry = testing_support::no_sleep_retry(2);
  auto chunk = [](const std::string& id, const std::string& text) { return corpus::top_chunk({id, text}); };

  const auto plain = scoring::llm_score(chunk("p", "Plain."), spec, *client);
  c.require(plain.ok() && plain.score == 3.0, "plain \"3\" not accepted");
  const auto first = json::parse(server.requests().front().body);
  c.require(first["temperature"] == 0.0, "first attempt not at temperature 0");
  c.require(first["max_tokens"] == 1, "max_tokens is not 1");
  c.require(scoring::llm_score(chunk("q", "Padded."), spec, *client).score == 4.0, "padded answer rejected");
  const auto six = scoring::llm_score(chunk("s", "Six."), spec, *client);
  c.require(!six.ok() && !six.score, "out-of-scale answer accepted");

  auto escalating = spec;
  escalating.escalate = true;
  const std::size_t before = server.requests().size();
  const auto esc = scoring::llm_score(chunk("e", "Escalate."), escalating, *client);
  const auto reqs = server.requests();
  c.require(esc.ok() && esc.score == 4.0, "escalation did not reach the third answer");
  c.require(reqs.size() - before == 3, "escalation used " + std::to_string(reqs.size() - before) + " attempts");
  if (reqs.size() - before == 3) {
    c.require(json::parse(reqs[before + 1].body)["temperature"] == 0.3 &&
                  json::parse(reqs[before + 2].body)["temperature"] == 0.7,
              "escalation temperatures differ from [0, 0.3, 0.7]");
  }
  const auto never = scoring::llm_score(chunk("n", "Never."), escalating, *client);
  c.require(!never.ok() && !never.score.has_value(), "exhausted schedule fabricated a score");

  // Warm cache: the second pass must not reach the server.
  testing_support::TempDir dir("iun-accept");
  std::vector<corpus::Chunk> chunks;
  for (int i = 0; i < 100; ++i) chunks.push_back(chunk("d" + std::to_string(i), i < 2 ? "Six." : "Plain."));
  scoring::ScoreCache cache(dir / "cache.jsonl");
  scoring::ScoreSummary s1, s2;
  bool warned = false;
  scoring::score_corpus(chunks, spec, &cache, client.get(), &s1, [&](const std::string&) { warned = true; });
  const std::size_t after_first = server.requests().size();
  scoring::ScoreCache reopened(dir / "cache.jsonl");
  scoring::score_corpus(chunks, spec, &reopened, client.get(), &s2, [](const std::string&) {});
  c.require(server.requests().size() == after_first && s2.network_calls == 0, "warm cache hit the network");
  c.require(s1.failed == 2 && warned && s1.warned, "2% failures did not warn");

  chunks.resize(100);
  chunks[1] = chunk("d1", "Plain.");
  bool warned_one = false;
  scoring::ScoreSummary s3;
  scoring::score_corpus(chunks, spec, nullptr, client.get(), &s3, [&](const std::string&) { warned_one = true; });
  c.require(s3.failed == 1 && !warned_one, "1% failures warned");
  if (c.out.pass) c.out.detail = "stub server: t=0/max_tokens=1, strict 1..5, escalation, warm cache 0 calls, 2% warns";
  return c.out;
}

Outcome gap_curves() {
  Check c;
  std::vector<features::FeatureRow> f(5);
  std::vector<scoring::ClusterScore> s(5);
  const double feat[] = {5, 4, 3, 2, 1};
  const double sc[] = {4, 5, 3, 1, 2};
  for (int i = 0; i < 5; ++i) {
    f[i].cluster_id = i;
    f[i].size = 3;
    f[i].d90_50 = feat[i];
    s[i] = {i, sc[i], 0.0, 3};
  }
  const auto d9050 = features::FeatureVariant::parse("d90_50");
  c.require(stats::rank_gaps(f, s, d9050) == std::vector<double>{20, 20, 0, 20, 20}, "hand example gaps differ");
  const auto curve = stats::gap_curve(f, s, d9050);
  c.require(curve.summary.median == 20 && curve.summary.avg == 16 && curve.summary.p97_5 == 20,
            "hand example summary differs");
  SplitMix64 rng(9);
  std::vector<double> gaps(500);
  for (auto& g : gaps) g = rng.uniform() * 100;
  const auto big = stats::gap_curve_from_gaps(gaps);
  for (std::size_t i = 1; i < big.cumulative.size(); ++i)
    c.require(big.cumulative[i] >= big.cumulative[i - 1], "cumulative curve decreases");
  c.require(big.cumulative.back() == 1.0, "cumulative curve does not end at 1");

  const auto summary = read_text_file(kData / "golden" / "gap_summary.csv");
  std::vector<std::string> groups;
  std::istringstream lines(summary);
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() > 2) groups.push_back(cells[2]);
  }
  c.require(groups == std::vector<std::string>{"<=50", "all", ">50"}, "gap summary rows are not <=50 / all / >50");
  if (c.out.pass) c.out.detail = "gaps [20,20,0,20,20], median 20 / avg 16 / p97.5 20, rows <=50 / all / >50";
  return c.out;
}

Outcome validity_filtering() {
  Check c;
  testing_support::TempDir dir("iun-accept");
  // k = 10 gives 10 clusters, under the floor of 20.
  const auto summary = run_fixture(dir, {10, 20}, {"kmeans"});
  c.require(summary.exit_code() == 0, "run failed");
  const auto counts = read_text_file(dir / "out/report/case_counts.csv");
  c.require(counts.find("synthetic,500,synth64,pca-d10,kmeans,2,1,1,0,0") != std::string::npos,
            "case table does not count the rejected case");
  const auto kendall = read_text_file(dir / "out/report/correlations_kendall.csv");
  c.require(kendall.find("all,all,d90_50,LLM,synth64,1,") != std::string::npos,
            "aggregate includes the rejected case");

  // Five clusters of four; cluster 2 keeps only two ok scores.
  clustering::ClusterCase cs;
  cs.algorithm = "kmeans";
  cs.n_clusters = 5;
  std::vector<std::string> ids;
  std::vector<scoring::ScoreRecord> records;
  std::vector<features::FeatureRow> rows;
  for (int k = 0; k < 5; ++k) {
    features::FeatureRow row;
    row.cluster_id = k;
    row.size = 4;
    row.d90_50 = k;
    rows.push_back(row);
    for (int i = 0; i < 4; ++i) {
      cs.labels.push_back(k);
      ids.push_back("c" + std::to_string(k) + "m" + std::to_string(i));
      scoring::ScoreRecord r;
      r.doc_id = ids.back();
      r.scorer = "LLM";
      if (!(k == 2 && i < 2)) {
        r.status = scoring::ScoreStatus::Ok;
        r.score = 1 + (k + i) % 5;
      }
      records.push_back(r);
    }
  }
  const auto scores = scoring::cluster_scores(records, cs, ids);
  const auto outcome = stats::correlate_case(rows, scores, features::FeatureVariant::parse("d90_50"), "LLM");
  const auto* result = std::get_if<stats::CorrelationResult>(&outcome);
  c.require(result && result->n == 4, "cluster with 2 scored members entered the correlation");
  if (c.out.pass) c.out.detail = "k=10 case counted as too_few and excluded; 2-member cluster dropped (n=4)";
  return c.out;
}

std::set<int> parse_expected(int argc, char** argv) {
  std::set<int> out;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) != "--expect-fail") continue;
    std::stringstream ss(argv[i + 1]);
    std::string item;
    while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::set<int> expected = parse_expected(argc, argv);
  const auto ensemble = planted_ensemble();
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"golden fixture reproduction", golden_fixture},
      {"statistics oracles", statistics_oracles},
      {"clustering oracles", clustering_oracles},
      {"percentile/feature oracles", feature_oracles},
      {"planted-signal correlation", [&] { return planted_signal(ensemble); }},
      {"feature-variant ordering", [&] { return variant_ordering(ensemble); }},
      {"scoring protocol conformance", scoring_protocol},
      {"gap-curve properties", gap_curves},
      {"validity filtering", validity_filtering},
  };
  std::set<int> failed;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const int id = static_cast<int>(i) + 1;
    if (!o.pass) failed.insert(id);
    std::cout << (o.pass ? "PASS" : "FAIL") << " #" << id << " " << criteria[i].first << ": " << o.detail << '\n';
  }
  if (!expected.empty()) {
    std::cout << "expected failures:";
    for (int id : expected) std::cout << " #" << id;
    std::cout << (failed == expected ? " (matched)" : " (MISMATCH)") << '\n';
  }
  return failed == expected ? 0 : 1;
}
