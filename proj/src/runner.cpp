#include "iun/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <memory>
#include <mutex>
#include <thread>

#include "iun/clustering.hpp"
#include "iun/corpus.hpp"
#include "iun/error.hpp"
#include "iun/report.hpp"
#include "iun/util.hpp"

namespace iun::runner {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string sanitize(std::string s) {
  for (char& c : s) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
                      c == '-' || c == '_';
    if (!keep) c = '-';
  }
  return s;
}

const std::vector<std::pair<TaskKind, std::string>>& stage_names() {
  static const std::vector<std::pair<TaskKind, std::string>> names = {
      {TaskKind::Chunk, "chunked"},     {TaskKind::Embed, "embedded"},   {TaskKind::Reduce, "reduced"},
      {TaskKind::Linkage, "linked"},    {TaskKind::Cluster, "clustered"}, {TaskKind::Score, "scored"},
      {TaskKind::Feature, "featured"},  {TaskKind::Correlate, "correlated"}};
  return names;
}

TaskKind parse_kind(const std::string& s) {
  for (auto k : {TaskKind::Chunk, TaskKind::Embed, TaskKind::Reduce, TaskKind::Linkage, TaskKind::Cluster,
                 TaskKind::Score, TaskKind::Feature, TaskKind::Correlate}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::Internal, "unknown task kind in manifest: " + s);
}

TaskStatus parse_status(const std::string& s) {
  if (s == "done") return TaskStatus::Done;
  if (s == "failed") return TaskStatus::Failed;
  if (s == "skipped") return TaskStatus::Skipped;
  throw Error(ErrorCode::Internal, "unknown task status in manifest: " + s);
}

std::string cell_key(const std::string& corpus, std::size_t size) { return sanitize(corpus) + "_" + std::to_string(size); }

json labels_json(const clustering::ClusterCase& c) { return c.labels; }

// ---------------------------------------------------------------------------
// Task execution

struct Context {
  const ExperimentConfig& cfg;
  const RunOptions& options;
  std::mutex mutex;
  std::map<std::string, std::unique_ptr<scoring::ScoreCache>> score_caches;
  std::map<std::string, std::unique_ptr<http::Client>> clients;

  fs::path cache(const std::string& rel) const { return cfg.cache_dir / rel; }

  http::Client& client_for(const std::string& endpoint) {
    if (options.client) return *options.client;
    std::lock_guard lock(mutex);
    auto& slot = clients[endpoint];
    if (!slot) slot = http::make_client(http::options_from_env(endpoint));
    return *slot;
  }

  scoring::ScoreCache& score_cache(const std::string& scorer) {
    std::lock_guard lock(mutex);
    auto& slot = score_caches[scorer];
    if (!slot) slot = std::make_unique<scoring::ScoreCache>(cache("scores/" + sanitize(scorer) + ".cache.jsonl"));
    return *slot;
  }
};

const EmbeddingConfig& embedding_config(const ExperimentConfig& cfg, const std::string& name) {
  for (const auto& e : cfg.embeddings) {
    if (e.name == name) return e;
  }
  throw Error(ErrorCode::Internal, "no embedding named " + name);
}

const ReductionConfig& reduction_config(const ExperimentConfig& cfg, const std::string& label) {
  for (const auto& r : cfg.reductions) {
    if (r.spec.label() == label) return r;
  }
  throw Error(ErrorCode::Internal, "no reduction labelled " + label);
}

const scoring::ScorerSpec& scorer_config(const ExperimentConfig& cfg, const std::string& name) {
  for (const auto& s : cfg.scorers) {
    if (s.name == name) return s;
  }
  throw Error(ErrorCode::Internal, "no scorer named " + name);
}

std::vector<std::string> chunk_ids(const std::vector<corpus::Chunk>& chunks) {
  std::vector<std::string> ids;
  ids.reserve(chunks.size());
  for (const auto& c : chunks) ids.push_back(c.doc_id);
  return ids;
}

std::map<std::string, std::string> template_vars(const json& p) {
  std::map<std::string, std::string> vars = {{"corpus", p.at("corpus").get<std::string>()},
                                             {"size", std::to_string(p.at("size").get<std::size_t>())}};
  if (p.contains("embedding")) vars["embedding"] = p.at("embedding").get<std::string>();
  if (p.contains("reduction")) vars["reduction"] = p.at("reduction").get<std::string>();
  if (p.contains("k")) vars["k"] = std::to_string(p.at("k").get<std::size_t>());
  return vars;
}

void run_chunk(const Task& t, Context& ctx, TaskRecord&) {
  const auto& p = t.params;
  corpus::CorpusSpec spec{p.at("corpus").get<std::string>(), ctx.cfg.resolve(p.at("path").get<std::string>()),
                          p.at("size").get<std::size_t>()};
  const auto docs = corpus::load_corpus(spec);
  const auto chunks = corpus::top_chunks(docs, p.at("limit").get<std::size_t>());
  corpus::write_chunks(chunks, ctx.cache(t.outputs.at(0)));
}

void run_embed(const Task& t, Context& ctx, TaskRecord& rec) {
  const auto& p = t.params;
  const auto chunks = corpus::read_chunks(ctx.cache(p.at("chunks").get<std::string>()));
  const auto& ec = embedding_config(ctx.cfg, p.at("embedding").get<std::string>());
  embeddings::EmbeddingMatrix m;
  if (!ec.remote()) {
    const auto path = ctx.cfg.resolve(expand_template(ec.matrix, template_vars(p)));
    m = embeddings::read_matrix(path).select(chunk_ids(chunks));
  } else {
    embeddings::RemoteEmbedOptions opts;
    opts.model = ec.model;
    opts.path = ec.path;
    opts.batch_size = ec.batch_size;
    opts.max_in_flight = ec.max_in_flight;
    opts.checkpoint = ctx.cache(t.outputs.at(0) + ".checkpoint.jsonl");
    embeddings::RemoteEmbedStats st;
    m = embeddings::embed_remote(chunks, opts, ctx.client_for(ec.endpoint), &st);
    rec.provenance = {{"requests", st.requests}, {"retries", st.retries}, {"resumed_rows", st.resumed_rows}};
  }
  m.spec.model = ec.name;
  m.spec.dim = m.cols();
  m.validate();
  embeddings::write_matrix(m, ctx.cache(t.outputs.at(0)));
}

void run_reduce(const Task& t, Context& ctx, TaskRecord&) {
  const auto& p = t.params;
  const auto& rc = reduction_config(ctx.cfg, p.at("reduction").get<std::string>());
  const auto source = embeddings::read_matrix(ctx.cache(p.at("matrix").get<std::string>()));
  embeddings::EmbeddingMatrix out;
  switch (rc.spec.method) {
    case embeddings::ReductionMethod::None:
      out = source;
      out.reduction = rc.spec;
      break;
    case embeddings::ReductionMethod::Pca:
      out = embeddings::reduce_pca(source, rc.spec.out_dim);
      break;
    case embeddings::ReductionMethod::ExternalUmap: {
      const auto path = ctx.cfg.resolve(expand_template(rc.matrix, template_vars(p)));
      out = embeddings::read_matrix(path).select(source.ids);
      if (out.cols() != rc.spec.out_dim) {
        throw Error(ErrorCode::DimensionDrift, "reduced matrix " + path.string() + " has " + std::to_string(out.cols()) +
                                                   " columns, expected " + std::to_string(rc.spec.out_dim));
      }
      out.reduction = rc.spec;
      break;
    }
  }
  out.spec.model = source.spec.model;
  out.validate();
  embeddings::write_matrix(out, ctx.cache(t.outputs.at(0)));
}

void run_linkage(const Task& t, Context& ctx, TaskRecord&) {
  const auto m = embeddings::read_matrix(ctx.cache(t.params.at("matrix").get<std::string>()));
  const auto d = clustering::ward_linkage(m);
  json merges = json::array();
  for (const auto& mg : d.merges) merges.push_back({mg.a, mg.b, mg.cost, mg.height, mg.size});
  write_text_file_atomic(ctx.cache(t.outputs.at(0)), json{{"n", d.n}, {"merges", merges}}.dump() + "\n");
}

clustering::Dendrogram read_dendrogram(const fs::path& path) {
  const json j = json::parse(read_text_file(path));
  clustering::Dendrogram d;
  d.n = j.at("n").get<std::size_t>();
  for (const auto& m : j.at("merges")) {
    d.merges.push_back({m.at(0).get<std::size_t>(), m.at(1).get<std::size_t>(), m.at(2).get<double>(),
                        m.at(3).get<double>(), m.at(4).get<std::size_t>()});
  }
  return d;
}

void run_cluster(const Task& t, Context& ctx, TaskRecord& rec) {
  const auto& p = t.params;
  const auto m = embeddings::read_matrix(ctx.cache(p.at("matrix").get<std::string>()));
  const std::string algorithm = p.at("algorithm").get<std::string>();
  const std::size_t k = p.at("k").get<std::size_t>();
  clustering::ClusterCase c;
  if (algorithm == "kmeans") {
    c = clustering::kmeans(m, k, p.at("seed").get<std::uint64_t>());
  } else if (algorithm == "ward") {
    c = clustering::ward_from_dendrogram(m, read_dendrogram(ctx.cache(p.at("linkage").get<std::string>())), k);
  } else {
    const auto path = ctx.cfg.resolve(expand_template(p.at("assignments").get<std::string>(), template_vars(p)));
    c = clustering::load_assignments(path, m);
    // The configured label names the case, whatever the file claims.
    c.algorithm = algorithm;
    c.target_k = k;
  }
  c.corpus = {p.at("corpus").get<std::string>(), p.at("path").get<std::string>(), p.at("size").get<std::size_t>()};
  c.embedding = m.spec;
  c.reduction = m.reduction;
  const auto validity = clustering::validate_case(c, ctx.cfg.min_clusters, ctx.cfg.max_clusters);
  const std::string status = validity.valid ? "valid" : validity.reason;

  clustering::write_assignments(c, m.ids, ctx.cache(t.outputs.at(0)));
  json doc = json::parse(clustering::case_manifest_json(c));
  doc["status"] = status;
  doc["labels"] = labels_json(c);
  write_text_file_atomic(ctx.cache(t.outputs.at(1)), doc.dump() + "\n");
  rec.provenance = {{"n_clusters", c.n_clusters}, {"status", status}};
}

clustering::ClusterCase read_case(const fs::path& path, std::string& status) {
  const json j = json::parse(read_text_file(path));
  clustering::ClusterCase c;
  c.corpus.name = j.at("corpus").at("name").get<std::string>();
  c.corpus.path = j.at("corpus").at("path").get<std::string>();
  c.corpus.size = j.at("corpus").at("size").get<std::size_t>();
  c.embedding.model = j.at("embedding").at("model").get<std::string>();
  c.embedding.dim = j.at("embedding").at("dim").get<std::size_t>();
  c.reduction = j.at("reduction").get<embeddings::ReductionSpec>();
  c.algorithm = j.at("algorithm").get<std::string>();
  c.target_k = j.at("target_k").get<std::size_t>();
  c.n_clusters = j.at("n_clusters").get<std::size_t>();
  if (!j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
  c.labels = j.at("labels").get<std::vector<int>>();
  status = j.at("status").get<std::string>();
  return c;
}

void run_feature(const Task& t, Context& ctx, TaskRecord&) {
  const auto& p = t.params;
  std::string status;
  const auto c = read_case(ctx.cache(p.at("case").get<std::string>()), status);
  json out = {{"status", status}, {"rows", json::array()}};
  if (status == "valid") {
    const auto m = embeddings::read_matrix(ctx.cache(p.at("matrix").get<std::string>()));
    const auto rows = features::feature_table(m, c);
    out["rows"] = report::feature_rows_to_json(rows);
    write_text_file_atomic(ctx.cache(t.outputs.at(1)), features::feature_table_csv(rows));
  } else {
    write_text_file_atomic(ctx.cache(t.outputs.at(1)), features::feature_table_csv({}));
  }
  write_text_file_atomic(ctx.cache(t.outputs.at(0)), out.dump() + "\n");
}

void run_score(const Task& t, Context& ctx, TaskRecord& rec) {
  const auto& p = t.params;
  const auto chunks = corpus::read_chunks(ctx.cache(p.at("chunks").get<std::string>()));
  scoring::ScorerSpec spec = scorer_config(ctx.cfg, p.at("scorer").get<std::string>());
  scoring::ScoreSummary summary;
  std::vector<scoring::ScoreRecord> records;
  if (spec.kind == scoring::ScorerKind::File) {
    spec.file = ctx.cfg.resolve(spec.file.generic_string());
    records = scoring::score_corpus(chunks, spec, nullptr, nullptr, &summary, ctx.options.log);
  } else {
    records = scoring::score_corpus(chunks, spec, &ctx.score_cache(spec.name), &ctx.client_for(spec.endpoint), &summary,
                                    ctx.options.log);
  }
  std::string out;
  for (const auto& r : records) out += scoring::to_jsonl_line(r) + "\n";
  write_text_file_atomic(ctx.cache(t.outputs.at(0)), out);
  rec.provenance = {{"total", summary.total},
                    {"ok", summary.ok},
                    {"failed", summary.failed},
                    {"transport_failures", summary.transport_failures},
                    {"failure_fraction", summary.failure_fraction},
                    {"warned", summary.warned}};
}

void run_correlate(const Task& t, Context& ctx, TaskRecord&) {
  const auto& p = t.params;
  std::string status;
  const auto c = read_case(ctx.cache(p.at("case").get<std::string>()), status);
  const json fj = json::parse(read_text_file(ctx.cache(p.at("features").get<std::string>())));
  const auto rows = report::feature_rows_from_json(fj.at("rows"));
  const auto& spec = scorer_config(ctx.cfg, p.at("scorer").get<std::string>());
  const auto records = scoring::load_scores(ctx.cache(p.at("scores").get<std::string>()), spec);
  const auto chunks = corpus::read_chunks(ctx.cache(p.at("chunks").get<std::string>()));
  const auto ids = chunk_ids(chunks);

  stats::CaseCoordinates coords;
  coords.case_id = c.case_id();
  coords.dataset = c.corpus.name;
  coords.data_size = c.corpus.size;
  coords.embedding = c.embedding.model;
  coords.reduction = c.reduction.label();
  coords.algorithm = c.algorithm;
  coords.target_k = c.target_k;
  coords.n_clusters = c.n_clusters;

  const bool valid = status == "valid";
  std::vector<scoring::ClusterScore> scores;
  if (valid) scores = scoring::cluster_scores(records, c, ids);
  const auto variants = ctx.cfg.correlated_features();
  const auto cell = report::compute_cell(coords, spec.name, valid, valid ? std::string{} : status, rows,
                                         std::move(scores), variants);
  write_text_file_atomic(ctx.cache(t.outputs.at(0)), report::to_json(cell).dump() + "\n");
}

void execute(const Task& t, Context& ctx, TaskRecord& rec) {
  switch (t.kind) {
    case TaskKind::Chunk: return run_chunk(t, ctx, rec);
    case TaskKind::Embed: return run_embed(t, ctx, rec);
    case TaskKind::Reduce: return run_reduce(t, ctx, rec);
    case TaskKind::Linkage: return run_linkage(t, ctx, rec);
    case TaskKind::Cluster: return run_cluster(t, ctx, rec);
    case TaskKind::Score: return run_score(t, ctx, rec);
    case TaskKind::Feature: return run_feature(t, ctx, rec);
    case TaskKind::Correlate: return run_correlate(t, ctx, rec);
  }
}

void write_manifest(const ExperimentConfig& cfg, const RunManifest& m) {
  write_text_file_atomic(manifest_path(cfg), m.to_json().dump(2) + "\n");
}

bool outputs_present(const ExperimentConfig& cfg, const std::vector<std::string>& outputs) {
  return std::all_of(outputs.begin(), outputs.end(),
                     [&](const std::string& o) { return fs::exists(cfg.cache_dir / o); });
}

}  // namespace

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Chunk: return "chunk";
    case TaskKind::Embed: return "embed";
    case TaskKind::Reduce: return "reduce";
    case TaskKind::Linkage: return "linkage";
    case TaskKind::Cluster: return "cluster";
    case TaskKind::Score: return "score";
    case TaskKind::Feature: return "feature";
    case TaskKind::Correlate: return "correlate";
  }
  return "chunk";
}

std::string to_string(TaskStatus status) {
  switch (status) {
    case TaskStatus::Done: return "done";
    case TaskStatus::Failed: return "failed";
    case TaskStatus::Skipped: return "skipped";
  }
  return "failed";
}

std::size_t Plan::count(TaskKind kind) const {
  return static_cast<std::size_t>(std::count_if(tasks.begin(), tasks.end(), [kind](const Task& t) { return t.kind == kind; }));
}

std::size_t Plan::runnable(TaskKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(tasks.begin(), tasks.end(), [kind](const Task& t) { return t.kind == kind && !t.cached; }));
}

const Task* Plan::find(const std::string& id) const {
  for (const auto& t : tasks) {
    if (t.id == id) return &t;
  }
  return nullptr;
}

std::map<std::string, std::string> RunManifest::stage_status() const {
  std::map<std::string, std::string> out;
  for (const auto& [kind, name] : stage_names()) {
    std::size_t total = 0;
    std::size_t done = 0;
    std::size_t failed = 0;
    for (const auto& [id, r] : tasks) {
      if (r.kind != kind) continue;
      ++total;
      if (r.status == TaskStatus::Done) ++done;
      if (r.status == TaskStatus::Failed) ++failed;
    }
    if (total == 0) {
      out[name] = "pending";
    } else if (done == total) {
      out[name] = "complete";
    } else if (done == 0) {
      out[name] = failed > 0 ? "failed" : "skipped";
    } else {
      out[name] = "partial";
    }
  }
  out["reported"] = reported ? "complete" : "pending";
  return out;
}

json RunManifest::to_json() const {
  json tj = json::object();
  for (const auto& [id, r] : tasks) {
    json e = {{"kind", runner::to_string(r.kind)},
              {"status", runner::to_string(r.status)},
              {"outputs", r.outputs},
              {"params", r.params}};
    if (!r.error.empty()) e["error"] = r.error;
    if (!r.provenance.is_null()) e["provenance"] = r.provenance;
    tj[id] = std::move(e);
  }
  return {{"config_hash", config_hash}, {"stages", stage_status()}, {"reported", reported}, {"tasks", tj}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.config_hash = j.at("config_hash").get<std::string>();
  m.reported = j.value("reported", false);
  for (const auto& [id, e] : j.at("tasks").items()) {
    TaskRecord r;
    r.kind = parse_kind(e.at("kind").get<std::string>());
    r.status = parse_status(e.at("status").get<std::string>());
    r.outputs = e.at("outputs").get<std::vector<std::string>>();
    r.params = e.at("params");
    r.error = e.value("error", std::string{});
    if (e.contains("provenance")) r.provenance = e.at("provenance");
    m.tasks.emplace(id, std::move(r));
  }
  return m;
}

std::filesystem::path manifest_path(const ExperimentConfig& cfg) { return cfg.output_dir / "manifest.json"; }

std::optional<RunManifest> read_manifest(const std::filesystem::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    return RunManifest::from_json(json::parse(read_text_file(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, "manifest " + path.string() + " is unreadable: " + e.what(), path.string());
  }
}

Plan enumerate_grid(const ExperimentConfig& cfg) {
  cfg.validate();
  Plan plan;
  plan.config_hash = cfg.hash();
  const bool any_ward = std::find(cfg.algorithms.begin(), cfg.algorithms.end(), "ward") != cfg.algorithms.end();

  for (const auto& ds : cfg.datasets) {
    for (std::size_t size : cfg.sizes) {
      const std::string cs = cell_key(ds.name, size);
      const json base = {{"corpus", ds.name}, {"path", ds.path}, {"size", size}};
      const std::string chunk_id = "chunk/" + cs;
      const std::string chunks_out = "chunks/" + cs + ".jsonl";
      {
        json p = base;
        p["limit"] = cfg.chunk_limit;
        plan.tasks.push_back({chunk_id, TaskKind::Chunk, {}, {chunks_out}, p});
      }
      std::map<std::string, std::string> score_ids;
      for (const auto& sc : cfg.scorers) {
        const std::string id = "score/" + cs + "/" + sanitize(sc.name);
        json p = base;
        p["scorer"] = sc.name;
        p["chunks"] = chunks_out;
        plan.tasks.push_back({id, TaskKind::Score, {chunk_id}, {"scores/" + sanitize(sc.name) + "/" + cs + ".jsonl"}, p});
        score_ids[sc.name] = id;
      }
      for (const auto& emb : cfg.embeddings) {
        const std::string ce = cs + "_" + sanitize(emb.name);
        const std::string embed_id = "embed/" + ce;
        const std::string embed_out = "embeddings/" + ce + ".emb";
        {
          json p = base;
          p["embedding"] = emb.name;
          p["chunks"] = chunks_out;
          plan.tasks.push_back({embed_id, TaskKind::Embed, {chunk_id}, {embed_out}, p});
        }
        for (const auto& red : cfg.reductions) {
          const std::string label = red.spec.label();
          const std::string cr = ce + "_" + sanitize(label);
          const std::string reduce_id = "reduce/" + cr;
          const std::string reduced_out = "reduced/" + cr + ".emb";
          json rp = base;
          rp["embedding"] = emb.name;
          rp["reduction"] = label;
          {
            json p = rp;
            p["matrix"] = embed_out;
            plan.tasks.push_back({reduce_id, TaskKind::Reduce, {embed_id}, {reduced_out}, p});
          }
          const std::string linkage_id = "linkage/" + cr;
          const std::string linkage_out = "linkage/" + cr + ".json";
          if (any_ward) {
            json p = rp;
            p["matrix"] = reduced_out;
            plan.tasks.push_back({linkage_id, TaskKind::Linkage, {reduce_id}, {linkage_out}, p});
          }

          std::vector<std::pair<std::string, std::string>> algos;  // name, assignments template
          for (const auto& a : cfg.algorithms) algos.emplace_back(a, "");
          for (const auto& e : cfg.external) algos.emplace_back("external:" + e.label, e.assignments);

          for (const auto& [algo, assignments] : algos) {
            for (std::size_t k : cfg.target_ks) {
              clustering::ClusterCase probe;
              probe.corpus = {ds.name, ds.path, size};
              probe.embedding.model = emb.name;
              probe.reduction = red.spec;
              probe.algorithm = algo;
              probe.target_k = k;
              const std::string case_id = probe.case_id();

              json p = rp;
              p["algorithm"] = algo;
              p["k"] = k;
              p["matrix"] = reduced_out;
              std::vector<std::string> deps = {reduce_id};
              if (algo == "kmeans") p["seed"] = cfg.seed;
              if (algo == "ward") {
                p["linkage"] = linkage_out;
                deps.push_back(linkage_id);
              }
              if (!assignments.empty()) p["assignments"] = assignments;
              const std::string cluster_id = "cluster/" + case_id;
              const std::string case_out = "cases/" + case_id + ".json";
              plan.tasks.push_back(
                  {cluster_id, TaskKind::Cluster, deps, {"cases/" + case_id + ".csv", case_out}, p});

              const std::string feature_id = "feature/" + case_id;
              const std::string feature_out = "features/" + case_id + ".json";
              plan.tasks.push_back({feature_id,
                                    TaskKind::Feature,
                                    {cluster_id, reduce_id},
                                    {feature_out, "features/" + case_id + ".csv"},
                                    {{"case", case_out}, {"matrix", reduced_out}}});

              for (const auto& sc : cfg.scorers) {
                const std::string sid = sanitize(sc.name);
                plan.tasks.push_back({"correlate/" + case_id + "/" + sid,
                                      TaskKind::Correlate,
                                      {feature_id, score_ids.at(sc.name), chunk_id},
                                      {"correlations/" + case_id + "__" + sid + ".json"},
                                      {{"case", case_out},
                                       {"features", feature_out},
                                       {"scorer", sc.name},
                                       {"scores", "scores/" + sid + "/" + cs + ".jsonl"},
                                       {"chunks", chunks_out}}});
              }
            }
          }
        }
      }
    }
  }
  return plan;
}

Plan plan(const ExperimentConfig& cfg) {
  Plan p = enumerate_grid(cfg);
  const auto existing = read_manifest(manifest_path(cfg));
  if (!existing) return p;
  if (existing->config_hash != p.config_hash) {
    throw Error(ErrorCode::ConfigHashMismatch,
                "output directory " + cfg.output_dir.string() + " holds a different experiment (config hash " +
                    existing->config_hash + ", this config " + p.config_hash + ")",
                existing->config_hash);
  }
  for (auto& t : p.tasks) {
    const auto it = existing->tasks.find(t.id);
    t.cached = it != existing->tasks.end() && it->second.status == TaskStatus::Done && it->second.params == t.params &&
               outputs_present(cfg, t.outputs);
  }
  return p;
}

std::set<TaskKind> kinds_through(const std::string& stage) {
  using K = TaskKind;
  if (stage == "chunk") return {K::Chunk};
  if (stage == "embed") return {K::Chunk, K::Embed};
  if (stage == "reduce") return {K::Chunk, K::Embed, K::Reduce};
  if (stage == "cluster") return {K::Chunk, K::Embed, K::Reduce, K::Linkage, K::Cluster};
  if (stage == "features") return {K::Chunk, K::Embed, K::Reduce, K::Linkage, K::Cluster, K::Feature};
  if (stage == "score") return {K::Chunk, K::Score};
  if (stage == "correlate" || stage == "run") {
    return {K::Chunk, K::Embed, K::Reduce, K::Linkage, K::Cluster, K::Score, K::Feature, K::Correlate};
  }
  throw Error(ErrorCode::InvalidArgument, "unknown stage: " + stage, stage);
}

RunSummary run(const ExperimentConfig& cfg, const Plan& plan, const RunOptions& options) {
  if (plan.config_hash != cfg.hash()) {
    throw Error(ErrorCode::ConfigHashMismatch, "plan was made for a different configuration");
  }
  RunSummary summary;
  RunManifest manifest = read_manifest(manifest_path(cfg)).value_or(RunManifest{});
  if (!manifest.config_hash.empty() && manifest.config_hash != plan.config_hash) {
    throw Error(ErrorCode::ConfigHashMismatch, "output directory holds a different experiment", manifest.config_hash);
  }
  manifest.config_hash = plan.config_hash;
  fs::create_directories(cfg.output_dir);
  fs::create_directories(cfg.cache_dir);

  const auto selected = [&](TaskKind k) { return options.kinds.empty() || options.kinds.count(k) > 0; };
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };

  enum class State { Pending, Running, Done, Failed, Skipped, Unselected };
  const std::size_t n = plan.tasks.size();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) index[plan.tasks[i].id] = i;
  std::vector<State> state(n, State::Pending);
  std::vector<std::size_t> waiting(n, 0);
  std::vector<std::vector<std::size_t>> dependents(n);

  for (std::size_t i = 0; i < n; ++i) {
    const Task& t = plan.tasks[i];
    if (t.cached) {
      state[i] = State::Done;
      ++summary.reused;
    } else if (!selected(t.kind)) {
      state[i] = State::Unselected;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& d : plan.tasks[i].deps) dependents[index.at(d)].push_back(i);
  }

  std::mutex mutex;
  std::condition_variable cv;
  std::set<std::size_t> ready;
  std::size_t outstanding = 0;
  auto last_write = std::chrono::steady_clock::now();

  // Marks i and everything downstream of it skipped (caller holds the lock).
  std::function<void(std::size_t, const std::string&)> skip = [&](std::size_t i, const std::string& why) {
    if (state[i] != State::Pending) return;
    state[i] = State::Skipped;
    --outstanding;
    ready.erase(i);
    ++summary.skipped;
    const Task& t = plan.tasks[i];
    TaskRecord rec{t.kind, TaskStatus::Skipped, why, t.outputs, t.params, nullptr};
    manifest.tasks[t.id] = std::move(rec);
    for (auto d : dependents[i]) skip(d, "upstream task " + t.id + " did not complete");
  };

  {
    std::lock_guard lock(mutex);
    for (std::size_t i = 0; i < n; ++i) {
      if (state[i] == State::Pending) ++outstanding;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (state[i] != State::Pending) continue;
      std::size_t w = 0;
      std::string blocked;
      for (const auto& d : plan.tasks[i].deps) {
        const auto s = state[index.at(d)];
        if (s == State::Pending) ++w;
        if (s == State::Unselected) blocked = d;
      }
      if (!blocked.empty()) {
        skip(i, "upstream task " + blocked + " has not run");
        continue;
      }
      waiting[i] = w;
      if (w == 0) ready.insert(i);
    }
  }

  auto finish = [&](std::size_t i, TaskRecord rec) {
    std::lock_guard lock(mutex);
    const bool ok = rec.status == TaskStatus::Done;
    state[i] = ok ? State::Done : State::Failed;
    --outstanding;
    ++summary.executed;
    if (!ok) ++summary.failed;
    manifest.tasks[plan.tasks[i].id] = std::move(rec);
    for (auto d : dependents[i]) {
      if (state[d] != State::Pending) continue;
      if (!ok) {
        skip(d, "upstream task " + plan.tasks[i].id + " failed");
      } else if (--waiting[d] == 0) {
        ready.insert(d);
      }
    }
    const auto now = std::chrono::steady_clock::now();
    if (now - last_write >= std::chrono::seconds(1)) {
      write_manifest(cfg, manifest);
      last_write = now;
    }
    cv.notify_all();
  };

  Context ctx{cfg, options, {}, {}, {}};
  std::exception_ptr fatal;
  auto worker = [&] {
    for (;;) {
      std::size_t i = 0;
      {
        std::unique_lock lock(mutex);
        cv.wait(lock, [&] { return !ready.empty() || outstanding == 0 || fatal; });
        if (ready.empty() || fatal) return;
        i = *ready.begin();
        ready.erase(ready.begin());
        state[i] = State::Running;
      }
      const Task& t = plan.tasks[i];
      TaskRecord rec{t.kind, TaskStatus::Done, {}, t.outputs, t.params, nullptr};
      try {
        execute(t, ctx, rec);
        log("done " + t.id);
      } catch (const Error& e) {
        rec.status = TaskStatus::Failed;
        rec.error = std::string(iun::to_string(e.code())) + ": " + e.what();
        log("failed " + t.id + ": " + rec.error);
      } catch (const fs::filesystem_error& e) {
        std::lock_guard lock(mutex);
        fatal = std::current_exception();
        cv.notify_all();
        return;
      } catch (const std::exception& e) {
        rec.status = TaskStatus::Failed;
        rec.error = std::string("error: ") + e.what();
        log("failed " + t.id + ": " + rec.error);
      }
      finish(i, std::move(rec));
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.parallelism, std::max<std::size_t>(1, outstanding)));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  write_manifest(cfg, manifest);
  if (fatal) std::rethrow_exception(fatal);

  const bool all_kinds = options.kinds.empty() || selected(TaskKind::Correlate);
  if (options.report && all_kinds) {
    const bool any_cell = std::any_of(manifest.tasks.begin(), manifest.tasks.end(), [](const auto& kv) {
      return kv.second.kind == TaskKind::Correlate && kv.second.status == TaskStatus::Done;
    });
    if (any_cell) {
      report::write_report(cfg, manifest);
      manifest.reported = true;
      summary.report_written = true;
      write_manifest(cfg, manifest);
    }
  }
  summary.manifest = std::move(manifest);
  return summary;
}

}  // namespace iun::runner
