#include <algorithm>
#include <initializer_list>
#include <set>

#include <toml.hpp>

#include "iun/error.hpp"
#include "iun/runner.hpp"
#include "iun/util.hpp"

namespace iun::runner {

namespace {

using json = nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::Config, "config " + path + ": " + what, path);
}

void check_keys(const toml::table& t, std::initializer_list<std::string_view> allowed, const std::string& path) {
  for (const auto& [key, _] : t) {
    if (std::find(allowed.begin(), allowed.end(), key.str()) == allowed.end()) {
      fail(path.empty() ? std::string(key.str()) : path + "." + std::string(key.str()), "unknown key");
    }
  }
}

const toml::table* table_at(const toml::table& t, std::string_view key, const std::string& path) {
  const toml::node* n = t.get(key);
  if (!n) return nullptr;
  if (!n->is_table()) fail(path, "expected a table");
  return n->as_table();
}

const toml::array* array_at(const toml::table& t, std::string_view key, const std::string& path) {
  const toml::node* n = t.get(key);
  if (!n) return nullptr;
  if (!n->is_array()) fail(path, "expected an array");
  return n->as_array();
}

template <class T>
std::optional<T> value_at(const toml::table& t, std::string_view key, const std::string& path) {
  const toml::node* n = t.get(key);
  if (!n) return std::nullopt;
  if constexpr (std::is_same_v<T, std::string>) {
    if (!n->is_string()) fail(path, "expected a string");
    return n->as_string()->get();
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!n->is_boolean()) fail(path, "expected a boolean");
    return n->as_boolean()->get();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!n->is_number()) fail(path, "expected a number");
    return n->value<double>();
  } else {
    if (!n->is_integer()) fail(path, "expected an integer");
    const auto v = n->as_integer()->get();
    if (v < 0) fail(path, "must not be negative");
    return static_cast<T>(v);
  }
}

template <class T>
T value_or(const toml::table& t, std::string_view key, const std::string& path, T fallback) {
  return value_at<T>(t, key, path).value_or(std::move(fallback));
}

template <class T>
std::vector<T> list_at(const toml::table& t, std::string_view key, const std::string& path, std::vector<T> fallback) {
  const auto* arr = array_at(t, key, path);
  if (!arr) return fallback;
  std::vector<T> out;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    const toml::node& n = *arr->get(i);
    const std::string p = path + "[" + std::to_string(i) + "]";
    if constexpr (std::is_same_v<T, std::string>) {
      if (!n.is_string()) fail(p, "expected a string");
      out.push_back(n.as_string()->get());
    } else if constexpr (std::is_same_v<T, double>) {
      if (!n.is_number()) fail(p, "expected a number");
      out.push_back(*n.value<double>());
    } else {
      if (!n.is_integer() || n.as_integer()->get() < 0) fail(p, "expected a non-negative integer");
      out.push_back(static_cast<T>(n.as_integer()->get()));
    }
  }
  return out;
}

template <class Fn>
void each_table(const toml::table& t, std::string_view key, const std::string& path, Fn&& fn) {
  const auto* arr = array_at(t, key, path);
  if (!arr) return;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    const toml::node& n = *arr->get(i);
    if (!n.is_table()) fail(p, "expected a table");
    fn(*n.as_table(), p);
  }
}

scoring::ScorerSpec parse_scorer(const toml::table& t, const std::string& p) {
  check_keys(t,
             {"name", "kind", "model", "endpoint", "path", "file", "scale", "prompt_variant", "escalate", "temperatures",
              "max_attempts", "max_in_flight", "rate_limit", "burst"},
             p);
  scoring::ScorerSpec s;
  s.name = value_or<std::string>(t, "name", p + ".name", "");
  try {
    s.kind = scoring::parse_scorer_kind(value_or<std::string>(t, "kind", p + ".kind", "llm"));
    s.prompt_variant = scoring::parse_prompt_variant(value_or<std::string>(t, "prompt_variant", p + ".prompt_variant", "user"));
  } catch (const Error& e) {
    fail(p, e.what());
  }
  s.model = value_or<std::string>(t, "model", p + ".model", "");
  s.endpoint = value_or<std::string>(t, "endpoint", p + ".endpoint", "");
  s.path = value_or<std::string>(t, "path", p + ".path", "");
  s.file = value_or<std::string>(t, "file", p + ".file", "");
  const auto scale = value_or<std::string>(t, "scale", p + ".scale", "likert");
  if (scale == "likert") {
    s.file_scale = scoring::ScoreScale::Likert;
  } else if (scale == "real") {
    s.file_scale = scoring::ScoreScale::Real;
  } else {
    fail(p + ".scale", "expected \"likert\" or \"real\"");
  }
  s.escalate = value_or<bool>(t, "escalate", p + ".escalate", false);
  s.temperatures = list_at<double>(t, "temperatures", p + ".temperatures", s.temperatures);
  s.retry.max_attempts = value_or<std::size_t>(t, "max_attempts", p + ".max_attempts", s.retry.max_attempts);
  s.max_in_flight = value_or<std::size_t>(t, "max_in_flight", p + ".max_in_flight", s.max_in_flight);
  s.rate_limit = value_or<double>(t, "rate_limit", p + ".rate_limit", 0.0);
  s.burst = value_or<double>(t, "burst", p + ".burst", 1.0);
  return s;
}

template <class T, class Key>
void require_unique(const std::vector<T>& items, Key key, const std::string& path) {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string k = key(items[i]);
    if (!seen.insert(k).second) fail(path + "[" + std::to_string(i) + "]", "duplicate name \"" + k + "\"");
  }
}

}  // namespace

std::string expand_template(const std::string& tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      if (close == std::string::npos) throw Error(ErrorCode::Config, "unterminated placeholder in \"" + tmpl + "\"", tmpl);
      const std::string name = tmpl.substr(i + 1, close - i - 1);
      const auto it = vars.find(name);
      if (it == vars.end()) throw Error(ErrorCode::Config, "unknown placeholder {" + name + "} in \"" + tmpl + "\"", tmpl);
      out += it->second;
      i = close + 1;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

ExperimentConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    throw Error(ErrorCode::Config,
                "config is not valid TOML (line " + std::to_string(e.source().begin.line) + "): " +
                    std::string(e.description()));
  }
  check_keys(root, {"corpora", "embeddings", "reductions", "clustering", "scorers", "features", "run"}, "");

  ExperimentConfig cfg;
  cfg.base_dir = base_dir;

  if (const auto* t = table_at(root, "corpora", "corpora")) {
    check_keys(*t, {"sizes", "datasets"}, "corpora");
    cfg.sizes = list_at<std::size_t>(*t, "sizes", "corpora.sizes", cfg.sizes);
    each_table(*t, "datasets", "corpora.datasets", [&](const toml::table& d, const std::string& p) {
      check_keys(d, {"name", "path"}, p);
      cfg.datasets.push_back({value_or<std::string>(d, "name", p + ".name", ""),
                              value_or<std::string>(d, "path", p + ".path", "")});
    });
  }

  if (const auto* t = table_at(root, "embeddings", "embeddings")) {
    check_keys(*t, {"models"}, "embeddings");
    each_table(*t, "models", "embeddings.models", [&](const toml::table& e, const std::string& p) {
      check_keys(e, {"name", "matrix", "endpoint", "model", "path", "batch_size", "max_in_flight"}, p);
      EmbeddingConfig ec;
      ec.name = value_or<std::string>(e, "name", p + ".name", "");
      ec.matrix = value_or<std::string>(e, "matrix", p + ".matrix", "");
      ec.endpoint = value_or<std::string>(e, "endpoint", p + ".endpoint", "");
      ec.model = value_or<std::string>(e, "model", p + ".model", "");
      ec.path = value_or<std::string>(e, "path", p + ".path", ec.path);
      ec.batch_size = value_or<std::size_t>(e, "batch_size", p + ".batch_size", ec.batch_size);
      ec.max_in_flight = value_or<std::size_t>(e, "max_in_flight", p + ".max_in_flight", ec.max_in_flight);
      cfg.embeddings.push_back(std::move(ec));
    });
  }

  if (const auto* t = table_at(root, "reductions", "reductions")) {
    check_keys(*t, {"variants"}, "reductions");
    each_table(*t, "variants", "reductions.variants", [&](const toml::table& r, const std::string& p) {
      check_keys(r, {"method", "out_dim", "n_neighbors", "min_dist", "matrix"}, p);
      ReductionConfig rc;
      try {
        rc.spec.method = embeddings::parse_reduction_method(value_or<std::string>(r, "method", p + ".method", "none"));
      } catch (const Error& e) {
        fail(p + ".method", e.what());
      }
      rc.spec.out_dim = value_or<std::size_t>(r, "out_dim", p + ".out_dim", 0);
      if (auto v = value_at<std::size_t>(r, "n_neighbors", p + ".n_neighbors")) rc.spec.n_neighbors = *v;
      if (auto v = value_at<double>(r, "min_dist", p + ".min_dist")) rc.spec.min_dist = *v;
      rc.matrix = value_or<std::string>(r, "matrix", p + ".matrix", "");
      cfg.reductions.push_back(std::move(rc));
    });
  }
  if (cfg.reductions.empty()) cfg.reductions.push_back({});

  if (const auto* t = table_at(root, "clustering", "clustering")) {
    check_keys(*t, {"algorithms", "target_ks", "external", "min_clusters", "max_clusters"}, "clustering");
    cfg.algorithms = list_at<std::string>(*t, "algorithms", "clustering.algorithms", cfg.algorithms);
    cfg.target_ks = list_at<std::size_t>(*t, "target_ks", "clustering.target_ks", cfg.target_ks);
    cfg.min_clusters = value_or<std::size_t>(*t, "min_clusters", "clustering.min_clusters", cfg.min_clusters);
    cfg.max_clusters = value_or<std::size_t>(*t, "max_clusters", "clustering.max_clusters", cfg.max_clusters);
    each_table(*t, "external", "clustering.external", [&](const toml::table& e, const std::string& p) {
      check_keys(e, {"label", "assignments"}, p);
      cfg.external.push_back({value_or<std::string>(e, "label", p + ".label", ""),
                              value_or<std::string>(e, "assignments", p + ".assignments", "")});
    });
  }

  if (const auto* t = table_at(root, "scorers", "scorers")) {
    check_keys(*t, {"list"}, "scorers");
    each_table(*t, "list", "scorers.list",
               [&](const toml::table& s, const std::string& p) { cfg.scorers.push_back(parse_scorer(s, p)); });
  }

  if (const auto* t = table_at(root, "features", "features")) {
    check_keys(*t, {"variants", "sweep"}, "features");
    cfg.features = list_at<std::string>(*t, "variants", "features.variants", cfg.features);
    cfg.feature_sweep = value_or<bool>(*t, "sweep", "features.sweep", false);
  }

  if (const auto* t = table_at(root, "run", "run")) {
    check_keys(*t, {"seed", "output_dir", "cache_dir", "parallelism", "chunk_limit"}, "run");
    cfg.seed = value_or<std::uint64_t>(*t, "seed", "run.seed", 0);
    cfg.output_dir = value_or<std::string>(*t, "output_dir", "run.output_dir", "out");
    cfg.cache_dir = value_or<std::string>(*t, "cache_dir", "run.cache_dir", "cache");
    cfg.parallelism = value_or<std::size_t>(*t, "parallelism", "run.parallelism", 1);
    cfg.chunk_limit = value_or<std::size_t>(*t, "chunk_limit", "run.chunk_limit", cfg.chunk_limit);
  }
  if (cfg.output_dir.is_relative()) cfg.output_dir = base_dir / cfg.output_dir;
  if (cfg.cache_dir.is_relative()) cfg.cache_dir = base_dir / cfg.cache_dir;

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  return parse_config(text, std::filesystem::absolute(path).parent_path());
}

void ExperimentConfig::validate() const {
  if (datasets.empty()) fail("corpora.datasets", "at least one dataset is required");
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    const std::string p = "corpora.datasets[" + std::to_string(i) + "]";
    if (datasets[i].name.empty()) fail(p + ".name", "must not be empty");
    if (datasets[i].path.empty()) fail(p + ".path", "must not be empty");
  }
  require_unique(datasets, [](const DatasetConfig& d) { return d.name; }, "corpora.datasets");

  if (sizes.empty()) fail("corpora.sizes", "at least one size is required");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) fail("corpora.sizes[" + std::to_string(i) + "]", "must be positive");
  }

  if (embeddings.empty()) fail("embeddings.models", "at least one embedding is required");
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const auto& e = embeddings[i];
    const std::string p = "embeddings.models[" + std::to_string(i) + "]";
    if (e.name.empty()) fail(p + ".name", "must not be empty");
    if (e.remote() && e.model.empty()) fail(p, "needs either a matrix path or a model for the endpoint");
    if (!e.remote() && !e.endpoint.empty()) fail(p, "matrix and endpoint are mutually exclusive");
    if (e.batch_size < 1) fail(p + ".batch_size", "must be >= 1");
    if (e.max_in_flight < 1) fail(p + ".max_in_flight", "must be >= 1");
  }
  require_unique(embeddings, [](const EmbeddingConfig& e) { return e.name; }, "embeddings.models");

  if (reductions.empty()) fail("reductions.variants", "at least one reduction is required");
  for (std::size_t i = 0; i < reductions.size(); ++i) {
    const std::string p = "reductions.variants[" + std::to_string(i) + "]";
    try {
      reductions[i].spec.validate();
    } catch (const Error& e) {
      fail(p, e.what());
    }
    const bool external = reductions[i].spec.method == embeddings::ReductionMethod::ExternalUmap;
    if (external && reductions[i].matrix.empty()) fail(p + ".matrix", "external reductions need a matrix path");
    if (!external && !reductions[i].matrix.empty()) fail(p + ".matrix", "only external reductions read a matrix");
  }
  require_unique(reductions, [](const ReductionConfig& r) { return r.spec.label(); }, "reductions.variants");

  if (algorithms.empty() && external.empty()) fail("clustering.algorithms", "at least one algorithm is required");
  for (std::size_t i = 0; i < algorithms.size(); ++i) {
    if (algorithms[i] != "kmeans" && algorithms[i] != "ward") {
      fail("clustering.algorithms[" + std::to_string(i) + "]", "expected \"kmeans\" or \"ward\"");
    }
  }
  require_unique(algorithms, [](const std::string& a) { return a; }, "clustering.algorithms");
  for (std::size_t i = 0; i < external.size(); ++i) {
    const std::string p = "clustering.external[" + std::to_string(i) + "]";
    if (external[i].label.empty()) fail(p + ".label", "must not be empty");
    if (external[i].assignments.empty()) fail(p + ".assignments", "must not be empty");
  }
  require_unique(external, [](const ExternalAlgorithm& e) { return e.label; }, "clustering.external");

  if (target_ks.empty()) fail("clustering.target_ks", "at least one k is required");
  const std::size_t min_size = sizes.empty() ? 0 : *std::min_element(sizes.begin(), sizes.end());
  for (std::size_t i = 0; i < target_ks.size(); ++i) {
    if (target_ks[i] < 1 || target_ks[i] > min_size) {
      fail("clustering.target_ks[" + std::to_string(i) + "]",
           "k = " + std::to_string(target_ks[i]) + " is outside [1, " + std::to_string(min_size) + "]");
    }
  }
  if (min_clusters > max_clusters) fail("clustering.min_clusters", "exceeds max_clusters");

  if (scorers.empty()) fail("scorers.list", "at least one scorer is required");
  for (std::size_t i = 0; i < scorers.size(); ++i) {
    try {
      scorers[i].validate();
    } catch (const Error& e) {
      fail("scorers.list[" + std::to_string(i) + "]", e.what());
    }
  }
  require_unique(scorers, [](const scoring::ScorerSpec& s) { return s.name; }, "scorers.list");

  if (features.empty()) fail("features.variants", "at least one feature is required");
  for (std::size_t i = 0; i < features.size(); ++i) {
    try {
      (void)features::FeatureVariant::parse(features[i]);
    } catch (const Error& e) {
      fail("features.variants[" + std::to_string(i) + "]", e.what());
    }
  }
  if (parallelism < 1) fail("run.parallelism", "must be >= 1");
  if (chunk_limit < 1) fail("run.chunk_limit", "must be >= 1");
}

std::filesystem::path ExperimentConfig::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

nlohmann::json ExperimentConfig::canonical_json() const {
  json j;
  j["datasets"] = json::array();
  for (const auto& d : datasets) j["datasets"].push_back({{"name", d.name}, {"path", d.path}});
  j["sizes"] = sizes;
  j["embeddings"] = json::array();
  for (const auto& e : embeddings) {
    j["embeddings"].push_back({{"name", e.name}, {"matrix", e.matrix}, {"model", e.model}});
  }
  j["reductions"] = json::array();
  for (const auto& r : reductions) j["reductions"].push_back({{"spec", r.spec}, {"matrix", r.matrix}});
  j["algorithms"] = algorithms;
  j["external"] = json::array();
  for (const auto& e : external) j["external"].push_back({{"label", e.label}, {"assignments", e.assignments}});
  j["target_ks"] = target_ks;
  j["scorers"] = json::array();
  for (const auto& s : scorers) {
    j["scorers"].push_back({{"name", s.name},
                            {"kind", scoring::to_string(s.kind)},
                            {"model", s.model},
                            {"file", s.file.generic_string()},
                            {"scale", s.scale() == scoring::ScoreScale::Likert ? "likert" : "real"},
                            {"prompt_variant", scoring::to_string(s.prompt_variant)},
                            {"schedule", s.schedule()}});
  }
  j["features"] = features;
  j["feature_sweep"] = feature_sweep;
  j["seed"] = seed;
  j["chunk_limit"] = chunk_limit;
  j["min_clusters"] = min_clusters;
  j["max_clusters"] = max_clusters;
  return j;
}

std::string ExperimentConfig::hash() const { return sha256_hex(canonical_json().dump()); }

std::vector<features::FeatureVariant> ExperimentConfig::correlated_features() const {
  using features::FeatureVariant;
  using features::VariantKind;
  std::vector<FeatureVariant> out = {{VariantKind::D90, 0}, {VariantKind::NegD50, 0}, {VariantKind::D90MinusP, 50}};
  auto add = [&out](const FeatureVariant& v) {
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  };
  for (const auto& name : features) add(FeatureVariant::parse(name));
  if (feature_sweep) {
    for (const auto& v : features::sweep_variants()) add(v);
  }
  return out;
}

std::vector<features::FeatureVariant> ExperimentConfig::reported_features() const {
  std::vector<features::FeatureVariant> out;
  for (const auto& name : features) {
    const auto v = features::FeatureVariant::parse(name);
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  return out;
}

}  // namespace iun::runner
