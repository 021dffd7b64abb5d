#include "iun/report.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "iun/error.hpp"
#include "iun/runner.hpp"
#include "iun/util.hpp"

namespace iun::report {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr int kCsvPrecision = 6;
constexpr int kMdPrecision = 3;

std::string num(double v, int precision = kCsvPrecision) { return format_fixed(v, precision); }

std::string file_safe(std::string s) {
  for (char& c : s) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    if (!keep) c = '-';
  }
  return s;
}

template <class T>
void add_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

// All correlated (not skipped) results of valid cells.
struct Flat {
  stats::CorrelationResult result;
  const CellResult* cell;
};

std::vector<Flat> flatten(const std::vector<CellResult>& cells) {
  std::vector<Flat> out;
  for (const auto& c : cells) {
    if (!c.valid) continue;
    for (const auto& o : c.outcomes) {
      if (const auto* r = std::get_if<stats::CorrelationResult>(&o)) out.push_back({*r, &c});
    }
  }
  return out;
}

const std::vector<stats::Split>& grid_splits() {
  static const std::vector<stats::Split> splits = {stats::Split::Dataset,   stats::Split::DataSize,
                                                   stats::Split::Algorithm, stats::Split::NClusters,
                                                   stats::Split::Reduction, stats::Split::All};
  return splits;
}

std::vector<stats::CorrelationResult> select(const std::vector<Flat>& flat, const std::string& feature,
                                             const std::string& scorer, const std::string* embedding) {
  std::vector<stats::CorrelationResult> out;
  for (const auto& f : flat) {
    if (f.result.feature != feature || f.result.scorer != scorer) continue;
    if (embedding && f.result.coords.embedding != *embedding) continue;
    out.push_back(f.result);
  }
  return out;
}

struct GridRow {
  std::string feature;
  std::string scorer;
  std::string embedding;
  stats::AggregateRow row;
};

std::vector<GridRow> grid_rows(const ReportInput& in, const std::vector<Flat>& flat,
                               const std::vector<std::string>& embeddings, stats::Metric metric) {
  std::vector<GridRow> out;
  for (const auto& feature : in.features) {
    for (const auto& scorer : in.scorers) {
      for (const auto& emb : embeddings) {
        const auto results = select(flat, feature, scorer.name, &emb);
        if (results.empty()) continue;
        for (auto split : grid_splits()) {
          for (auto& r : stats::aggregate(results, split, metric)) out.push_back({feature, scorer.name, emb, r});
        }
      }
    }
  }
  return out;
}

std::string grid_csv(const std::vector<GridRow>& rows) {
  std::string out = "split,group,feature,scorer,embedding,n_cases,avg,stdev,f_pos\n";
  for (const auto& g : rows) {
    out += g.row.split + "," + g.row.group + "," + g.feature + "," + g.scorer + "," + g.embedding + "," +
           std::to_string(g.row.n_cases) + "," + num(g.row.avg) + "," + num(g.row.stdev) + "," + num(g.row.f_pos) + "\n";
  }
  return out;
}

std::string md_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += '\\';
    out += c;
  }
  return out;
}

// One markdown table per feature x scorer: rows are split groups, columns
// embeddings, cells "avg / stdev / f_pos".
std::string grid_md(const std::vector<GridRow>& rows, const std::vector<std::string>& embeddings,
                    const std::string& title) {
  std::string out;
  std::vector<std::pair<std::string, std::string>> blocks;
  for (const auto& g : rows) add_unique(blocks, {g.feature, g.scorer});
  for (const auto& [feature, scorer] : blocks) {
    out += "### " + title + ": " + feature + " vs " + scorer + "\n\n";
    out += "| split | group |";
    for (const auto& e : embeddings) out += " " + md_escape(e) + " |";
    out += "\n|---|---|";
    for (std::size_t i = 0; i < embeddings.size(); ++i) out += "---|";
    out += "\n";
    std::vector<std::pair<std::string, std::string>> keys;
    for (const auto& g : rows) {
      if (g.feature == feature && g.scorer == scorer) add_unique(keys, {g.row.split, g.row.group});
    }
    for (const auto& [split, group] : keys) {
      out += "| " + split + " | " + md_escape(group) + " |";
      for (const auto& e : embeddings) {
        const auto it = std::find_if(rows.begin(), rows.end(), [&](const GridRow& g) {
          return g.feature == feature && g.scorer == scorer && g.embedding == e && g.row.split == split &&
                 g.row.group == group;
        });
        if (it == rows.end()) {
          out += " - |";
        } else {
          out += " " + num(it->row.avg, kMdPrecision) + " / " + num(it->row.stdev, kMdPrecision) + " / " +
                 num(it->row.f_pos, 2) + " |";
        }
      }
      out += "\n";
    }
    out += "\n";
  }
  return out;
}

std::string case_group(const stats::CaseCoordinates& c) {
  return c.dataset + "," + std::to_string(c.data_size) + "," + c.embedding + "," + c.reduction + "," + c.algorithm;
}

struct CaseCounts {
  std::size_t planned = 0;
  std::size_t valid = 0;
  std::size_t too_few = 0;
  std::size_t too_many = 0;
  std::size_t failed = 0;

  void add(const std::string& status) {
    ++planned;
    if (status == "valid") {
      ++valid;
    } else if (status == "too_few") {
      ++too_few;
    } else if (status == "too_many") {
      ++too_many;
    } else {
      ++failed;
    }
  }
  std::string csv() const {
    return std::to_string(planned) + "," + std::to_string(valid) + "," + std::to_string(too_few) + "," +
           std::to_string(too_many) + "," + std::to_string(failed);
  }
};

std::string split_key(const stats::CaseCoordinates& c, stats::Split split) {
  switch (split) {
    case stats::Split::Dataset: return c.dataset;
    case stats::Split::DataSize: return std::to_string(c.data_size);
    case stats::Split::Algorithm: return c.algorithm;
    case stats::Split::NClusters: return stats::n_clusters_bucket(c.n_clusters);
    case stats::Split::Reduction: return c.reduction;
    case stats::Split::Embedding: return c.embedding;
    case stats::Split::All: return "all";
  }
  return "all";
}

struct Range {
  double low;
  double high;
};

Range data_range(const std::vector<double>& v, bool likert, double likert_low, double likert_high) {
  if (likert) return {likert_low, likert_high};
  if (v.empty()) return {0.0, 1.0};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  if (*lo == *hi) return {*lo - 0.5, *hi + 0.5};
  return {*lo, *hi};
}

std::string split_histogram_csv(const std::vector<std::pair<std::string, std::vector<double>>>& groups,
                                 std::size_t bins, Range r) {
  std::string out = "group,bin_low,bin_high,count\n";
  for (const auto& [group, values] : groups) {
    const auto h = stats::histogram(values, bins, r.low, r.high);
    for (std::size_t i = 0; i < bins; ++i) {
      out += group + "," + num(h.edges[i], 4) + "," + num(h.edges[i + 1], 4) + "," + std::to_string(h.counts[i]) + "\n";
    }
    out += group + ",-inf," + num(h.low, 4) + "," + std::to_string(h.underflow) + "\n";
    out += group + "," + num(h.high, 4) + ",inf," + std::to_string(h.overflow) + "\n";
  }
  return out;
}

const std::vector<std::pair<std::string, std::string>>& gap_groups() {
  static const std::vector<std::pair<std::string, std::string>> groups = {
      {"<=50", "le50"}, {"all", "all"}, {">50", "gt50"}};
  return groups;
}

bool in_gap_group(const std::string& group, std::size_t n_clusters) {
  if (group == "<=50") return n_clusters <= 50;
  if (group == ">50") return n_clusters > 50;
  return true;
}

json outcome_json(const stats::CorrelationOutcome& o) {
  if (const auto* r = std::get_if<stats::CorrelationResult>(&o)) {
    return {{"feature", r->feature}, {"status", "ok"}, {"tau_b", r->tau_b}, {"spearman", r->spearman}, {"n", r->n}};
  }
  const auto& s = std::get<stats::SkippedCorrelation>(o);
  return {{"feature", s.feature}, {"status", "skipped"}, {"reason", s.reason}};
}

}  // namespace

CellResult compute_cell(const stats::CaseCoordinates& coords, const std::string& scorer, bool valid,
                        std::string reason, std::vector<features::FeatureRow> features,
                        std::vector<scoring::ClusterScore> cluster_scores,
                        std::span<const features::FeatureVariant> variants) {
  CellResult cell;
  cell.coords = coords;
  cell.scorer = scorer;
  cell.valid = valid;
  cell.reason = std::move(reason);
  cell.features = std::move(features);
  cell.cluster_scores = std::move(cluster_scores);
  if (!valid) return cell;
  for (const auto& v : variants) {
    try {
      cell.outcomes.push_back(stats::correlate_case(cell.features, cell.cluster_scores, v, scorer, coords));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientOverlap) throw;
      cell.outcomes.push_back(stats::SkippedCorrelation{coords, v.name(), scorer, "insufficient_overlap"});
    }
  }
  return cell;
}

json feature_rows_to_json(std::span<const features::FeatureRow> rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"cluster_id", r.cluster_id},
                   {"size", r.size},
                   {"d", r.d},
                   {"avg_dist", r.avg_dist},
                   {"d90_50", r.d90_50},
                   {"combo", r.combo},
                   {"a_minus_d50", r.a_minus_d50}});
  }
  return out;
}

std::vector<features::FeatureRow> feature_rows_from_json(const json& j) {
  std::vector<features::FeatureRow> out;
  for (const auto& r : j) {
    features::FeatureRow row;
    row.cluster_id = r.at("cluster_id").get<int>();
    row.size = r.at("size").get<std::size_t>();
    const auto d = r.at("d").get<std::vector<double>>();
    if (d.size() != row.d.size()) throw Error(ErrorCode::Internal, "feature row has the wrong number of percentiles");
    std::copy(d.begin(), d.end(), row.d.begin());
    row.avg_dist = r.at("avg_dist").get<double>();
    row.d90_50 = r.at("d90_50").get<double>();
    row.combo = r.at("combo").get<double>();
    row.a_minus_d50 = r.at("a_minus_d50").get<double>();
    out.push_back(row);
  }
  return out;
}

json to_json(const stats::CaseCoordinates& c) {
  return {{"case_id", c.case_id},     {"dataset", c.dataset},       {"data_size", c.data_size},
          {"embedding", c.embedding}, {"reduction", c.reduction},   {"algorithm", c.algorithm},
          {"target_k", c.target_k},   {"n_clusters", c.n_clusters}};
}

stats::CaseCoordinates coordinates_from_json(const json& j) {
  stats::CaseCoordinates c;
  c.case_id = j.at("case_id").get<std::string>();
  c.dataset = j.at("dataset").get<std::string>();
  c.data_size = j.at("data_size").get<std::size_t>();
  c.embedding = j.at("embedding").get<std::string>();
  c.reduction = j.at("reduction").get<std::string>();
  c.algorithm = j.at("algorithm").get<std::string>();
  c.target_k = j.at("target_k").get<std::size_t>();
  c.n_clusters = j.at("n_clusters").get<std::size_t>();
  return c;
}

json to_json(const CellResult& cell) {
  json scores = json::array();
  for (const auto& s : cell.cluster_scores) {
    scores.push_back({{"cluster_id", s.cluster_id}, {"mean", s.mean}, {"stdev", s.stdev}, {"n_scored", s.n_scored}});
  }
  json outcomes = json::array();
  for (const auto& o : cell.outcomes) outcomes.push_back(outcome_json(o));
  return {{"coords", to_json(cell.coords)},
          {"scorer", cell.scorer},
          {"valid", cell.valid},
          {"reason", cell.reason},
          {"features", feature_rows_to_json(cell.features)},
          {"cluster_scores", scores},
          {"outcomes", outcomes}};
}

CellResult cell_from_json(const json& j) {
  CellResult cell;
  cell.coords = coordinates_from_json(j.at("coords"));
  cell.scorer = j.at("scorer").get<std::string>();
  cell.valid = j.at("valid").get<bool>();
  cell.reason = j.at("reason").get<std::string>();
  cell.features = feature_rows_from_json(j.at("features"));
  for (const auto& s : j.at("cluster_scores")) {
    cell.cluster_scores.push_back({s.at("cluster_id").get<int>(), s.at("mean").get<double>(),
                                   s.at("stdev").get<double>(), s.at("n_scored").get<std::size_t>()});
  }
  for (const auto& o : j.at("outcomes")) {
    const std::string feature = o.at("feature").get<std::string>();
    if (o.at("status").get<std::string>() == "ok") {
      stats::CorrelationResult r;
      r.coords = cell.coords;
      r.feature = feature;
      r.scorer = cell.scorer;
      r.tau_b = o.at("tau_b").get<double>();
      r.spearman = o.at("spearman").get<double>();
      r.n = o.at("n").get<std::size_t>();
      cell.outcomes.emplace_back(std::move(r));
    } else {
      cell.outcomes.emplace_back(
          stats::SkippedCorrelation{cell.coords, feature, cell.scorer, o.at("reason").get<std::string>()});
    }
  }
  return cell;
}

Bundle build_report(const ReportInput& in) {
  if (in.cells.empty()) throw Error(ErrorCode::EmptyResults, "no correlated cells to report");
  Bundle bundle;
  const auto flat = flatten(in.cells);

  std::vector<std::string> embeddings;
  for (const auto& c : in.cases) add_unique(embeddings, c.coords.embedding);
  for (const auto& c : in.cells) add_unique(embeddings, c.coords.embedding);

  // (a) correlation grids
  const auto kendall = grid_rows(in, flat, embeddings, stats::Metric::TauB);
  const auto spearman = grid_rows(in, flat, embeddings, stats::Metric::Spearman);
  bundle["correlations_kendall.csv"] = grid_csv(kendall);
  bundle["correlations_spearman.csv"] = grid_csv(spearman);

  // (b) case accounting
  {
    std::vector<std::string> order;
    std::map<std::string, CaseCounts> groups;
    CaseCounts total;
    std::string validity = "case_id,dataset,data_size,embedding,reduction,algorithm,target_k,n_clusters,status\n";
    for (const auto& c : in.cases) {
      const auto key = case_group(c.coords);
      if (!groups.count(key)) order.push_back(key);
      groups[key].add(c.status);
      total.add(c.status);
      validity += c.coords.case_id + "," + case_group(c.coords) + "," + std::to_string(c.coords.target_k) + "," +
                  std::to_string(c.coords.n_clusters) + "," + c.status + "\n";
    }
    std::string counts = "dataset,data_size,embedding,reduction,algorithm,planned,valid,too_few,too_many,failed\n";
    for (const auto& key : order) counts += key + "," + groups[key].csv() + "\n";
    counts += "all,all,all,all,all," + total.csv() + "\n";
    bundle["case_counts.csv"] = counts;
    bundle["case_validity.csv"] = validity;
  }

  // (c), (d) histograms of cluster scores and in-cluster spread
  for (const auto& scorer : in.scorers) {
    const bool likert = scorer.scale == scoring::ScoreScale::Likert;
    std::vector<double> means;
    std::vector<double> stdevs;
    std::vector<const CellResult*> cells;
    for (const auto& c : in.cells) {
      if (!c.valid || c.scorer != scorer.name) continue;
      cells.push_back(&c);
      for (const auto& s : c.cluster_scores) {
        means.push_back(s.mean);
        stdevs.push_back(s.stdev);
      }
    }
    const std::string tag = file_safe(scorer.name);
    const Range mean_range = data_range(means, likert, 1.0, 5.0);
    bundle["hist_cluster_iun_" + tag + ".csv"] = stats::histogram_csv(stats::histogram(means, 20, mean_range.low, mean_range.high));
    for (auto split : {stats::Split::Dataset, stats::Split::DataSize, stats::Split::Embedding, stats::Split::Algorithm,
                       stats::Split::Reduction}) {
      std::vector<std::pair<std::string, std::vector<double>>> groups;
      for (const auto* c : cells) {
        const auto key = split_key(c->coords, split);
        auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == key; });
        if (it == groups.end()) {
          groups.emplace_back(key, std::vector<double>{});
          it = groups.end() - 1;
        }
        for (const auto& s : c->cluster_scores) it->second.push_back(s.mean);
      }
      bundle["hist_cluster_iun_" + tag + "_by_" + stats::to_string(split) + ".csv"] =
          split_histogram_csv(groups, 4, mean_range);
    }
    Range spread = likert ? Range{0.0, 2.0} : data_range(stdevs, false, 0.0, 0.0);
    if (!likert) spread.low = 0.0;
    if (!(spread.low < spread.high)) spread.high = spread.low + 1.0;
    bundle["hist_incluster_stdev_" + tag + ".csv"] = stats::histogram_csv(stats::histogram(stdevs, 50, spread.low, spread.high));
  }

  // (e) rank-gap curves
  {
    const auto gap_variant = features::FeatureVariant::parse(in.gap_feature);
    std::string summary = "scorer,feature,group,n_cases,n_clusters,median,avg,p97_5\n";
    for (const auto& scorer : in.scorers) {
      const std::string tag = file_safe(scorer.name);
      for (const auto& [group, suffix] : gap_groups()) {
        std::vector<double> gaps;
        std::size_t n_cases = 0;
        for (const auto& c : in.cells) {
          if (!c.valid || c.scorer != scorer.name || !in_gap_group(group, c.coords.n_clusters)) continue;
          try {
            const auto g = stats::rank_gaps(c.features, c.cluster_scores, gap_variant);
            gaps.insert(gaps.end(), g.begin(), g.end());
            ++n_cases;
          } catch (const Error& e) {
            if (e.code() != ErrorCode::InsufficientOverlap) throw;
          }
        }
        const std::string head = scorer.name + "," + gap_variant.name() + "," + group + "," + std::to_string(n_cases) +
                                 "," + std::to_string(gaps.size()) + ",";
        if (gaps.empty()) {
          summary += head + "NA,NA,NA\n";
          bundle["gap_curve_" + tag + "_" + suffix + ".csv"] = "normalized_gap,cumulative_fraction\n";
          continue;
        }
        const auto curve = stats::gap_curve_from_gaps(std::move(gaps));
        summary += head + num(curve.summary.median) + "," + num(curve.summary.avg) + "," + num(curve.summary.p97_5) + "\n";
        bundle["gap_curve_" + tag + "_" + suffix + ".csv"] = stats::gap_curve_csv(curve);
      }
    }
    bundle["gap_summary.csv"] = summary;
  }

  // (f) feature variants
  {
    std::string out = "scorer,feature,n_cases,tau_avg,tau_stdev,tau_f_pos,rho_avg,rho_stdev,rho_f_pos\n";
    for (const auto& scorer : in.scorers) {
      for (const auto& feature : in.variant_features) {
        const auto results = select(flat, feature, scorer.name, nullptr);
        if (results.empty()) continue;
        std::vector<double> tau;
        std::vector<double> rho;
        for (const auto& r : results) {
          tau.push_back(r.tau_b);
          rho.push_back(r.spearman);
        }
        const auto t = stats::summarize(tau);
        const auto s = stats::summarize(rho);
        out += scorer.name + "," + feature + "," + std::to_string(results.size()) + "," + num(t.avg) + "," +
               num(t.stdev) + "," + num(t.f_pos) + "," + num(s.avg) + "," + num(s.stdev) + "," + num(s.f_pos) + "\n";
      }
    }
    bundle["feature_variants.csv"] = out;
  }

  // (g) cross-scorer agreement
  {
    std::string out = "dataset,data_size,scorer_a,scorer_b,n_docs,tau_b\n";
    for (const auto& r : in.cross) {
      out += r.dataset + "," + std::to_string(r.data_size) + "," + r.scorer_a + "," + r.scorer_b + "," +
             std::to_string(r.n_docs) + "," + num(r.tau_b) + "\n";
    }
    bundle["cross_scorer.csv"] = out;
  }

  // skipped correlations, for transparency
  {
    std::string out = "case_id,scorer,feature,reason\n";
    for (const auto& c : in.cells) {
      if (!c.valid) continue;
      for (const auto& o : c.outcomes) {
        if (const auto* s = std::get_if<stats::SkippedCorrelation>(&o)) {
          out += c.coords.case_id + "," + c.scorer + "," + s->feature + "," + s->reason + "\n";
        }
      }
    }
    bundle["skipped_correlations.csv"] = out;
  }

  // rendered summary
  {
    std::string md = "# IUN feature report\n\n";
    CaseCounts total;
    for (const auto& c : in.cases) total.add(c.status);
    md += "## Clustering cases\n\n";
    md += "| planned | valid | too few clusters | too many clusters | failed |\n|---|---|---|---|---|\n";
    md += "| " + std::to_string(total.planned) + " | " + std::to_string(total.valid) + " | " +
          std::to_string(total.too_few) + " | " + std::to_string(total.too_many) + " | " + std::to_string(total.failed) +
          " |\n\n";
    md += "Only valid cases enter the aggregates below. Cells read avg / stdev / F_pos over cases.\n\n";
    md += "## Kendall tau-b\n\n" + grid_md(kendall, embeddings, "Kendall tau-b");
    md += "## Spearman rho\n\n" + grid_md(spearman, embeddings, "Spearman rho");

    md += "## Feature variants (Kendall tau-b)\n\n| scorer | feature | cases | avg | stdev | F_pos |\n|---|---|---|---|---|---|\n";
    for (const auto& scorer : in.scorers) {
      for (const auto& feature : in.variant_features) {
        const auto results = select(flat, feature, scorer.name, nullptr);
        if (results.empty()) continue;
        std::vector<double> tau;
        for (const auto& r : results) tau.push_back(r.tau_b);
        const auto t = stats::summarize(tau);
        md += "| " + md_escape(scorer.name) + " | " + feature + " | " + std::to_string(results.size()) + " | " +
              num(t.avg, kMdPrecision) + " | " + num(t.stdev, kMdPrecision) + " | " + num(t.f_pos, 2) + " |\n";
      }
    }
    md += "\n## Rank gaps (" + in.gap_feature + ")\n\n| scorer | n_clust | median | avg | P97.5 |\n|---|---|---|---|---|\n";
    const std::string& gs = bundle["gap_summary.csv"];
    std::size_t pos = gs.find('\n') + 1;
    while (pos < gs.size()) {
      const auto end = gs.find('\n', pos);
      std::vector<std::string> f;
      std::size_t s = pos;
      for (;;) {
        const auto comma = gs.find(',', s);
        if (comma == std::string::npos || comma > end) {
          f.push_back(gs.substr(s, end - s));
          break;
        }
        f.push_back(gs.substr(s, comma - s));
        s = comma + 1;
      }
      md += "| " + md_escape(f[0]) + " | " + f[2] + " | " + f[5] + " | " + f[6] + " | " + f[7] + " |\n";
      pos = end + 1;
    }
    if (!in.cross.empty()) {
      md += "\n## Cross-scorer agreement (document level, Kendall tau-b)\n\n| dataset | size | a | b | docs | tau-b |\n"
            "|---|---|---|---|---|---|\n";
      for (const auto& r : in.cross) {
        md += "| " + md_escape(r.dataset) + " | " + std::to_string(r.data_size) + " | " + md_escape(r.scorer_a) + " | " +
              md_escape(r.scorer_b) + " | " + std::to_string(r.n_docs) + " | " + num(r.tau_b, kMdPrecision) + " |\n";
      }
    }
    bundle["report.md"] = md;
  }
  return bundle;
}

void write_bundle(const Bundle& bundle, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && !bundle.count(entry.path().filename().string())) fs::remove(entry.path());
  }
  for (const auto& [name, contents] : bundle) write_text_file_atomic(dir / name, contents);
}

ReportInput collect_report_input(const runner::ExperimentConfig& cfg, const runner::RunManifest& manifest) {
  ReportInput in;
  for (const auto& s : cfg.scorers) in.scorers.push_back({s.name, s.scale()});
  for (const auto& v : cfg.reported_features()) in.features.push_back(v.name());
  for (const auto& v : cfg.correlated_features()) in.variant_features.push_back(v.name());

  const auto grid = runner::enumerate_grid(cfg);
  auto record = [&](const std::string& id) -> const runner::TaskRecord* {
    const auto it = manifest.tasks.find(id);
    return it == manifest.tasks.end() ? nullptr : &it->second;
  };
  // score snapshots per (corpus, size), in scorer order
  std::vector<std::pair<std::pair<std::string, std::size_t>, std::vector<std::pair<std::string, fs::path>>>> snapshots;

  for (const auto& t : grid.tasks) {
    const auto* r = record(t.id);
    const bool done = r && r->status == runner::TaskStatus::Done;
    if (t.kind == runner::TaskKind::Cluster) {
      CaseRow row;
      row.coords.case_id = t.id.substr(std::string("cluster/").size());
      row.coords.dataset = t.params.at("corpus").get<std::string>();
      row.coords.data_size = t.params.at("size").get<std::size_t>();
      row.coords.embedding = t.params.at("embedding").get<std::string>();
      row.coords.reduction = t.params.at("reduction").get<std::string>();
      row.coords.algorithm = t.params.at("algorithm").get<std::string>();
      row.coords.target_k = t.params.at("k").get<std::size_t>();
      row.status = "failed";
      if (done && r->provenance.is_object()) {
        row.coords.n_clusters = r->provenance.at("n_clusters").get<std::size_t>();
        row.status = r->provenance.at("status").get<std::string>();
      }
      in.cases.push_back(std::move(row));
    } else if (t.kind == runner::TaskKind::Correlate && done) {
      in.cells.push_back(cell_from_json(json::parse(read_text_file(cfg.cache_dir / t.outputs.at(0)))));
    } else if (t.kind == runner::TaskKind::Score && done) {
      const std::pair<std::string, std::size_t> key{t.params.at("corpus").get<std::string>(),
                                                    t.params.at("size").get<std::size_t>()};
      auto it = std::find_if(snapshots.begin(), snapshots.end(), [&](const auto& s) { return s.first == key; });
      if (it == snapshots.end()) {
        snapshots.push_back({key, {}});
        it = snapshots.end() - 1;
      }
      it->second.emplace_back(t.params.at("scorer").get<std::string>(), cfg.cache_dir / t.outputs.at(0));
    }
  }

  for (const auto& [key, files] : snapshots) {
    std::vector<std::vector<scoring::ScoreRecord>> records;
    for (const auto& [name, path] : files) {
      const auto spec = std::find_if(cfg.scorers.begin(), cfg.scorers.end(), [&](const auto& s) { return s.name == name; });
      records.push_back(scoring::load_scores(path, *spec));
    }
    for (std::size_t a = 0; a < files.size(); ++a) {
      for (std::size_t b = a + 1; b < files.size(); ++b) {
        std::set<std::string> ok_a;
        for (const auto& r : records[a]) {
          if (r.ok()) ok_a.insert(r.doc_id);
        }
        std::size_t common = 0;
        for (const auto& r : records[b]) {
          if (r.ok() && ok_a.count(r.doc_id)) ++common;
        }
        try {
          const double tau = scoring::cross_scorer_correlation(records[a], records[b]);
          in.cross.push_back({key.first, key.second, files[a].first, files[b].first, common, tau});
        } catch (const Error& e) {
          if (e.code() != ErrorCode::IntersectionTooSmall && e.code() != ErrorCode::Undefined) throw;
        }
      }
    }
  }
  return in;
}

fs::path write_report(const runner::ExperimentConfig& cfg, const runner::RunManifest& manifest) {
  const fs::path dir = cfg.output_dir / "report";
  write_bundle(build_report(collect_report_input(cfg, manifest)), dir);
  return dir;
}

}  // namespace iun::report
