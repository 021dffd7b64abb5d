#include "iun/clustering.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "iun/error.hpp"
#include "iun/util.hpp"

namespace iun::clustering {

namespace {

using embeddings::EmbeddingMatrix;
using json = nlohmann::json;

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

void check_k(std::size_t k, std::size_t rows) {
  if (k < 1 || k > rows) {
    throw Error(ErrorCode::KOutOfRange,
                "k = " + std::to_string(k) + " is not within [1, " + std::to_string(rows) + "]");
  }
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
                      c == '-' || c == '_';
    if (!keep) c = '-';
  }
  return s;
}

// k-means++ seeding: first center uniform, then proportional to squared
// distance from the nearest chosen center.
std::vector<std::size_t> seed_centers(const EmbeddingMatrix& m, std::size_t k, SplitMix64& rng) {
  const std::size_t n = m.rows();
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  std::vector<bool> taken(n, false);
  chosen.push_back(static_cast<std::size_t>(rng.below(n)));
  taken[chosen.back()] = true;
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(m.row(i), m.row(chosen.back()));

  while (chosen.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += d2[i];
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double cumulative = 0.0;
      std::size_t last_positive = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        last_positive = i;
        cumulative += d2[i];
        if (cumulative > target) {
          pick = i;
          break;
        }
      }
      if (pick == n) pick = last_positive;
    } else {
      // All remaining points coincide with chosen centers.
      std::size_t remaining = n - chosen.size();
      std::size_t nth = static_cast<std::size_t>(rng.below(remaining));
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        if (nth == 0) {
          pick = i;
          break;
        }
        --nth;
      }
    }
    chosen.push_back(pick);
    taken[pick] = true;
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(m.row(i), m.row(pick)));
  }
  return chosen;
}

// Returns inertia; ties go to the lowest center index.
double assign(const EmbeddingMatrix& m, const std::vector<double>& centers, std::size_t k, std::vector<int>& labels,
              std::vector<double>& dist) {
  const std::size_t d = m.cols();
  double inertia = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double v = squared_distance(m.row(i), std::span<const double>(centers.data() + c * d, d));
      if (v < best) {
        best = v;
        arg = static_cast<int>(c);
      }
    }
    labels[i] = arg;
    dist[i] = best;
    inertia += best;
  }
  return inertia;
}

std::vector<std::size_t> update_centers(const EmbeddingMatrix& m, const std::vector<int>& labels, std::size_t k,
                                        std::vector<double>& centers) {
  const std::size_t d = m.cols();
  std::vector<std::size_t> counts(k, 0);
  std::vector<double> sums(k * d, 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    ++counts[c];
    const auto r = m.row(i);
    for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += r[j];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t j = 0; j < d; ++j) centers[c * d + j] = sums[c * d + j] / static_cast<double>(counts[c]);
  }
  return counts;
}

// Row farthest from its own center among clusters that can spare a member.
std::size_t farthest_spare_row(const EmbeddingMatrix& m, const std::vector<int>& labels,
                               const std::vector<double>& centers, const std::vector<std::size_t>& counts,
                               const std::vector<bool>& used) {
  const std::size_t d = m.cols();
  std::size_t best_row = m.rows();
  double best = -1.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (used[i]) continue;
    const auto c = static_cast<std::size_t>(labels[i]);
    if (counts[c] < 2) continue;
    const double v = squared_distance(m.row(i), std::span<const double>(centers.data() + c * d, d));
    if (v > best) {
      best = v;
      best_row = i;
    }
  }
  return best_row;
}

}  // namespace

std::string ClusterCase::case_id() const {
  std::string id = corpus.name + "_" + std::to_string(corpus.size) + "_" + embedding.model + "_" + reduction.label() +
                   "_" + algorithm + "_k" + std::to_string(target_k);
  return sanitize(std::move(id));
}

void ClusterCase::validate(std::size_t rows) const {
  if (labels.size() != rows) {
    throw Error(ErrorCode::Internal, "case labels length " + std::to_string(labels.size()) + " != rows " +
                                         std::to_string(rows));
  }
  std::vector<bool> present(n_clusters, false);
  const bool native = algorithm == "kmeans" || algorithm == "ward";
  for (int l : labels) {
    if (l == kNoise) {
      if (native) throw Error(ErrorCode::Internal, algorithm + " produced a noise label");
      continue;
    }
    if (l < 0 || static_cast<std::size_t>(l) >= n_clusters) {
      throw Error(ErrorCode::Internal, "label " + std::to_string(l) + " outside 0.." + std::to_string(n_clusters));
    }
    present[static_cast<std::size_t>(l)] = true;
  }
  if (std::find(present.begin(), present.end(), false) != present.end()) {
    throw Error(ErrorCode::Internal, "cluster labels are not dense");
  }
}

std::vector<ClusterMembership> memberships(const ClusterCase& c) {
  std::vector<ClusterMembership> out(c.n_clusters);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].cluster_id = static_cast<int>(i);
  for (std::size_t r = 0; r < c.labels.size(); ++r) {
    if (c.labels[r] == kNoise) continue;
    out[static_cast<std::size_t>(c.labels[r])].member_rows.push_back(r);
  }
  return out;
}

std::size_t renumber_labels(std::vector<int>& labels) {
  std::unordered_map<int, int> mapping;
  for (int& l : labels) {
    if (l == kNoise) continue;
    auto [it, inserted] = mapping.emplace(l, static_cast<int>(mapping.size()));
    l = it->second;
  }
  return mapping.size();
}

KMeansTrace kmeans_trace(const EmbeddingMatrix& m, std::size_t k, std::uint64_t seed) {
  m.validate();
  check_k(k, m.rows());
  const std::size_t n = m.rows();
  const std::size_t d = m.cols();

  SplitMix64 rng(seed);
  std::vector<double> centers(k * d);
  const auto initial = seed_centers(m, k, rng);
  for (std::size_t c = 0; c < k; ++c) {
    const auto r = m.row(initial[c]);
    std::copy(r.begin(), r.end(), centers.begin() + static_cast<std::ptrdiff_t>(c * d));
  }

  KMeansTrace trace;
  std::vector<int> labels(n, 0);
  std::vector<int> previous;
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < kKMeansMaxIterations; ++it) {
    trace.inertia_history.push_back(assign(m, centers, k, labels, dist));
    trace.iterations = it + 1;
    if (labels == previous) {
      trace.converged = true;
      break;
    }
    previous = labels;
    const auto counts = update_centers(m, labels, k, centers);
    std::vector<bool> used(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      const std::size_t row = farthest_spare_row(m, labels, centers, counts, used);
      if (row == n) break;
      used[row] = true;
      const auto r = m.row(row);
      std::copy(r.begin(), r.end(), centers.begin() + static_cast<std::ptrdiff_t>(c * d));
    }
  }

  // Coincident points can leave a center without members even after
  // reseeding; hand such clusters a member directly.
  auto counts = update_centers(m, labels, k, centers);
  std::vector<bool> used(n, false);
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] != 0) continue;
    const std::size_t row = farthest_spare_row(m, labels, centers, counts, used);
    if (row == n) throw Error(ErrorCode::Internal, "cannot form k non-empty clusters");
    used[row] = true;
    --counts[static_cast<std::size_t>(labels[row])];
    labels[row] = static_cast<int>(c);
    counts[c] = 1;
    counts = update_centers(m, labels, k, centers);
  }

  trace.centers = std::move(centers);
  ClusterCase& out = trace.result;
  out.embedding = m.spec;
  out.reduction = m.reduction;
  out.algorithm = "kmeans";
  out.target_k = k;
  out.seed = seed;
  out.labels = std::move(labels);
  out.n_clusters = k;
  return trace;
}

ClusterCase kmeans(const EmbeddingMatrix& m, std::size_t k, std::uint64_t seed) {
  return std::move(kmeans_trace(m, k, seed).result);
}

Dendrogram ward_linkage(const EmbeddingMatrix& m) {
  m.validate();
  const std::size_t n = m.rows();
  Dendrogram out;
  out.n = n;
  if (n < 2) return out;

  auto index = [n](std::size_t i, std::size_t j) { return i * (2 * n - i - 1) / 2 + (j - i - 1); };
  std::vector<double> dist(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) dist[index(i, j)] = squared_distance(m.row(i), m.row(j));
  }

  std::vector<bool> active(n, true);
  std::vector<std::size_t> size(n, 1);
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> nn(n, kNone);
  std::vector<double> nn_dist(n, std::numeric_limits<double>::infinity());

  auto refresh = [&](std::size_t i) {
    nn[i] = kNone;
    nn_dist[i] = std::numeric_limits<double>::infinity();
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!active[j]) continue;
      const double v = dist[index(i, j)];
      if (v < nn_dist[i]) {
        nn_dist[i] = v;
        nn[i] = j;
      }
    }
  };
  for (std::size_t i = 0; i < n; ++i) refresh(i);

  out.merges.reserve(n - 1);
  for (std::size_t step = 0; step + 1 < n; ++step) {
    std::size_t a = kNone;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i] || nn[i] == kNone) continue;
      if (a == kNone || nn_dist[i] < nn_dist[a]) a = i;
    }
    const std::size_t b = nn[a];
    const double cost = dist[index(a, b)];
    const double na = static_cast<double>(size[a]);
    const double nb = static_cast<double>(size[b]);

    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == a || k == b) continue;
      const double nk = static_cast<double>(size[k]);
      const double dka = dist[k < a ? index(k, a) : index(a, k)];
      const double dkb = dist[k < b ? index(k, b) : index(b, k)];
      const double updated = ((na + nk) * dka + (nb + nk) * dkb - nk * cost) / (na + nb + nk);
      dist[k < a ? index(k, a) : index(a, k)] = updated;
    }
    active[b] = false;
    size[a] += size[b];
    out.merges.push_back(Merge{a, b, cost, std::sqrt(std::max(0.0, cost)), size[a]});

    refresh(a);
    for (std::size_t k = 0; k < b; ++k) {
      if (!active[k] || k == a) continue;
      if (nn[k] == a || nn[k] == b) {
        refresh(k);
      } else if (k < a) {
        const double v = dist[index(k, a)];
        if (v < nn_dist[k] || (v == nn_dist[k] && a < nn[k])) {
          nn_dist[k] = v;
          nn[k] = a;
        }
      }
    }
  }
  return out;
}

std::vector<int> cut_dendrogram(const Dendrogram& d, std::size_t k) {
  check_k(k, d.n);
  std::vector<std::size_t> parent(d.n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (std::size_t s = 0; s < d.n - k; ++s) {
    const auto& mg = d.merges[s];
    parent[find(mg.b)] = find(mg.a);
  }
  std::vector<int> labels(d.n);
  for (std::size_t i = 0; i < d.n; ++i) labels[i] = static_cast<int>(find(i));
  renumber_labels(labels);
  return labels;
}

ClusterCase ward_from_dendrogram(const EmbeddingMatrix& m, const Dendrogram& d, std::size_t k) {
  if (d.n != m.rows()) throw Error(ErrorCode::Internal, "dendrogram does not match matrix rows");
  ClusterCase out;
  out.embedding = m.spec;
  out.reduction = m.reduction;
  out.algorithm = "ward";
  out.target_k = k;
  out.labels = cut_dendrogram(d, k);
  out.n_clusters = k;
  return out;
}

ClusterCase ward(const EmbeddingMatrix& m, std::size_t k) {
  check_k(k, m.rows());
  return ward_from_dendrogram(m, ward_linkage(m), k);
}

ClusterCase load_assignments(const std::filesystem::path& path, const EmbeddingMatrix& m,
                             const std::string& algorithm_label) {
  std::istringstream in(read_text_file(path));
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t r = 0; r < m.rows(); ++r) row_of.emplace(m.ids[r], r);

  std::string label_name = algorithm_label;
  std::vector<int> labels(m.rows(), 0);
  std::vector<bool> seen(m.rows(), false);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      constexpr std::string_view kKey = "algorithm=";
      auto body = trim(t.substr(1));
      if (body.substr(0, kKey.size()) == kKey) label_name = std::string(trim(body.substr(kKey.size())));
      continue;
    }
    if (!header_seen) {
      if (t != "id,label") throw MalformedLineError(ErrorCode::MalformedLine, line_no, "expected header id,label");
      header_seen = true;
      continue;
    }
    const auto comma = t.rfind(',');
    if (comma == std::string_view::npos) throw MalformedLineError(ErrorCode::MalformedLine, line_no, "missing comma");
    const std::string id(t.substr(0, comma));
    const auto label_text = trim(t.substr(comma + 1));
    int label = 0;
    const auto [ptr, ec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (ec != std::errc{} || ptr != label_text.data() + label_text.size() || label < kNoise) {
      throw Error(ErrorCode::NonIntegerLabel,
                  "line " + std::to_string(line_no) + ": label '" + std::string(label_text) + "' is not valid", id);
    }
    const auto it = row_of.find(id);
    if (it == row_of.end()) throw Error(ErrorCode::UnknownId, "assignment for unknown id " + id, id);
    if (seen[it->second]) throw Error(ErrorCode::DuplicateId, "assignment repeats id " + id, id);
    seen[it->second] = true;
    labels[it->second] = label;
  }
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (!seen[r]) throw Error(ErrorCode::MissingId, "assignment file has no label for id " + m.ids[r], m.ids[r]);
  }

  ClusterCase out;
  out.embedding = m.spec;
  out.reduction = m.reduction;
  out.algorithm = "external:" + label_name;
  out.labels = std::move(labels);
  out.n_clusters = renumber_labels(out.labels);
  out.target_k = out.n_clusters;
  return out;
}

void write_assignments(const ClusterCase& c, const std::vector<std::string>& ids, const std::filesystem::path& path) {
  if (ids.size() != c.labels.size()) throw Error(ErrorCode::Internal, "ids and labels differ in length");
  std::string out = "id,label\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out += ids[i];
    out += ',';
    out += std::to_string(c.labels[i]);
    out += '\n';
  }
  write_text_file_atomic(path, out);
}

Validity validate_case(const ClusterCase& c, std::size_t min_clusters, std::size_t max_clusters) {
  if (c.n_clusters < min_clusters) return Validity::rejected("too_few");
  if (c.n_clusters > max_clusters) return Validity::rejected("too_many");
  return Validity::ok();
}

std::string case_manifest_json(const ClusterCase& c) {
  json j = {
      {"case_id", c.case_id()},
      {"corpus", {{"name", c.corpus.name}, {"path", c.corpus.path.generic_string()}, {"size", c.corpus.size}}},
      {"embedding", {{"model", c.embedding.model}, {"dim", c.embedding.dim}}},
      {"reduction", c.reduction},
      {"algorithm", c.algorithm},
      {"target_k", c.target_k},
      {"n_clusters", c.n_clusters},
  };
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  return j.dump(2) + "\n";
}

}  // namespace iun::clustering
