// Writes the synthetic end-to-end fixture: a 500-document corpus, a 64-dim
// embedding matrix with planted geometry, a Likert score file and a config.
#include <array>
#include <cmath>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "iun/corpus.hpp"
#include "iun/embeddings.hpp"
#include "iun/synthetic.hpp"
#include "iun/util.hpp"

namespace {

using json = nlohmann::json;

constexpr std::array<const char*, 8> kTopics = {"the harbour bridge", "water rationing", "the regional election",
                                                "a vaccine trial",    "the rail strike", "wildfire evacuations",
                                                "a museum reopening", "the transfer window"};

constexpr std::array<const char*, 10> kSentences = {
    "Officials in district {c} confirmed new details about {t} on Monday.",
    "Residents said the situation around {t} had changed quickly over the weekend.",
    "A spokesperson declined to say when a final decision on {t} would be made.",
    "Local reporters counted more than {n} people at a briefing on {t}.",
    "Dr. Ellis, who has followed {t} for years, called the update \"significant\".",
    "The council will publish a full report on {t} before the end of the month.",
    "Critics argued that the response to {t} in district {c} had been too slow.",
    "Figures released on Tuesday put the cost of {t} at about {n} million.",
    "Some businesses near district {c} closed early as news of {t} spread.",
    "It is not yet clear how {t} will affect neighbouring districts.",
};

std::string fill(std::string s, const std::string& topic, std::size_t cluster, std::uint64_t n) {
  auto replace = [&s](const std::string& key, const std::string& value) {
    for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size())) {
      s.replace(pos, key.size(), value);
    }
  };
  replace("{t}", topic);
  replace("{c}", std::to_string(cluster));
  replace("{n}", std::to_string(n));
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic end-to-end fixture"};
  std::string out_dir;
  std::uint64_t seed = 7;
  app.add_option("output", out_dir, "directory to write")->required();
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);

  iun::synthetic::PlantedOptions opts;
  opts.n_clusters = 50;
  opts.dim = 64;
  opts.n_important = 8;
  opts.points_per_cluster = 10;
  opts.noise = 0.04;
  opts.seed = seed;
  const auto planted = iun::synthetic::planted_signal(opts);
  const std::size_t n_docs = planted.labels.size();

  iun::SplitMix64 rng(seed ^ 0x5eedf00dULL);
  // Interleave clusters so that file order carries no label information.
  std::vector<std::size_t> order(n_docs);
  for (std::size_t i = 0; i < n_docs; ++i) order[i] = i;
  for (std::size_t i = n_docs; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  std::string corpus_jsonl;
  std::string scores_jsonl;
  iun::embeddings::EmbeddingMatrix m;
  m.spec = {"synth64", opts.dim};
  for (std::size_t d = 0; d < n_docs; ++d) {
    const std::size_t row = order[d];
    const auto cluster = static_cast<std::size_t>(planted.labels[row]);
    char id[32];
    std::snprintf(id, sizeof id, "doc-%04zu", d);
    const std::string topic = kTopics[cluster % kTopics.size()];
    std::string text;
    const std::size_t n_sentences = 6 + rng.below(10);
    for (std::size_t s = 0; s < n_sentences; ++s) {
      if (!text.empty()) text += ' ';
      text += fill(kSentences[rng.below(kSentences.size())], topic, cluster, 10 + rng.below(990));
    }
    corpus_jsonl += json{{"id", id}, {"text", text}}.dump() + "\n";

    m.ids.push_back(id);
    for (std::size_t j = 0; j < opts.dim; ++j) m.data.push_back(planted.points[row * opts.dim + j]);

    const auto chunk = iun::corpus::top_chunk({id, text});
    json rec = {{"doc_id", id}, {"scorer", "LLM"}, {"model", "fixture"}, {"chunk_sha256", chunk.sha256}};
    const double base = planted.importance[cluster] ? 4.0 : 2.6;
    const double noisy = base + 0.8 * rng.normal();
    if (rng.below(200) == 0) {
      rec["score"] = nullptr;
      rec["status"] = "failed";
    } else {
      rec["score"] = static_cast<int>(std::clamp(std::lround(noisy), 1L, 5L));
      rec["status"] = "ok";
    }
    scores_jsonl += rec.dump() + "\n";
  }

  iun::write_text_file_atomic(dir / "corpus.jsonl", corpus_jsonl);
  iun::write_text_file_atomic(dir / "scores.jsonl", scores_jsonl);
  iun::embeddings::write_matrix(m, dir / "embeddings.emb");
  iun::write_text_file_atomic(dir / "config.toml", R"([corpora]
sizes = [500]

[[corpora.datasets]]
name = "synthetic"
path = "corpus.jsonl"

[[embeddings.models]]
name = "synth64"
matrix = "embeddings.emb"

[[reductions.variants]]
method = "pca"
out_dim = 10

[clustering]
algorithms = ["kmeans", "ward"]
target_ks = [20, 30]

[[scorers.list]]
name = "LLM"
kind = "file"
file = "scores.jsonl"
scale = "likert"

[features]
variants = ["d90_50"]
sweep = true

[run]
seed = 0
output_dir = "out"
cache_dir = "cache"
)");
  std::cout << "wrote " << n_docs << " documents to " << dir.string() << "\n";
  return 0;
}
