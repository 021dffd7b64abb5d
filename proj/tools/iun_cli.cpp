// Command-line front end: one subcommand per pipeline stage plus `run`.
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "iun/error.hpp"
#include "iun/report.hpp"
#include "iun/runner.hpp"

namespace {

struct Common {
  std::string config;
  std::string cache_dir;
  std::string output;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> parallelism;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment TOML file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--cache-dir", c.cache_dir, "artifact cache (overrides [run].cache_dir)");
  cmd->add_option("-o,--output", c.output, "output directory (overrides [run].output_dir)");
  cmd->add_option("--seed", c.seed, "k-means seed (overrides [run].seed)");
  cmd->add_option("-j,--parallelism", c.parallelism, "worker threads (overrides [run].parallelism)")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("-q,--quiet", c.quiet, "only print the summary");
}

iun::runner::ExperimentConfig load(const Common& c) {
  auto cfg = iun::runner::load_config(c.config);
  if (!c.cache_dir.empty()) cfg.cache_dir = std::filesystem::absolute(c.cache_dir);
  if (!c.output.empty()) cfg.output_dir = std::filesystem::absolute(c.output);
  if (c.seed) cfg.seed = *c.seed;
  if (c.parallelism) cfg.parallelism = *c.parallelism;
  cfg.validate();
  return cfg;
}

int run_stage(const std::string& stage, const Common& c) {
  const auto cfg = load(c);
  if (stage == "report") {
    const auto manifest = iun::runner::read_manifest(iun::runner::manifest_path(cfg));
    if (!manifest) {
      std::cerr << "error: no manifest in " << cfg.output_dir << "; run the pipeline first\n";
      return 1;
    }
    if (manifest->config_hash != cfg.hash()) {
      throw iun::Error(iun::ErrorCode::ConfigHashMismatch, "manifest belongs to a different configuration");
    }
    std::cout << "report written to " << iun::report::write_report(cfg, *manifest).string() << "\n";
    return 0;
  }

  const auto plan = iun::runner::plan(cfg);
  iun::runner::RunOptions options;
  options.kinds = iun::runner::kinds_through(stage);
  options.report = stage == "run";
  if (!c.quiet) options.log = [](const std::string& msg) { std::cerr << msg << "\n"; };
  const auto summary = iun::runner::run(cfg, plan, options);
  std::cout << "tasks: " << summary.executed << " executed, " << summary.reused << " reused, " << summary.failed
            << " failed, " << summary.skipped << " skipped\n";
  for (const auto& [stage_name, status] : summary.manifest.stage_status()) {
    std::cout << "  " << stage_name << ": " << status << "\n";
  }
  if (summary.report_written) std::cout << "report written to " << (cfg.output_dir / "report").string() << "\n";
  return summary.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster-geometry features versus news importance scores"};
  app.require_subcommand(1);
  Common common;
  const std::vector<std::pair<std::string, std::string>> stages = {
      {"chunk", "load corpora and extract top chunks"},
      {"reduce", "embed and reduce (PCA / external UMAP)"},
      {"cluster", "cluster every grid cell"},
      {"features", "compute percentile-distance features"},
      {"score", "score chunks (LLM, NLI or score files)"},
      {"correlate", "correlate features with cluster scores"},
      {"report", "render the report bundle from the manifest"},
      {"run", "everything, end to end"},
  };
  for (const auto& [name, help] : stages) add_common(app.add_subcommand(name, help), common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    return run_stage(stage, common);
  } catch (const iun::Error& e) {
    std::cerr << "error [" << iun::to_string(e.code()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
