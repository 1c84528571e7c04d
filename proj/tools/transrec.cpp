#include <cstdint>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "transrec/cli.hpp"

namespace {

// Leftover --key=value tokens become config overrides; anything else is an
// error so typos cannot pass silently.
void apply_extra_overrides(transrec::ExperimentConfig& cfg, const std::vector<std::string>& extras) {
  for (const std::string& raw : extras) {
    if (raw.rfind("--", 0) != 0 || raw.find('=') == std::string::npos)
      throw transrec::config_error("unrecognized argument '" + raw +
                                   "' (config overrides look like --key=value)");
    cfg.apply_override(raw.substr(2));
  }
}

transrec::ExperimentConfig build_config(const std::string& config_file,
                                        const std::vector<std::string>& extras) {
  auto cfg = config_file.empty() ? transrec::ExperimentConfig()
                                 : transrec::ExperimentConfig::from_file(config_file);
  apply_extra_overrides(cfg, extras);
  return cfg;
}

std::string stem_of(const std::string& path) {
  const auto slash = path.find_last_of('/');
  std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
  const auto dot = name.find_last_of('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential recommender with transitivity-aware ranking losses"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads,
                 "worker cap (default: TRANSREC_THREADS env var, else 1)");

  auto* prepare = app.add_subcommand("prepare", "build a train/valid/test split from a TSV");
  std::string input_tsv, out_dir = ".";
  std::size_t k_core = 5;
  prepare->add_option("input", input_tsv, "user<TAB>item<TAB>timestamp file")->required();
  prepare->add_option("--out", out_dir, "output directory");
  prepare->add_option("--k-core", k_core, "minimum interactions per user and item");

  auto* train = app.add_subcommand("train", "train a model and evaluate the best checkpoint");
  std::string config_file;
  bool verbose = false;
  train->add_option("--config", config_file, "flat key=value config file");
  train->add_option("--out", out_dir, "output directory");
  train->add_flag("--verbose", verbose, "per-epoch progress on stderr");
  train->allow_extras();

  auto* evaluate = app.add_subcommand("evaluate", "rank all users with a saved checkpoint");
  std::string checkpoint, metrics_path = "metrics.json";
  evaluate->add_option("--config", config_file, "flat key=value config file");
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  evaluate->add_option("--out", metrics_path, "metrics JSON path");
  evaluate->allow_extras();

  auto* analyze = app.add_subcommand("analyze", "buckets, terms, or gradcheck reports");
  std::string kind, csv_path;
  std::vector<std::string> term_logs;
  std::uint64_t seed = 7;
  analyze->add_option("kind", kind, "buckets | terms | gradcheck")->required();
  analyze->add_option("--config", config_file, "flat key=value config file");
  analyze->add_option("--checkpoint", checkpoint, "checkpoint file (buckets)");
  analyze->add_option("--out", csv_path, "output CSV path");
  analyze->add_option("--log", term_logs, "trajectory CSV, optionally scheme=path (terms)");
  analyze->add_option("--seed", seed, "random seed (gradcheck)");
  analyze->allow_extras();

  CLI11_PARSE(app, argc, argv);
  transrec::resolve_threads(threads);  // single-threaded compute; cap validated here

  try {
    if (prepare->parsed())
      return transrec::cmd_prepare(input_tsv, out_dir, k_core, std::cout, std::cerr);

    if (train->parsed()) {
      auto cfg = build_config(config_file, train->remaining());
      return transrec::cmd_train(cfg, out_dir, verbose, std::cout, std::cerr);
    }

    if (evaluate->parsed()) {
      auto cfg = build_config(config_file, evaluate->remaining());
      return transrec::cmd_evaluate(cfg, checkpoint, metrics_path, std::cout, std::cerr);
    }

    auto cfg = build_config(config_file, analyze->remaining());
    if (kind == "buckets") {
      if (checkpoint.empty()) {
        std::cerr << "analyze buckets: --checkpoint is required\n";
        return 1;
      }
      return transrec::cmd_analyze_buckets(
          cfg, checkpoint, csv_path.empty() ? "buckets.csv" : csv_path, std::cout, std::cerr);
    }
    if (kind == "terms") {
      if (term_logs.empty()) {
        std::cerr << "analyze terms: at least one --log is required\n";
        return 1;
      }
      std::vector<std::pair<std::string, std::string>> logs;
      for (const std::string& spec : term_logs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos)
          logs.emplace_back(stem_of(spec), spec);
        else
          logs.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
      }
      return transrec::cmd_analyze_terms(
          logs, csv_path.empty() ? "trajectory_summary.csv" : csv_path, std::cout, std::cerr);
    }
    if (kind == "gradcheck") return transrec::cmd_analyze_gradcheck(seed, std::cout, std::cerr);

    std::cerr << "analyze: unknown kind '" << kind << "' (buckets | terms | gradcheck)\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
