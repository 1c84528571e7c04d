#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "transrec/config.hpp"

namespace transrec {

/// Command implementations behind the `transrec` binary. Each returns a
/// process exit code (0 on success), reports problems on `err`, and writes
/// human-readable progress on `out`, so they stay testable without a process
/// boundary.

/// Parse a user/item/timestamp TSV, apply k-core filtering, assign dense ids,
/// split leave-one-out, and write split.json, user_map.tsv, item_map.tsv and
/// counts.csv into out_dir. Prints corpus statistics including density.
int cmd_prepare(const std::string& input_tsv, const std::string& out_dir, std::size_t k_core,
                std::ostream& out, std::ostream& err);

/// Train per the config, keep the best-validation checkpoint, evaluate it on
/// the configured split, and write checkpoint.bin, trajectory.csv and
/// metrics.json into out_dir, all stamped with the config digest.
int cmd_train(const ExperimentConfig& cfg, const std::string& out_dir, bool verbose,
              std::ostream& out, std::ostream& err);

/// Rank every user with a saved checkpoint and write metrics.json.
int cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                 const std::string& metrics_path, std::ostream& out, std::ostream& err);

/// Popularity-bucket mean scores for a saved checkpoint -> buckets.csv.
int cmd_analyze_buckets(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                        const std::string& csv_path, std::ostream& out, std::ostream& err);

/// Summarize preference-term trajectories of named runs -> summary CSV.
/// Each input is (scheme name, trajectory.csv path).
int cmd_analyze_terms(const std::vector<std::pair<std::string, std::string>>& logs,
                      const std::string& csv_path, std::ostream& out, std::ostream& err);

/// Finite-difference checks over ops, losses and a tiny encoder; one line per
/// case. Exit 0 iff everything passes.
int cmd_analyze_gradcheck(std::uint64_t seed, std::ostream& out, std::ostream& err);

/// Worker cap: explicit flag wins, else the TRANSREC_THREADS environment
/// variable, else 1. Malformed values fall back to 1.
std::size_t resolve_threads(std::size_t flag_value);

double interaction_density(std::size_t interactions, std::size_t users, std::size_t items);

}  // namespace transrec
