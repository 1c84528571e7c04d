#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace transrec {

struct corpus_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RawInteraction {
  std::string user_key;
  std::string item_key;
  std::int64_t timestamp = 0;
};

struct Event {
  std::uint32_t user = 0;  // 0..M-1
  std::uint32_t item = 0;  // 1..N; 0 is the padding id and never occurs
  std::int64_t timestamp = 0;
};

struct InteractionLog {
  std::size_t num_users = 0;
  std::size_t num_items = 0;  // N; valid item ids are 1..N
  std::vector<std::vector<Event>> events_by_user;  // ascending timestamp, stable on ties
  std::vector<std::string> user_keys;              // dense id -> original key
  std::vector<std::string> item_keys;              // index 0 is the padding sentinel
  std::vector<std::uint64_t> item_counts;          // size N+1, index 0 stays 0

  std::size_t total_events() const;
};

struct SplitDataset {
  std::size_t num_users = 0;  // users surviving the split
  std::size_t num_items = 0;
  std::vector<std::vector<std::uint32_t>> train;  // per-user, chronological
  std::vector<std::uint32_t> valid_item;
  std::vector<std::uint32_t> test_item;
  std::vector<std::string> user_keys;      // empty when loaded from a manifest
  std::vector<std::string> item_keys;      // empty when loaded from a manifest
  std::vector<std::uint64_t> train_counts; // popularity from train sequences only
  std::size_t dropped_users = 0;           // users with too few events
};

/// Reads `user<TAB>item<TAB>timestamp` lines. Lines starting with '#' and
/// blank lines are skipped; extra columns are ignored.
std::vector<RawInteraction> parse_tsv(const std::string& path);

/// Iteratively removes users and items with fewer than k interactions until
/// both constraints hold. May return an empty list.
std::vector<RawInteraction> k_core_filter(std::vector<RawInteraction> events, std::size_t k);

/// Assigns dense ids (users 0..M-1, items 1..N, both in first-appearance
/// order) and sorts each user's events by timestamp, ties kept in input order.
InteractionLog build_log(const std::vector<RawInteraction>& events);

/// Last event per user becomes the test item, second-to-last the validation
/// item, the rest the training sequence. Users with fewer than three events
/// are dropped and counted.
SplitDataset leave_one_out(const InteractionLog& log);

/// Recomputes per-item counts over the training sequences (size N+1).
std::vector<std::uint64_t> count_train_items(const SplitDataset& split);

void save_split_json(const SplitDataset& split, const std::string& path,
                     const std::string& config_digest);
SplitDataset load_split_json(const std::string& path);
void save_id_map(const std::vector<std::string>& keys, std::size_t first_dense_id,
                 const std::string& path);
void save_counts(const SplitDataset& split, const std::string& path,
                 const std::string& config_digest);

}  // namespace transrec
