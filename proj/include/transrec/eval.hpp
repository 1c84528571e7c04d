#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "transrec/corpus.hpp"
#include "transrec/encoder.hpp"

namespace transrec {

class eval_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rank of `target` among all catalog items. `scores` is indexed by item id
/// (entry 0 is the padding slot and is ignored). Ties go to the smaller id,
/// so an equal-scoring item with a smaller id pushes the target down.
std::size_t rank_of_target(const std::vector<double>& scores, std::uint32_t target);

struct RankedUser {
  std::uint32_t user = 0;
  std::uint32_t target = 0;
  std::size_t rank = 0;
};

/// Full-pool ranking for every user. With `test_half` false the target is the
/// held-out validation item and the history is the training sequence; with it
/// true the target is the test item and the validation item joins the history.
/// `exclude_history` drops the user's own history items (never the target)
/// from the candidate pool.
std::vector<RankedUser> rank_users(const EncoderParameters& params, const SplitDataset& split,
                                   bool test_half, std::size_t batch_size = 64,
                                   bool exclude_history = false);

struct Metrics {
  double hr = 0.0;
  double ndcg = 0.0;
  std::size_t users = 0;
};

Metrics topk_metrics(const std::vector<RankedUser>& ranked, std::size_t k);

/// Items 1..N grouped by descending training count (ties by ascending id)
/// into near-equal buckets: a disjoint cover with sizes differing by at most
/// one, bucket 0 holding the most popular items.
std::vector<std::vector<std::uint32_t>> bucket_partition(
    const std::vector<std::uint64_t>& train_counts, std::size_t num_buckets);

struct BucketReport {
  std::size_t index = 0;  // 0 holds the most popular items
  std::size_t num_items = 0;
  double mean_score = 0.0;  // mean over evaluated users x bucket items
  double std_error = 0.0;   // SE of the mean, items as the sampling unit
  std::size_t samples = 0;  // users x bucket items
};

/// Popularity-bucket analysis: every user is encoded on their full
/// (train + validation) history and all catalog items are scored; each bucket
/// reports the mean score over users and its items. The standard error treats
/// the per-item user-averaged scores as the independent sample, since one
/// user's scores are correlated across the whole catalog.
std::vector<BucketReport> bucket_scores(const EncoderParameters& params,
                                        const SplitDataset& split, std::size_t num_buckets = 5,
                                        std::size_t batch_size = 64);

struct TrajectorySummary {
  std::size_t rows = 0;
  double final_mean = 0.0;  // mean over the last tenth of the series
  double slope = 0.0;       // least-squares slope of value against step
};

TrajectorySummary summarize_series(const std::vector<double>& step,
                                   const std::vector<double>& value);

struct NamedSeries {
  std::string scheme;
  std::vector<double> step;
  std::vector<double> value;
};

/// Side-by-side summaries of per-scheme training trajectories. All series
/// must cover the same step range.
std::vector<std::pair<std::string, TrajectorySummary>> compare_trajectories(
    const std::vector<NamedSeries>& series);

/// Reads one column of a trajectory CSV (header `step,total,original,...`).
std::pair<std::vector<double>, std::vector<double>> read_trajectory_column(
    const std::string& path, const std::string& column);

TrajectorySummary summarize_trajectory_csv(const std::string& path,
                                           const std::string& column);

void write_metrics_json(const std::string& path, const Metrics& metrics, std::size_t k,
                        const std::string& split_name, const std::string& config_digest);

void write_buckets_csv(const std::string& path, const std::vector<BucketReport>& buckets);

void write_trajectory_summary_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, TrajectorySummary>>& rows);

}  // namespace transrec
