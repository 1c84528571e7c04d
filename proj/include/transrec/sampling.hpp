#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "transrec/corpus.hpp"
#include "transrec/rng.hpp"

namespace transrec {

struct sampling_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SamplerMode { pop, niche };
enum class Transitivity { weak, strict, disjoint };

using ItemSet = std::unordered_set<std::uint32_t>;

/// Distribution over item ids 1..N with probability proportional to
/// count(i)^alpha; items with zero train count get zero weight. Draws are O(1)
/// via an alias table. count(i) doubles as the preference measure f.
class PopularityDist {
 public:
  /// counts has size N+1; index 0 is the padding slot and is ignored.
  PopularityDist(std::vector<std::uint64_t> counts, double alpha);

  std::size_t num_items() const { return n_; }
  double prob(std::uint32_t item) const { return prob_[item]; }
  std::uint64_t count(std::uint32_t item) const { return counts_[item]; }
  std::uint32_t draw(Rng& rng) const;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint64_t> counts_;
  std::vector<double> prob_;              // size N+1, [0] = 0
  std::vector<double> keep_prob_;         // alias tables over slots 0..N-1
  std::vector<std::uint32_t> alias_;
};

/// Draw from dist conditioned on the item not being excluded: bounded
/// rejection first, then an exact draw over the allowed support, so the only
/// failure mode is a truly saturated support.
std::uint32_t sample_pop(const PopularityDist& dist, Rng& rng, const ItemSet& exclude,
                         std::size_t max_retries = 100);

/// Uniform over 1..num_items minus the excluded set, same strategy.
std::uint32_t sample_unif(std::size_t num_items, Rng& rng, const ItemSet& exclude,
                          std::size_t max_retries = 100);

/// Items split into a top and bottom half by train count descending, ties
/// broken by ascending id; the top half holds floor(N/2) items. Carries an
/// alias table for popularity-weighted draws restricted to the top half.
struct PopularityPartition {
  std::vector<std::uint32_t> top;     // count-descending
  std::vector<std::uint32_t> bottom;
  std::vector<double> top_prob;       // unnormalized weight per top slot
  std::vector<double> top_keep_prob;  // alias tables over top slots
  std::vector<std::uint32_t> top_alias;

  std::uint32_t draw_top_pop(Rng& rng, const ItemSet& exclude, std::size_t max_retries) const;
  std::uint32_t draw_bottom_unif(Rng& rng, const ItemSet& exclude, std::size_t max_retries) const;
};

PopularityPartition make_partition(const PopularityDist& dist);

struct QuadRow {
  std::uint32_t user = 0;
  std::uint32_t prefix_len = 0;  // history = train[user][0..prefix_len)
  std::uint32_t pos = 0;         // positive item
  std::uint32_t j = 0;           // more-preferred negative by construction
  std::uint32_t k = 0;
};

struct QuadBatch {
  std::vector<QuadRow> rows;
};

struct SetRow {
  std::uint32_t user = 0;
  std::uint32_t prefix_len = 0;
  std::uint32_t pos = 0;
  std::vector<std::uint32_t> neg_j;
  std::vector<std::uint32_t> neg_k;
};

struct SetBatch {
  std::vector<SetRow> rows;
};

/// Batch builders draw (user, position) targets uniformly over all training
/// targets and exclude only the positive from negatives. mode=pop draws j from
/// the popularity distribution and k uniformly; mode=niche swaps the roles.
QuadBatch quad_weak(const SplitDataset& split, const PopularityDist& dist, SamplerMode mode,
                    std::size_t batch_size, Rng& rng);

/// quad_weak plus the guarantee f(j) > f(k) for pop (f(j) < f(k) for niche),
/// via pair rejection with a swap fallback. Errors when every item shares one
/// count, which makes the constraint unsatisfiable.
QuadBatch quad_strict(const SplitDataset& split, const PopularityDist& dist, SamplerMode mode,
                      std::size_t batch_size, Rng& rng);

/// j and k drawn from disjoint popularity halves (see PopularityPartition),
/// so the f-ordering holds whenever no count ties straddle the median.
QuadBatch quad_disjoint(const SplitDataset& split, const PopularityDist& dist, SamplerMode mode,
                        std::size_t batch_size, Rng& rng);

/// N_j and N_k drawn without replacement, disjoint from each other and the
/// positive. mode picks which set uses the popularity distribution.
SetBatch set_weak(const SplitDataset& split, const PopularityDist& dist, SamplerMode mode,
                  std::size_t batch_size, std::size_t n_j, std::size_t n_k, Rng& rng);

struct SamplerConfig {
  SamplerMode mode = SamplerMode::pop;
  Transitivity transitivity = Transitivity::weak;
  double alpha = 1.0;
  std::size_t n_j = 50;
  std::size_t n_k = 50;
  bool exclude_history = false;
  std::size_t max_retries = 100;
};

/// Stateful sampler used by the trainer: owns the popularity distribution,
/// the disjoint partition when needed, and per-user history sets when
/// exclude_history is on.
class NegativeSampler {
 public:
  NegativeSampler(const SplitDataset& split, SamplerConfig cfg);

  /// (j, k) for one positive, honoring the configured transitivity.
  std::pair<std::uint32_t, std::uint32_t> quad(std::uint32_t user, std::uint32_t positive,
                                               Rng& rng) const;

  /// One negative-set pair shared across a window's positions; every listed
  /// positive is excluded so the sets stay disjoint from all of them.
  void sets(std::uint32_t user, const std::vector<std::uint32_t>& positives, Rng& rng,
            std::vector<std::uint32_t>& neg_j, std::vector<std::uint32_t>& neg_k) const;

  /// Plain uniform negative for the non-transitive baselines, honoring the
  /// same positive/history exclusions as the structured draws.
  std::uint32_t uniform_negative(std::uint32_t user, std::uint32_t positive, Rng& rng) const;

  /// Uniform without-replacement negative set for the baseline set loss.
  void uniform_set(std::uint32_t user, const std::vector<std::uint32_t>& positives,
                   std::size_t count, Rng& rng, std::vector<std::uint32_t>& out) const;

  const PopularityDist& dist() const { return dist_; }
  const SamplerConfig& config() const { return cfg_; }

 private:
  ItemSet base_exclude(std::uint32_t user) const;

  const SplitDataset* split_;
  SamplerConfig cfg_;
  PopularityDist dist_;
  std::optional<PopularityPartition> partition_;
  std::vector<ItemSet> history_;
};

}  // namespace transrec
