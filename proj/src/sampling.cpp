#include "transrec/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace transrec {

namespace {

// Vose alias construction over scaled weights (already multiplied by n).
void build_alias(const std::vector<double>& scaled, std::vector<double>& keep_prob,
                 std::vector<std::uint32_t>& alias) {
  const std::size_t n = scaled.size();
  keep_prob.assign(n, 1.0);
  alias.assign(n, 0);
  std::vector<std::uint32_t> small, large;
  std::vector<double> w = scaled;
  for (std::uint32_t i = 0; i < n; ++i) (w[i] < 1.0 ? small : large).push_back(i);
  while (!small.empty() && !large.empty()) {
    const std::uint32_t s = small.back();
    const std::uint32_t l = large.back();
    small.pop_back();
    keep_prob[s] = w[s];
    alias[s] = l;
    w[l] -= 1.0 - w[s];
    if (w[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  // leftovers keep probability 1 (numerical remainders)
}

bool strict_ok(SamplerMode mode, std::uint64_t fj, std::uint64_t fk) {
  return mode == SamplerMode::pop ? fj > fk : fj < fk;
}

std::uint32_t draw_first_negative(const PopularityDist& dist, SamplerMode mode, Rng& rng,
                                  const ItemSet& exclude, std::size_t retries) {
  return mode == SamplerMode::pop ? sample_pop(dist, rng, exclude, retries)
                                  : sample_unif(dist.num_items(), rng, exclude, retries);
}

std::uint32_t draw_second_negative(const PopularityDist& dist, SamplerMode mode, Rng& rng,
                                   const ItemSet& exclude, std::size_t retries) {
  return mode == SamplerMode::pop ? sample_unif(dist.num_items(), rng, exclude, retries)
                                  : sample_pop(dist, rng, exclude, retries);
}

std::pair<std::uint32_t, std::uint32_t> weak_pair(const PopularityDist& dist, SamplerMode mode,
                                                  const ItemSet& base_exclude, Rng& rng,
                                                  std::size_t retries) {
  const std::uint32_t j = draw_first_negative(dist, mode, rng, base_exclude, retries);
  ItemSet ex = base_exclude;
  ex.insert(j);
  const std::uint32_t k = draw_second_negative(dist, mode, rng, ex, retries);
  return {j, k};
}

std::pair<std::uint32_t, std::uint32_t> strict_pair(const PopularityDist& dist, SamplerMode mode,
                                                    const ItemSet& base_exclude, Rng& rng,
                                                    std::size_t retries) {
  const std::size_t rounds = 100;
  for (std::size_t round = 0; round < rounds; ++round) {
    std::pair<std::uint32_t, std::uint32_t> last{0, 0};
    for (std::size_t attempt = 0; attempt < retries; ++attempt) {
      last = weak_pair(dist, mode, base_exclude, rng, retries);
      if (strict_ok(mode, dist.count(last.first), dist.count(last.second))) return last;
    }
    if (strict_ok(mode, dist.count(last.second), dist.count(last.first)))
      return {last.second, last.first};
  }
  throw sampling_error("strict sampling could not satisfy the popularity ordering");
}

void check_strict_satisfiable(const PopularityDist& dist) {
  std::uint64_t lo = dist.count(1), hi = dist.count(1);
  for (std::uint32_t i = 2; i <= dist.num_items(); ++i) {
    lo = std::min(lo, dist.count(i));
    hi = std::max(hi, dist.count(i));
  }
  if (lo == hi)
    throw sampling_error(
        "strict transitivity is unsatisfiable: every item has the same train count");
}

std::pair<std::uint32_t, std::uint32_t> disjoint_pair(const PopularityPartition& part,
                                                      SamplerMode mode,
                                                      const ItemSet& base_exclude, Rng& rng,
                                                      std::size_t retries) {
  if (mode == SamplerMode::pop) {
    const std::uint32_t j = part.draw_top_pop(rng, base_exclude, retries);
    ItemSet ex = base_exclude;
    ex.insert(j);
    return {j, part.draw_bottom_unif(rng, ex, retries)};
  }
  const std::uint32_t j = [&] {
    return part.draw_bottom_unif(rng, base_exclude, retries);
  }();
  ItemSet ex = base_exclude;
  ex.insert(j);
  return {j, part.draw_top_pop(rng, ex, retries)};
}

// (user, prefix_len) pairs for every next-item target in the split
std::vector<std::pair<std::uint32_t, std::uint32_t>> target_index(const SplitDataset& split) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> targets;
  for (std::uint32_t u = 0; u < split.num_users; ++u)
    for (std::uint32_t t = 1; t < split.train[u].size(); ++t) targets.push_back({u, t});
  if (targets.empty())
    throw sampling_error("no training targets: every train sequence has length < 2");
  return targets;
}

}  // namespace

PopularityDist::PopularityDist(std::vector<std::uint64_t> counts, double alpha) {
  if (counts.size() < 2) throw sampling_error("catalog is empty");
  if (alpha < 0.0) throw sampling_error("alpha must be non-negative");
  n_ = counts.size() - 1;
  counts_ = std::move(counts);
  counts_[0] = 0;
  prob_.assign(n_ + 1, 0.0);
  double total = 0.0;
  for (std::uint32_t i = 1; i <= n_; ++i) {
    if (counts_[i] == 0) continue;
    prob_[i] = std::pow(static_cast<double>(counts_[i]), alpha);
    total += prob_[i];
  }
  if (total <= 0.0) throw sampling_error("all item counts are zero");
  std::vector<double> scaled(n_);
  for (std::uint32_t i = 1; i <= n_; ++i) {
    prob_[i] /= total;
    scaled[i - 1] = prob_[i] * static_cast<double>(n_);
  }
  build_alias(scaled, keep_prob_, alias_);
}

std::uint32_t PopularityDist::draw(Rng& rng) const {
  const std::size_t slot = rng.uniform_index(n_);
  const double coin = rng.next_double();
  return static_cast<std::uint32_t>(coin < keep_prob_[slot] ? slot + 1 : alias_[slot] + 1);
}

std::uint32_t sample_pop(const PopularityDist& dist, Rng& rng, const ItemSet& exclude,
                         std::size_t max_retries) {
  for (std::size_t attempt = 0; attempt < max_retries; ++attempt) {
    const std::uint32_t item = dist.draw(rng);
    if (!exclude.count(item)) return item;
  }
  // exact draw over the remaining support
  double total = 0.0;
  for (std::uint32_t i = 1; i <= dist.num_items(); ++i)
    if (!exclude.count(i)) total += dist.prob(i);
  if (total <= 0.0) throw sampling_error("sampling support exhausted by exclusions");
  double r = rng.next_double() * total;
  std::uint32_t last = 0;
  for (std::uint32_t i = 1; i <= dist.num_items(); ++i) {
    if (exclude.count(i) || dist.prob(i) == 0.0) continue;
    last = i;
    r -= dist.prob(i);
    if (r <= 0.0) return i;
  }
  return last;
}

std::uint32_t sample_unif(std::size_t num_items, Rng& rng, const ItemSet& exclude,
                          std::size_t max_retries) {
  if (num_items == 0) throw sampling_error("catalog is empty");
  for (std::size_t attempt = 0; attempt < max_retries; ++attempt) {
    const auto item = static_cast<std::uint32_t>(rng.uniform_index(num_items) + 1);
    if (!exclude.count(item)) return item;
  }
  std::vector<std::uint32_t> allowed;
  for (std::uint32_t i = 1; i <= num_items; ++i)
    if (!exclude.count(i)) allowed.push_back(i);
  if (allowed.empty()) throw sampling_error("sampling support exhausted by exclusions");
  return allowed[rng.uniform_index(allowed.size())];
}

PopularityPartition make_partition(const PopularityDist& dist) {
  const std::size_t n = dist.num_items();
  if (n < 2) throw sampling_error("disjoint transitivity needs at least 2 items");
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 1);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (dist.count(a) != dist.count(b)) return dist.count(a) > dist.count(b);
    return a < b;
  });
  PopularityPartition part;
  const std::size_t top_size = n / 2;
  part.top.assign(order.begin(), order.begin() + top_size);
  part.bottom.assign(order.begin() + top_size, order.end());

  part.top_prob.resize(top_size);
  double total = 0.0;
  for (std::size_t s = 0; s < top_size; ++s) {
    part.top_prob[s] = dist.prob(part.top[s]);
    total += part.top_prob[s];
  }
  if (total <= 0.0) throw sampling_error("top popularity half has no sampleable item");
  std::vector<double> scaled(top_size);
  for (std::size_t s = 0; s < top_size; ++s)
    scaled[s] = part.top_prob[s] / total * static_cast<double>(top_size);
  build_alias(scaled, part.top_keep_prob, part.top_alias);
  return part;
}

std::uint32_t PopularityPartition::draw_top_pop(Rng& rng, const ItemSet& exclude,
                                                std::size_t max_retries) const {
  for (std::size_t attempt = 0; attempt < max_retries; ++attempt) {
    const std::size_t slot = rng.uniform_index(top.size());
    const double coin = rng.next_double();
    const std::uint32_t item = top[coin < top_keep_prob[slot] ? slot : top_alias[slot]];
    if (!exclude.count(item)) return item;
  }
  double total = 0.0;
  for (std::size_t s = 0; s < top.size(); ++s)
    if (!exclude.count(top[s])) total += top_prob[s];
  if (total <= 0.0) throw sampling_error("top-half support exhausted by exclusions");
  double r = rng.next_double() * total;
  std::uint32_t last = 0;
  for (std::size_t s = 0; s < top.size(); ++s) {
    if (exclude.count(top[s]) || top_prob[s] == 0.0) continue;
    last = top[s];
    r -= top_prob[s];
    if (r <= 0.0) return top[s];
  }
  return last;
}

std::uint32_t PopularityPartition::draw_bottom_unif(Rng& rng, const ItemSet& exclude,
                                                    std::size_t max_retries) const {
  for (std::size_t attempt = 0; attempt < max_retries; ++attempt) {
    const std::uint32_t item = bottom[rng.uniform_index(bottom.size())];
    if (!exclude.count(item)) return item;
  }
  std::vector<std::uint32_t> allowed;
  for (std::uint32_t i : bottom)
    if (!exclude.count(i)) allowed.push_back(i);
  if (allowed.empty()) throw sampling_error("bottom-half support exhausted by exclusions");
  return allowed[rng.uniform_index(allowed.size())];
}

namespace {

template <class PairFn>
QuadBatch build_quad_batch(const SplitDataset& split, std::size_t batch_size, Rng& rng,
                           PairFn&& pair_fn) {
  const auto targets = target_index(split);
  QuadBatch batch;
  batch.rows.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const auto [u, t] = targets[rng.uniform_index(targets.size())];
    QuadRow row;
    row.user = u;
    row.prefix_len = t;
    row.pos = split.train[u][t];
    ItemSet exclude{row.pos};
    std::tie(row.j, row.k) = pair_fn(exclude);
    batch.rows.push_back(std::move(row));
  }
  return batch;
}

}  // namespace

QuadBatch quad_weak(const SplitDataset& split, const PopularityDist& dist, SamplerMode mode,
                    std::size_t batch_size, Rng& rng) {
  return build_quad_batch(split, batch_size, rng, [&](const ItemSet& ex) {
    return weak_pair(dist, mode, ex, rng, 100);
  });
}

QuadBatch quad_strict(const SplitDataset& split, const PopularityDist& dist, SamplerMode mode,
                      std::size_t batch_size, Rng& rng) {
  check_strict_satisfiable(dist);
  return build_quad_batch(split, batch_size, rng, [&](const ItemSet& ex) {
    return strict_pair(dist, mode, ex, rng, 100);
  });
}

QuadBatch quad_disjoint(const SplitDataset& split, const PopularityDist& dist, SamplerMode mode,
                        std::size_t batch_size, Rng& rng) {
  const PopularityPartition part = make_partition(dist);
  return build_quad_batch(split, batch_size, rng, [&](const ItemSet& ex) {
    return disjoint_pair(part, mode, ex, rng, 100);
  });
}

SetBatch set_weak(const SplitDataset& split, const PopularityDist& dist, SamplerMode mode,
                  std::size_t batch_size, std::size_t n_j, std::size_t n_k, Rng& rng) {
  if (n_j == 0 || n_k == 0) throw sampling_error("negative set sizes must be positive");
  if (n_j + n_k + 1 > dist.num_items())
    throw sampling_error("catalog too small for the requested negative sets");
  const auto targets = target_index(split);
  SetBatch batch;
  batch.rows.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const auto [u, t] = targets[rng.uniform_index(targets.size())];
    SetRow row;
    row.user = u;
    row.prefix_len = t;
    row.pos = split.train[u][t];
    ItemSet ex{row.pos};
    row.neg_j.reserve(n_j);
    row.neg_k.reserve(n_k);
    for (std::size_t s = 0; s < n_j; ++s) {
      const std::uint32_t it = draw_first_negative(dist, mode, rng, ex, 100);
      row.neg_j.push_back(it);
      ex.insert(it);
    }
    for (std::size_t s = 0; s < n_k; ++s) {
      const std::uint32_t it = draw_second_negative(dist, mode, rng, ex, 100);
      row.neg_k.push_back(it);
      ex.insert(it);
    }
    batch.rows.push_back(std::move(row));
  }
  return batch;
}

NegativeSampler::NegativeSampler(const SplitDataset& split, SamplerConfig cfg)
    : split_(&split), cfg_(cfg), dist_(split.train_counts, cfg.alpha) {
  if (cfg_.transitivity == Transitivity::strict) check_strict_satisfiable(dist_);
  if (cfg_.transitivity == Transitivity::disjoint) partition_ = make_partition(dist_);
  if (cfg_.exclude_history) {
    history_.resize(split.num_users);
    for (std::size_t u = 0; u < split.num_users; ++u)
      history_[u] = ItemSet(split.train[u].begin(), split.train[u].end());
  }
}

ItemSet NegativeSampler::base_exclude(std::uint32_t user) const {
  if (cfg_.exclude_history) return history_[user];
  return {};
}

std::pair<std::uint32_t, std::uint32_t> NegativeSampler::quad(std::uint32_t user,
                                                              std::uint32_t positive,
                                                              Rng& rng) const {
  ItemSet ex = base_exclude(user);
  ex.insert(positive);
  switch (cfg_.transitivity) {
    case Transitivity::weak:
      return weak_pair(dist_, cfg_.mode, ex, rng, cfg_.max_retries);
    case Transitivity::strict:
      return strict_pair(dist_, cfg_.mode, ex, rng, cfg_.max_retries);
    case Transitivity::disjoint:
      return disjoint_pair(*partition_, cfg_.mode, ex, rng, cfg_.max_retries);
  }
  throw sampling_error("unknown transitivity");
}

void NegativeSampler::sets(std::uint32_t user, const std::vector<std::uint32_t>& positives,
                           Rng& rng, std::vector<std::uint32_t>& neg_j,
                           std::vector<std::uint32_t>& neg_k) const {
  if (cfg_.n_j + cfg_.n_k + positives.size() > dist_.num_items())
    throw sampling_error("catalog too small for the requested negative sets");
  ItemSet ex = base_exclude(user);
  ex.insert(positives.begin(), positives.end());
  neg_j.clear();
  neg_k.clear();
  neg_j.reserve(cfg_.n_j);
  neg_k.reserve(cfg_.n_k);
  for (std::size_t s = 0; s < cfg_.n_j; ++s) {
    const std::uint32_t it = draw_first_negative(dist_, cfg_.mode, rng, ex, cfg_.max_retries);
    neg_j.push_back(it);
    ex.insert(it);
  }
  for (std::size_t s = 0; s < cfg_.n_k; ++s) {
    const std::uint32_t it = draw_second_negative(dist_, cfg_.mode, rng, ex, cfg_.max_retries);
    neg_k.push_back(it);
    ex.insert(it);
  }
}

std::uint32_t NegativeSampler::uniform_negative(std::uint32_t user, std::uint32_t positive,
                                                Rng& rng) const {
  ItemSet ex = base_exclude(user);
  ex.insert(positive);
  return sample_unif(dist_.num_items(), rng, ex, cfg_.max_retries);
}

void NegativeSampler::uniform_set(std::uint32_t user,
                                  const std::vector<std::uint32_t>& positives, std::size_t count,
                                  Rng& rng, std::vector<std::uint32_t>& out) const {
  if (count + positives.size() > dist_.num_items())
    throw sampling_error("catalog too small for the requested negative set");
  ItemSet ex = base_exclude(user);
  ex.insert(positives.begin(), positives.end());
  out.clear();
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const std::uint32_t it = sample_unif(dist_.num_items(), rng, ex, cfg_.max_retries);
    out.push_back(it);
    ex.insert(it);
  }
}

}  // namespace transrec
