#include "transrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace transrec {

std::size_t rank_of_target(const std::vector<double>& scores, std::uint32_t target) {
  if (scores.size() < 2) throw eval_error("scores must cover at least one item");
  if (target == 0 || target >= scores.size())
    throw eval_error("target id outside the scored catalog");
  const double st = scores[target];
  std::size_t ahead = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (i == target) continue;
    if (scores[i] > st || (scores[i] == st && i < target)) ++ahead;
  }
  return 1 + ahead;
}

std::vector<RankedUser> rank_users(const EncoderParameters& params, const SplitDataset& split,
                                   bool test_half, std::size_t batch_size,
                                   bool exclude_history) {
  if (batch_size == 0) throw eval_error("batch_size must be positive");
  if (split.num_users == 0) throw eval_error("split has no users");
  NoGradGuard guard;
  std::vector<RankedUser> out;
  out.reserve(split.num_users);
  const std::size_t vocab = params.config.vocab;
  if (vocab < split.num_items + 1) throw eval_error("encoder vocab smaller than catalog");

  for (std::size_t begin = 0; begin < split.num_users; begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, split.num_users);
    std::vector<std::vector<std::uint32_t>> histories;
    histories.reserve(end - begin);
    for (std::size_t u = begin; u < end; ++u) {
      std::vector<std::uint32_t> h = split.train[u];
      if (test_half) h.push_back(split.valid_item[u]);
      histories.push_back(std::move(h));
    }
    auto reprs = last_position(encode(params, histories, false));
    auto scores = score_all_items(reprs, params.item_emb);  // [rows, vocab]
    const auto& sv = scores.value();
    for (std::size_t u = begin; u < end; ++u) {
      const double* row = sv.data() + (u - begin) * vocab;
      std::vector<double> user_scores(row, row + split.num_items + 1);
      RankedUser r;
      r.user = static_cast<std::uint32_t>(u);
      r.target = test_half ? split.test_item[u] : split.valid_item[u];
      if (exclude_history) {
        const double drop = -std::numeric_limits<double>::infinity();
        for (std::uint32_t it : histories[u - begin])
          if (it != r.target) user_scores[it] = drop;
      }
      r.rank = rank_of_target(user_scores, r.target);
      out.push_back(r);
    }
  }
  return out;
}

Metrics topk_metrics(const std::vector<RankedUser>& ranked, std::size_t k) {
  if (k == 0) throw eval_error("k must be positive");
  Metrics m;
  m.users = ranked.size();
  if (ranked.empty()) return m;
  for (const RankedUser& r : ranked) {
    if (r.rank <= k) {
      m.hr += 1.0;
      m.ndcg += 1.0 / std::log2(static_cast<double>(r.rank) + 1.0);
    }
  }
  m.hr /= static_cast<double>(m.users);
  m.ndcg /= static_cast<double>(m.users);
  return m;
}

std::vector<std::vector<std::uint32_t>> bucket_partition(
    const std::vector<std::uint64_t>& train_counts, std::size_t num_buckets) {
  if (train_counts.size() < 2) throw eval_error("train_counts must cover at least one item");
  const std::size_t n = train_counts.size() - 1;  // ids 1..n
  if (num_buckets == 0 || num_buckets > n)
    throw eval_error("bucket count must be in [1, num_items]");

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 1u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (train_counts[a] != train_counts[b]) return train_counts[a] > train_counts[b];
    return a < b;
  });

  std::vector<std::vector<std::uint32_t>> buckets(num_buckets);
  for (std::size_t b = 0; b < num_buckets; ++b) {
    const std::size_t lo = b * n / num_buckets;
    const std::size_t hi = (b + 1) * n / num_buckets;
    buckets[b].assign(order.begin() + static_cast<std::ptrdiff_t>(lo),
                      order.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  return buckets;
}

std::vector<BucketReport> bucket_scores(const EncoderParameters& params,
                                        const SplitDataset& split, std::size_t num_buckets,
                                        std::size_t batch_size) {
  if (batch_size == 0) throw eval_error("batch_size must be positive");
  if (split.num_users == 0) throw eval_error("split has no users");
  if (split.train_counts.size() != split.num_items + 1)
    throw eval_error("split is missing its train counts");
  const std::size_t vocab = params.config.vocab;
  if (vocab < split.num_items + 1) throw eval_error("encoder vocab smaller than catalog");

  auto partition = bucket_partition(split.train_counts, num_buckets);
  NoGradGuard guard;

  // Accumulate each item's total score across users first. Scores of one user
  // are strongly correlated across items, so the independent sampling unit for
  // comparing item subsets is the item's user-averaged score, not each
  // (user, item) pair.
  std::vector<double> item_sum(split.num_items + 1, 0.0);
  for (std::size_t begin = 0; begin < split.num_users; begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, split.num_users);
    std::vector<std::vector<std::uint32_t>> histories;
    histories.reserve(end - begin);
    for (std::size_t u = begin; u < end; ++u) {
      std::vector<std::uint32_t> h = split.train[u];
      h.push_back(split.valid_item[u]);
      histories.push_back(std::move(h));
    }
    auto reprs = last_position(encode(params, histories, false));
    auto scores = score_all_items(reprs, params.item_emb);
    const auto& sv = scores.value();
    for (std::size_t u = begin; u < end; ++u) {
      const double* row = sv.data() + (u - begin) * vocab;
      for (std::size_t item = 1; item <= split.num_items; ++item)
        item_sum[item] += row[item];
    }
  }

  const double users = static_cast<double>(split.num_users);
  std::vector<BucketReport> out(num_buckets);
  for (std::size_t b = 0; b < num_buckets; ++b) {
    BucketReport& r = out[b];
    r.index = b;
    r.num_items = partition[b].size();
    r.samples = partition[b].size() * split.num_users;
    double mean = 0.0;
    for (std::uint32_t item : partition[b]) mean += item_sum[item] / users;
    const double n = static_cast<double>(partition[b].size());
    mean /= n;
    r.mean_score = mean;
    if (partition[b].size() > 1) {
      double ss = 0.0;
      for (std::uint32_t item : partition[b]) {
        const double d = item_sum[item] / users - mean;
        ss += d * d;
      }
      r.std_error = std::sqrt(ss / (n - 1.0) / n);
    }
  }
  return out;
}

TrajectorySummary summarize_series(const std::vector<double>& step,
                                   const std::vector<double>& value) {
  if (step.size() != value.size()) throw eval_error("series length mismatch");
  if (step.empty()) throw eval_error("cannot summarize an empty series");
  TrajectorySummary s;
  s.rows = step.size();

  const std::size_t tail = (s.rows + 9) / 10;
  double acc = 0.0;
  for (std::size_t i = s.rows - tail; i < s.rows; ++i) acc += value[i];
  s.final_mean = acc / static_cast<double>(tail);

  if (s.rows >= 2) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < s.rows; ++i) {
      mx += step[i];
      my += value[i];
    }
    mx /= static_cast<double>(s.rows);
    my /= static_cast<double>(s.rows);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < s.rows; ++i) {
      sxy += (step[i] - mx) * (value[i] - my);
      sxx += (step[i] - mx) * (step[i] - mx);
    }
    if (sxx == 0.0) throw eval_error("series has no step variation");
    s.slope = sxy / sxx;
  }
  return s;
}

std::vector<std::pair<std::string, TrajectorySummary>> compare_trajectories(
    const std::vector<NamedSeries>& series) {
  if (series.empty()) throw eval_error("no trajectories to compare");
  for (const NamedSeries& s : series)
    if (s.step != series.front().step)
      throw eval_error("trajectory step ranges differ between " + series.front().scheme +
                       " and " + s.scheme);
  std::vector<std::pair<std::string, TrajectorySummary>> out;
  out.reserve(series.size());
  for (const NamedSeries& s : series)
    out.emplace_back(s.scheme, summarize_series(s.step, s.value));
  return out;
}

std::pair<std::vector<double>, std::vector<double>> read_trajectory_column(
    const std::string& path, const std::string& column) {
  std::ifstream in(path);
  if (!in) throw eval_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw eval_error(path + ": empty trajectory file");

  auto split_csv = [](const std::string& s) {
    std::vector<std::string> fields;
    std::stringstream ss(s);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    return fields;
  };

  auto header = split_csv(line);
  std::size_t step_col = header.size(), value_col = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "step") step_col = i;
    if (header[i] == column) value_col = i;
  }
  if (step_col == header.size()) throw eval_error(path + ": no step column");
  if (value_col == header.size()) throw eval_error(path + ": no column named " + column);

  std::vector<double> steps, values;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() != header.size())
      throw eval_error(path + ":" + std::to_string(lineno) + ": field count mismatch");
    try {
      steps.push_back(std::stod(fields[step_col]));
      values.push_back(std::stod(fields[value_col]));
    } catch (const std::exception&) {
      throw eval_error(path + ":" + std::to_string(lineno) + ": non-numeric field");
    }
  }
  return {std::move(steps), std::move(values)};
}

TrajectorySummary summarize_trajectory_csv(const std::string& path,
                                           const std::string& column) {
  auto [steps, values] = read_trajectory_column(path, column);
  return summarize_series(steps, values);
}

void write_metrics_json(const std::string& path, const Metrics& metrics, std::size_t k,
                        const std::string& split_name, const std::string& config_digest) {
  nlohmann::json j;
  j["split"] = split_name;
  j["k"] = k;
  j["n_users"] = metrics.users;
  j["hr"] = metrics.hr;
  j["ndcg"] = metrics.ndcg;
  j["config_digest"] = config_digest;
  std::ofstream out(path);
  if (!out) throw eval_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

void write_buckets_csv(const std::string& path, const std::vector<BucketReport>& buckets) {
  std::ofstream out(path);
  if (!out) throw eval_error("cannot write " + path);
  out << "bucket_index,item_count,mean_score\n";
  out.precision(17);
  for (const BucketReport& b : buckets)
    out << b.index << "," << b.num_items << "," << b.mean_score << "\n";
  if (!out) throw eval_error("write failed for " + path);
}

void write_trajectory_summary_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, TrajectorySummary>>& rows) {
  std::ofstream out(path);
  if (!out) throw eval_error("cannot write " + path);
  out << "scheme,rows,final_mean,slope\n";
  out.precision(17);
  for (const auto& [scheme, s] : rows)
    out << scheme << "," << s.rows << "," << s.final_mean << "," << s.slope << "\n";
  if (!out) throw eval_error("write failed for " + path);
}

}  // namespace transrec
