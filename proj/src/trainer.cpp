#include "transrec/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace transrec {

namespace {

double f32_grid(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

AdamState make_adam_state(const EncoderParameters& params) {
  AdamState state;
  for (const auto& [name, t] : params.named()) {
    state.m.emplace_back(t.numel(), 0.0);
    state.v.emplace_back(t.numel(), 0.0);
  }
  return state;
}

bool optimizer_step(EncoderParameters& params, AdamState& state, const OptimizerConfig& cfg) {
  auto named = params.named();
  if (named.size() != state.m.size())
    throw trainer_error("optimizer state does not match the parameter list");

  for (const auto& [name, t] : named) {
    if (!t.has_grad()) continue;
    for (double g : t.grad())
      if (!std::isfinite(g)) return false;
  }

  state.t += 1;
  const bool adam = cfg.kind == OptimizerKind::adam;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < named.size(); ++p) {
    auto& [name, tensor] = named[p];
    auto& vals = tensor.value_mut();
    auto& m = state.m[p];
    auto& v = state.v[p];
    const bool has = tensor.has_grad();
    const std::vector<double>* grad = has ? &tensor.grad() : nullptr;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double g = has ? (*grad)[i] : 0.0;
      double update;
      if (adam) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
      } else {
        update = g;
      }
      vals[i] = f32_grid(vals[i] - cfg.lr * (update + cfg.weight_decay * vals[i]));
    }
  }
  // the padding embedding never trains
  auto& emb = params.item_emb.value_mut();
  for (std::size_t c = 0; c < params.config.dim; ++c) emb[c] = 0.0;
  return true;
}

std::vector<Window> enumerate_windows(const SplitDataset& split, std::size_t max_len) {
  if (max_len == 0) throw trainer_error("max_len must be positive");
  std::vector<Window> out;
  for (std::uint32_t u = 0; u < split.num_users; ++u) {
    const std::size_t m = split.train[u].size();
    if (m < 2) continue;
    std::size_t label_end = m;  // labels occupy indices [1, m)
    while (label_end > 1) {
      const std::size_t label_begin = label_end > max_len + 1 ? label_end - max_len : 1;
      Window w;
      w.user = u;
      w.begin = label_begin - 1;
      w.len = label_end - w.begin;
      out.push_back(w);
      label_end = label_begin;
    }
  }
  return out;
}

LossReport train_step(EncoderParameters& params, AdamState& adam, const SplitDataset& split,
                      const NegativeSampler& sampler, const std::vector<Window>& batch,
                      const TrainConfig& cfg, Rng& sample_rng, Rng& dropout_rng,
                      bool* applied) {
  if (batch.empty()) throw trainer_error("empty window batch");
  const std::size_t l = params.config.max_len;
  const std::size_t d = params.config.dim;
  const std::size_t b = batch.size();

  std::vector<std::uint32_t> padded(b * l, 0);
  std::vector<std::uint8_t> key_valid(b * l, 0);
  std::vector<std::int64_t> valid_idx;
  std::vector<std::int64_t> pos_ids;
  for (std::size_t w = 0; w < b; ++w) {
    const Window& win = batch[w];
    if (win.user >= split.num_users || win.len < 2 ||
        win.begin + win.len > split.train[win.user].size())
      throw trainer_error("window outside its training sequence");
    const auto& seq = split.train[win.user];
    const std::size_t in_len = win.len - 1;
    if (in_len > l) throw trainer_error("window wider than the model window");
    const std::size_t off = l - in_len;
    for (std::size_t t = 0; t < in_len; ++t) {
      padded[w * l + off + t] = seq[win.begin + t];
      key_valid[w * l + off + t] = 1;
      valid_idx.push_back(static_cast<std::int64_t>(w * l + off + t));
      pos_ids.push_back(static_cast<std::int64_t>(seq[win.begin + t + 1]));
    }
  }
  const std::size_t p_total = valid_idx.size();

  const bool train_mode = true;
  Tensor x = encode_padded(params, padded, key_valid, train_mode, &dropout_rng);
  Tensor reprs = gather_rows(reshape(x, {b * l, d}), valid_idx);
  Tensor s_pos = score_pairs(reprs, params.item_emb, pos_ids);

  LossOutput out;
  if (!uses_sets(cfg.loss)) {
    std::vector<std::int64_t> j_ids(p_total), k_ids(p_total);
    const bool transitive = is_transitive(cfg.loss);
    std::size_t p = 0;
    for (std::size_t w = 0; w < b; ++w) {
      const Window& win = batch[w];
      const auto& seq = split.train[win.user];
      for (std::size_t t = 0; t + 1 < win.len; ++t, ++p) {
        const std::uint32_t positive = seq[win.begin + t + 1];
        if (transitive) {
          auto [j, k] = sampler.quad(win.user, positive, sample_rng);
          j_ids[p] = static_cast<std::int64_t>(j);
          k_ids[p] = static_cast<std::int64_t>(k);
        } else {
          j_ids[p] = static_cast<std::int64_t>(
              sampler.uniform_negative(win.user, positive, sample_rng));
        }
      }
    }
    Tensor s_j = score_pairs(reprs, params.item_emb, j_ids);
    Tensor s_k =
        transitive ? score_pairs(reprs, params.item_emb, k_ids) : Tensor();
    out = quad_loss(cfg.loss, s_pos, s_j, s_k, cfg.gamma);
  } else {
    const bool transitive = is_transitive(cfg.loss);
    const std::size_t nj = sampler.config().n_j;
    const std::size_t nk = sampler.config().n_k;
    std::vector<std::int64_t> j_flat(b * nj), k_flat(b * nk);
    std::vector<std::uint32_t> neg_j, neg_k, positives;
    for (std::size_t w = 0; w < b; ++w) {
      const Window& win = batch[w];
      const auto& seq = split.train[win.user];
      positives.assign(seq.begin() + static_cast<std::ptrdiff_t>(win.begin + 1),
                       seq.begin() + static_cast<std::ptrdiff_t>(win.begin + win.len));
      std::sort(positives.begin(), positives.end());
      positives.erase(std::unique(positives.begin(), positives.end()), positives.end());
      if (transitive) {
        sampler.sets(win.user, positives, sample_rng, neg_j, neg_k);
        for (std::size_t s = 0; s < nk; ++s)
          k_flat[w * nk + s] = static_cast<std::int64_t>(neg_k[s]);
      } else {
        sampler.uniform_set(win.user, positives, nj, sample_rng, neg_j);
      }
      for (std::size_t s = 0; s < nj; ++s)
        j_flat[w * nj + s] = static_cast<std::int64_t>(neg_j[s]);
    }
    Tensor emb_j = reshape(gather_rows(params.item_emb, j_flat), {b, nj, d});
    Tensor s_j = gather_rows(reshape(matmul(x, transpose_last2(emb_j)), {b * l, nj}), valid_idx);
    Tensor s_k;
    if (transitive) {
      Tensor emb_k = reshape(gather_rows(params.item_emb, k_flat), {b, nk, d});
      s_k = gather_rows(reshape(matmul(x, transpose_last2(emb_k)), {b * l, nk}), valid_idx);
    }
    out = set_loss(cfg.loss, s_pos, s_j, s_k, cfg.gamma);
  }

  for (auto& [name, t] : params.named()) t.zero_grad();
  backward(out.loss);
  const bool ok = optimizer_step(params, adam, cfg.opt);
  if (applied) *applied = ok;
  return out.report;
}

TrainResult train(EncoderParameters params, const SplitDataset& split,
                  const NegativeSampler& sampler, const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw trainer_error("batch_size must be positive");
  if (cfg.epochs == 0) throw trainer_error("epochs must be positive");
  if (cfg.eval_every == 0) throw trainer_error("eval_every must be positive");
  auto windows = enumerate_windows(split, params.config.max_len);
  if (windows.empty()) throw trainer_error("no trainable windows in the split");

  AdamState adam = make_adam_state(params);
  Rng sample_rng = Rng::stream(cfg.seed, "sampler");
  Rng dropout_rng = Rng::stream(cfg.seed, "dropout");
  Rng shuffle_rng = Rng::stream(cfg.seed, "shuffle");

  TrainResult res;
  res.best = params.clone();
  res.best_ndcg = -1.0;
  std::size_t stale = 0;
  std::uint64_t step = 0;
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(windows);
    for (std::size_t b0 = 0; b0 < windows.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(b0 + cfg.batch_size, windows.size());
      std::vector<Window> batch(windows.begin() + static_cast<std::ptrdiff_t>(b0),
                                windows.begin() + static_cast<std::ptrdiff_t>(b1));
      bool ok = false;
      auto report =
          train_step(params, adam, split, sampler, batch, cfg, sample_rng, dropout_rng, &ok);
      ++step;
      if (!ok) {
        ++res.skipped_steps;
        std::fprintf(stderr, "warning: step %llu skipped, non-finite gradients\n",
                     static_cast<unsigned long long>(step));
      }
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      res.trajectory.push_back(
          {step, report.total, report.original, report.preference, elapsed});
    }
    res.epochs_run = epoch + 1;

    const bool last_epoch = epoch + 1 == cfg.epochs;
    if ((epoch + 1) % cfg.eval_every != 0 && !last_epoch) continue;

    auto ranked = rank_users(params, split, false, cfg.eval_batch);
    auto metrics = topk_metrics(ranked, cfg.eval_k);
    res.valid_history.push_back({epoch, metrics});
    if (!cfg.quiet)
      std::fprintf(stderr, "epoch %zu loss %.5f valid hr@%zu %.4f ndcg@%zu %.4f\n", epoch,
                   res.trajectory.back().total, cfg.eval_k, metrics.hr, cfg.eval_k,
                   metrics.ndcg);

    if (metrics.ndcg > res.best_ndcg) {
      res.best_ndcg = metrics.ndcg;
      res.best_epoch = epoch;
      res.best = params.clone();
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return res;
}

void write_trajectory_csv(const std::string& path, const std::vector<TrajectoryRow>& rows) {
  std::ofstream out(path);
  if (!out) throw trainer_error("cannot write " + path);
  out << "step,total,original,preference\n";
  out.precision(17);
  for (const TrajectoryRow& r : rows)
    out << r.step << "," << r.total << "," << r.original << "," << r.preference << "\n";
  if (!out) throw trainer_error("write failed for " + path);
}

}  // namespace transrec
