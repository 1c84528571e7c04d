#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "transrec/encoder.hpp"
#include "transrec/eval.hpp"
#include "transrec/losses.hpp"
#include "transrec/sampling.hpp"

namespace transrec {

class trainer_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
  double lr = 0.0003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled; added to the lr step, not the moments
  OptimizerKind kind = OptimizerKind::adam;
};

/// First/second moment buffers, one pair per named parameter tensor.
/// Plain SGD leaves the moments at zero and only advances the step counter.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

AdamState make_adam_state(const EncoderParameters& params);

/// One update from the gradients currently stored on the parameters:
/// bias-corrected Adam by default, plain SGD when configured. Missing
/// gradients count as zero. Updated values land on the float32 grid and the
/// item-embedding padding row is forced back to zero. Returns false (and
/// changes nothing) when any gradient is non-finite.
bool optimizer_step(EncoderParameters& params, AdamState& state, const OptimizerConfig& cfg);

/// A contiguous slice of one user's training sequence: inputs are the slice
/// without its last item, labels are the slice without its first.
struct Window {
  std::uint32_t user = 0;
  std::size_t begin = 0;
  std::size_t len = 0;  // slice length, >= 2
};

/// Non-overlapping label coverage of every training sequence, chunked from
/// the sequence end so the freshest window is always full-width.
std::vector<Window> enumerate_windows(const SplitDataset& split, std::size_t max_len);

struct TrainConfig {
  LossKind loss = LossKind::trans_bpr;
  double gamma = 1.0;
  OptimizerConfig opt;
  std::size_t batch_size = 256;  // windows per optimizer step
  std::size_t epochs = 200;
  std::size_t eval_every = 1;  // validation cadence in epochs
  std::size_t patience = 20;   // evaluations without validation improvement
  std::size_t eval_k = 10;
  std::size_t eval_batch = 64;
  std::uint64_t seed = 42;
  bool quiet = true;  // suppress per-epoch progress lines
};

struct TrajectoryRow {
  std::uint64_t step = 0;
  double total = 0.0;
  double original = 0.0;
  double preference = 0.0;
  double wall_clock = 0.0;  // seconds since training started; not in the CSV
};

struct EpochMetrics {
  std::size_t epoch = 0;
  Metrics valid;
};

struct TrainResult {
  EncoderParameters best;  // parameters at the best validation epoch
  double best_ndcg = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::size_t skipped_steps = 0;  // batches dropped for non-finite gradients
  std::vector<TrajectoryRow> trajectory;
  std::vector<EpochMetrics> valid_history;
};

/// Runs one optimization step over a batch of windows and reports the loss
/// terms. Exposed separately so short-horizon runs can drive it directly.
LossReport train_step(EncoderParameters& params, AdamState& adam, const SplitDataset& split,
                      const NegativeSampler& sampler, const std::vector<Window>& batch,
                      const TrainConfig& cfg, Rng& sample_rng, Rng& dropout_rng,
                      bool* applied = nullptr);

TrainResult train(EncoderParameters params, const SplitDataset& split,
                  const NegativeSampler& sampler, const TrainConfig& cfg);

void write_trajectory_csv(const std::string& path, const std::vector<TrajectoryRow>& rows);

}  // namespace transrec
