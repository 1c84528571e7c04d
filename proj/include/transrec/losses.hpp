#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "transrec/tensor.hpp"

namespace transrec {

class loss_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LossKind { bpr, bce, ssm, trans_bpr, trans_bce, trans_ssm };

LossKind parse_loss_name(const std::string& name);
std::string loss_name(LossKind kind);

/// Transitive kinds add a gamma-weighted term asking the sampled first
/// negative to outrank the sampled second negative.
bool is_transitive(LossKind kind);

/// Set kinds (ssm, trans_ssm) score each positive against whole negative
/// sets instead of a single sampled pair.
bool uses_sets(LossKind kind);

struct LossReport {
  double total = 0.0;
  double original = 0.0;
  double preference = 0.0;  // stays 0 for non-transitive kinds
  std::size_t count = 0;    // rows reduced into the batch mean
};

struct LossOutput {
  Tensor loss;  // scalar graph node, backprop through this
  LossReport report;
};

/// Pairwise/pointwise losses over per-row scores. `pos`, `neg_j` are [n];
/// `neg_k` is required (same shape) only for transitive kinds.
LossOutput quad_loss(LossKind kind, const Tensor& pos, const Tensor& neg_j,
                     const Tensor& neg_k, double gamma);

/// Sampled-softmax losses. `pos` is [n], `neg_j` is [n, n_j]; `neg_k` [n, n_k]
/// is required only for trans_ssm.
LossOutput set_loss(LossKind kind, const Tensor& pos, const Tensor& neg_j,
                    const Tensor& neg_k, double gamma);

}  // namespace transrec
