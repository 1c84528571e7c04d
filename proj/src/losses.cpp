#include "transrec/losses.hpp"

#include <cmath>

namespace transrec {

namespace {

// per-row -log sigmoid(hi - lo), overflow-safe
Tensor rank_margin(const Tensor& hi, const Tensor& lo) { return softplus(sub(lo, hi)); }

// per-row -log sigmoid(s): the "should score high" half of the pointwise loss
Tensor point_pos(const Tensor& s) { return softplus(neg(s)); }

// per-row -log(1 - sigmoid(s)): the "should score low" half
Tensor point_neg(const Tensor& s) { return softplus(s); }

// per-row -log( e^{pos} / (e^{pos} + sum_m e^{negs_m}) )
Tensor set_ce(const Tensor& pos, const Tensor& negs) {
  const std::size_t n = pos.numel();
  return softmax_ce_over_set(concat_lastdim(reshape(pos, {n, 1}), negs));
}

void check_vector(const Tensor& t, std::size_t n, const char* what) {
  if (!t.defined() || t.dim() != 1 || t.numel() != n)
    throw loss_error(std::string(what) + " must be a score vector matching the batch");
}

void check_set(const Tensor& t, std::size_t n, const char* what) {
  if (!t.defined() || t.dim() != 2 || t.shape()[0] != n || t.shape()[1] < 1)
    throw loss_error(std::string(what) + " must be a [batch x set] score matrix");
}

void check_gamma(double gamma) {
  if (!std::isfinite(gamma) || gamma < 0.0)
    throw loss_error("gamma must be finite and non-negative");
}

LossOutput assemble(const Tensor& original, const Tensor* preference, double gamma,
                    std::size_t count) {
  LossOutput out;
  out.report.original = original.value()[0];
  out.report.count = count;
  if (preference) {
    out.report.preference = preference->value()[0];
    out.loss = add(original, scale(*preference, gamma));
  } else {
    out.loss = original;
  }
  out.report.total = out.loss.value()[0];
  return out;
}

}  // namespace

LossKind parse_loss_name(const std::string& name) {
  if (name == "bpr") return LossKind::bpr;
  if (name == "bce") return LossKind::bce;
  if (name == "ssm") return LossKind::ssm;
  if (name == "trans_bpr") return LossKind::trans_bpr;
  if (name == "trans_bce") return LossKind::trans_bce;
  if (name == "trans_ssm") return LossKind::trans_ssm;
  throw loss_error("unknown loss name: " + name);
}

std::string loss_name(LossKind kind) {
  switch (kind) {
    case LossKind::bpr: return "bpr";
    case LossKind::bce: return "bce";
    case LossKind::ssm: return "ssm";
    case LossKind::trans_bpr: return "trans_bpr";
    case LossKind::trans_bce: return "trans_bce";
    case LossKind::trans_ssm: return "trans_ssm";
  }
  throw loss_error("unknown loss kind");
}

bool is_transitive(LossKind kind) {
  return kind == LossKind::trans_bpr || kind == LossKind::trans_bce ||
         kind == LossKind::trans_ssm;
}

bool uses_sets(LossKind kind) { return kind == LossKind::ssm || kind == LossKind::trans_ssm; }

LossOutput quad_loss(LossKind kind, const Tensor& pos, const Tensor& neg_j,
                     const Tensor& neg_k, double gamma) {
  if (uses_sets(kind)) throw loss_error(loss_name(kind) + " needs negative sets, not pairs");
  check_gamma(gamma);
  if (!pos.defined() || pos.dim() != 1 || pos.numel() == 0)
    throw loss_error("positive scores must be a non-empty vector");
  const std::size_t n = pos.numel();
  check_vector(neg_j, n, "first negative scores");
  if (is_transitive(kind)) check_vector(neg_k, n, "second negative scores");

  switch (kind) {
    case LossKind::bpr:
      return assemble(mean_all(rank_margin(pos, neg_j)), nullptr, gamma, n);
    case LossKind::bce:
      return assemble(mean_all(add(point_pos(pos), point_neg(neg_j))), nullptr, gamma, n);
    case LossKind::trans_bpr: {
      auto original = mean_all(rank_margin(pos, neg_j));
      auto preference = mean_all(rank_margin(neg_j, neg_k));
      return assemble(original, &preference, gamma, n);
    }
    case LossKind::trans_bce: {
      auto original = mean_all(add(point_pos(pos), point_neg(neg_j)));
      auto preference = mean_all(add(point_pos(neg_j), point_neg(neg_k)));
      return assemble(original, &preference, gamma, n);
    }
    default: throw loss_error("unreachable quad kind");
  }
}

LossOutput set_loss(LossKind kind, const Tensor& pos, const Tensor& neg_j,
                    const Tensor& neg_k, double gamma) {
  if (!uses_sets(kind)) throw loss_error(loss_name(kind) + " takes pairs, not negative sets");
  check_gamma(gamma);
  if (!pos.defined() || pos.dim() != 1 || pos.numel() == 0)
    throw loss_error("positive scores must be a non-empty vector");
  const std::size_t n = pos.numel();
  check_set(neg_j, n, "first negative set");

  auto original = mean_all(set_ce(pos, neg_j));
  if (kind == LossKind::ssm) return assemble(original, nullptr, gamma, n);

  check_set(neg_k, n, "second negative set");
  auto preference = neg(mean_all(mean_win_logprob(neg_j, neg_k)));
  return assemble(original, &preference, gamma, n);
}

}  // namespace transrec
