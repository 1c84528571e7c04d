#include "transrec/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "transrec/encoder.hpp"
#include "transrec/losses.hpp"
#include "transrec/rng.hpp"

namespace transrec {

double gradcheck_max_err(const std::vector<Tensor>& leaves,
                         const std::function<Tensor()>& forward, double step) {
  std::vector<std::vector<double>> ad_grads;
  {
    for (auto leaf : leaves) {
      leaf.set_requires_grad(true);
      leaf.zero_grad();
    }
    Tensor out = forward();
    backward(out);
    for (const auto& leaf : leaves) ad_grads.push_back(leaf.grad());
  }

  double worst = 0.0;
  NoGradGuard ng;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li];
    auto& vals = leaf.value_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + step;
      const double f_plus = forward().item();
      vals[i] = keep - step;
      const double f_minus = forward().item();
      vals[i] = keep;
      const double fd = (f_plus - f_minus) / (2.0 * step);
      const double ad = ad_grads[li][i];
      const double err = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1.0});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = lo + (hi - lo) * rng.next_double();
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

}  // namespace

std::vector<GradCheckCase> gradcheck_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheckCase> out;
  auto run = [&](const std::string& name, const std::vector<Tensor>& leaves,
                 const std::function<Tensor()>& forward, double tol) {
    GradCheckCase c;
    c.name = name;
    c.tol = tol;
    c.err = gradcheck_max_err(leaves, forward);
    c.pass = c.err <= tol;
    out.push_back(c);
  };
  const double op_tol = 1e-6;

  {
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    run("add", {a, b}, [=] { return sum_all(mul(add(a, b), add(a, b))); }, op_tol);
    run("sub", {a, b}, [=] { return sum_all(mul(sub(a, b), add(a, b))); }, op_tol);
    run("mul", {a, b}, [=] { return sum_all(mul(mul(a, b), b)); }, op_tol);
    run("neg_scale", {a}, [=] { return sum_all(mul(neg(scale(a, 1.7)), a)); }, op_tol);
    run("add_const", {a}, [=] { return mean_all(mul(add_const(a, 0.3), a)); }, op_tol);
    run("exp", {a}, [=] { return mean_all(exp_op(scale(a, 0.5))); }, op_tol);
    run("log", {a}, [=] { return mean_all(log_op(add_const(exp_op(a), 0.1))); }, op_tol);
    run("sigmoid", {a}, [=] { return mean_all(sigmoid(a)); }, op_tol);
    run("softplus", {a}, [=] { return mean_all(softplus(a)); }, op_tol);
    run("relu", {a}, [=] { return mean_all(relu(add_const(a, 0.05))); }, op_tol);
    run("sum_lastdim", {a}, [=] { return sum_all(mul(sum_lastdim(a), sum_lastdim(a))); },
        op_tol);
  }
  {
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 5}, rng);
    run("matmul_2d", {a, b}, [=] { return mean_all(mul(matmul(a, b), matmul(a, b))); },
        op_tol);
    auto c = random_tensor({2, 3, 4}, rng);
    run("matmul_batched_rhs2d", {c, b},
        [=] { return mean_all(mul(matmul(c, b), matmul(c, b))); }, op_tol);
    auto d = random_tensor({2, 4, 3}, rng);
    run("matmul_batched", {c, d}, [=] { return mean_all(matmul(c, d)); }, op_tol);
    run("transpose_reshape", {c}, [=] {
      auto t = transpose_last2(c);
      return sum_all(mul(reshape(t, {6, 4}), reshape(t, {6, 4})));
    }, op_tol);
    run("concat_lastdim", {a, c}, [=] {
      auto flat = reshape(c, {3, 8});
      auto cat = concat_lastdim(a, flat);
      return mean_all(mul(cat, cat));
    }, op_tol);
  }
  {
    auto table = random_tensor({5, 3}, rng);
    std::vector<std::int64_t> ids = {4, 0, 2, 2, 1};
    run("gather_rows", {table}, [=] {
      auto g = gather_rows(table, ids);
      return mean_all(mul(g, g));
    }, op_tol);
    auto x = random_tensor({4, 6}, rng);
    run("split_merge_heads", {x}, [=] {
      auto h = merge_heads(split_heads(reshape(x, {2, 2, 6}), 2), 2);
      return mean_all(mul(h, h));
    }, op_tol);
  }
  {
    auto x = random_tensor({3, 5}, rng);
    auto gain = random_tensor({5}, rng, 0.5, 1.5);
    auto bias = random_tensor({5}, rng, -0.5, 0.5);
    run("layer_norm", {x, gain, bias}, [=] {
      auto y = layer_norm(x, gain, bias);
      return mean_all(mul(y, y));
    }, op_tol);
  }
  {
    auto scores = random_tensor({2, 3, 3}, rng);
    std::vector<std::uint8_t> key_valid = {1, 1, 1, 0, 1, 1};
    run("causal_masked_softmax", {scores}, [=] {
      auto p = causal_masked_softmax(scores, key_valid, 1);
      return mean_all(mul(p, p));
    }, op_tol);
  }
  {
    auto logits = random_tensor({4, 6}, rng);
    run("softmax_ce_over_set", {logits},
        [=] { return mean_all(softmax_ce_over_set(logits)); }, op_tol);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 5}, rng);
    run("mean_win_logprob", {a, b}, [=] { return mean_all(mean_win_logprob(a, b)); },
        op_tol);
  }

  const double loss_tol = 1e-6;
  for (LossKind kind : {LossKind::bpr, LossKind::bce, LossKind::trans_bpr, LossKind::trans_bce}) {
    auto pos = random_tensor({6}, rng, -3.0, 3.0);
    auto nj = random_tensor({6}, rng, -3.0, 3.0);
    auto nk = random_tensor({6}, rng, -3.0, 3.0);
    const double gamma = is_transitive(kind) ? 0.7 : 0.0;
    std::vector<Tensor> leaves = {pos, nj};
    if (is_transitive(kind)) leaves.push_back(nk);
    run("loss_" + loss_name(kind), leaves, [=] {
      return quad_loss(kind, pos, nj, is_transitive(kind) ? nk : Tensor(), gamma).loss;
    }, loss_tol);
  }
  {
    auto pos = random_tensor({4}, rng, -3.0, 3.0);
    auto nj = random_tensor({4, 5}, rng, -3.0, 3.0);
    auto nk = random_tensor({4, 3}, rng, -3.0, 3.0);
    run("loss_ssm", {pos, nj},
        [=] { return set_loss(LossKind::ssm, pos, nj, Tensor(), 0.0).loss; }, loss_tol);
    run("loss_trans_ssm", {pos, nj, nk},
        [=] { return set_loss(LossKind::trans_ssm, pos, nj, nk, 0.7).loss; }, loss_tol);
  }

  {
    EncoderConfig cfg;
    cfg.max_len = 4;
    cfg.dim = 4;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.dropout = 0.0;
    cfg.vocab = 8;
    auto params = init_encoder(cfg, seed + 1);
    std::vector<std::uint32_t> padded = {0, 3, 1, 6, 2, 5, 7, 4};
    std::vector<std::uint8_t> key_valid = {0, 1, 1, 1, 1, 1, 1, 1};
    std::vector<Tensor> leaves;
    for (auto& [name, t] : params.named()) leaves.push_back(t);
    run("tiny_encoder", leaves, [=] {
      auto x = encode_padded(params, padded, key_valid, false, nullptr);
      return mean_all(mul(x, x));
    }, 1e-4);
  }
  return out;
}

}  // namespace transrec
