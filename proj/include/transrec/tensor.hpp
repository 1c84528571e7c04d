#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace transrec {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct tensor_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily by backward
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

/// Dense row-major array of doubles with an optional reverse-mode tape record.
/// A Tensor is a cheap shared handle; ops build fresh nodes, leaves are the
/// trainable parameters. One tape stays on one thread for forward+backward.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& value_mut() { return node_->value; }
  bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
  const std::vector<double>& grad() const;
  std::vector<double>& grad_mut();
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool b) {
    node_->requires_grad = b;
    node_->is_leaf = true;
  }

  /// Value of a single-element tensor.
  double item() const;

  std::shared_ptr<TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Scoped switch that disables tape recording (evaluation paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Elementwise binary ops broadcast right-aligned: missing leading dims and
// size-1 dims expand; nothing else does.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);  // rejects non-positive inputs
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);  // log(1 + e^x), overflow-safe
Tensor relu(const Tensor& a);

// matmul supports [m,k]x[k,n], [B,m,k]x[k,n] and [B,m,k]x[B,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_lastdim(const Tensor& a, const Tensor& b);

/// Row lookup into a [V,d] table; backward scatter-adds, so duplicate ids
/// accumulate into the shared row.
Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& ids);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_lastdim(const Tensor& a);

// [B,L,d] <-> [B*heads, L, d/heads] for multi-head attention.
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x, std::size_t heads);

/// Per-last-axis normalization with affine gain/bias, exact backward.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-8);

/// Softmax over the last axis of [B*heads, L, L] attention scores where entry
/// (q, k) participates only if k <= q and key_valid[b*L + k] is set. A query
/// with no surviving keys falls back to attending to itself so outputs stay
/// finite (such rows are padding and never read).
Tensor causal_masked_softmax(const Tensor& scores, std::vector<std::uint8_t> key_valid,
                             std::size_t heads);

/// Cross-entropy of index 0 against a softmax over the last axis, max-shifted:
/// out = logsumexp(l) - l[0]. A 1-D input yields a scalar.
Tensor softmax_ce_over_set(const Tensor& logits);

/// Mean over the last axis of a of log[exp(a_j) / (exp(a_j) + sum_k exp(b_k))]
/// with b's last axis as the contrast set. Shapes [.., na] and [.., nb] with
/// equal leading dims; 1-D inputs yield a scalar.
Tensor mean_win_logprob(const Tensor& a, const Tensor& b);

/// Inverted dropout; identity when train is false or p == 0.
Tensor dropout(const Tensor& x, double p, bool train, Rng& rng);

/// Reverse-topological sweep from a scalar root. Leaf grads accumulate across
/// calls; interior grads are rebuilt fresh on every call.
void backward(const Tensor& root);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Scalar kernels shared with non-tape code paths.
double stable_sigmoid(double x);
double stable_softplus(double x);

}  // namespace transrec
