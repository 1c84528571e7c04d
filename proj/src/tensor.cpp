#include "transrec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "transrec/rng.hpp"

namespace transrec {

namespace {

thread_local int g_no_grad_depth = 0;

std::shared_ptr<TensorNode> make_record(Shape shape, std::vector<double> value,
                                        std::vector<std::shared_ptr<TensorNode>> parents,
                                        std::function<void(TensorNode&)> bp) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) {
      if (p->requires_grad) {
        needs = true;
        break;
      }
    }
  }
  if (needs) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->parents = std::move(parents);
    n->backprop = std::move(bp);
  }
  return n;
}

void check_defined(const Tensor& t, const char* who) {
  if (!t.defined()) throw tensor_error(std::string(who) + ": undefined tensor");
}

// Right-aligned broadcast shape of two operand shapes, or throw.
Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (std::size_t k = 0; k < nd; ++k) {
    const std::size_t da = k < nd - a.size() ? 1 : a[k - (nd - a.size())];
    const std::size_t db = k < nd - b.size() ? 1 : b[k - (nd - b.size())];
    if (da == db) {
      out[k] = da;
    } else if (da == 1 || db == 1) {
      out[k] = std::max(da, db);
    } else {
      throw tensor_error("shapes " + shape_str(a) + " and " + shape_str(b) +
                         " are not broadcast-compatible");
    }
  }
  return out;
}

// Strides of `op` aligned to `out` dims; 0 where the operand broadcasts.
std::vector<std::size_t> aligned_strides(const Shape& op, const Shape& out) {
  const std::size_t nd = out.size();
  std::vector<std::size_t> st(nd, 0);
  std::size_t run = 1;
  for (std::size_t k = op.size(); k-- > 0;) {
    const std::size_t ok = nd - op.size() + k;
    st[ok] = (op[k] == 1 && out[ok] != 1) ? 0 : run;
    run *= op[k];
  }
  return st;
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t k = s.size(); k-- > 1;) st[k - 1] = st[k] * s[k];
  return st;
}

// Elementwise binary op with broadcasting. dfa/dfb give d(out)/d(operand)
// as functions of (va, vb).
template <class F, class DFA, class DFB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f, DFA dfa, DFB dfb) {
  check_defined(a, name);
  check_defined(b, name);
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  std::vector<double> out(n);

  const auto& va = a.value();
  const auto& vb = b.value();
  const bool same = a.shape() == b.shape();
  if (same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(va[i], vb[i]);
  } else {
    const auto os = row_major_strides(out_shape);
    const auto sa = aligned_strides(a.shape(), out_shape);
    const auto sb = aligned_strides(b.shape(), out_shape);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t rem = i, ia = 0, ib = 0;
      for (std::size_t k = 0; k < os.size(); ++k) {
        const std::size_t c = rem / os[k];
        rem %= os[k];
        ia += c * sa[k];
        ib += c * sb[k];
      }
      out[i] = f(va[ia], vb[ib]);
    }
  }

  auto bp = [same, out_shape, dfa, dfb](TensorNode& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const auto& g = self.grad;
    const auto& va2 = pa->value;
    const auto& vb2 = pb->value;
    if (pa->requires_grad) pa->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    const std::size_t n2 = g.size();
    if (same) {
      for (std::size_t i = 0; i < n2; ++i) {
        if (pa->requires_grad) pa->grad[i] += g[i] * dfa(va2[i], vb2[i]);
        if (pb->requires_grad) pb->grad[i] += g[i] * dfb(va2[i], vb2[i]);
      }
    } else {
      const auto os = row_major_strides(out_shape);
      const auto sa = aligned_strides(pa->shape, out_shape);
      const auto sb = aligned_strides(pb->shape, out_shape);
      for (std::size_t i = 0; i < n2; ++i) {
        std::size_t rem = i, ia = 0, ib = 0;
        for (std::size_t k = 0; k < os.size(); ++k) {
          const std::size_t c = rem / os[k];
          rem %= os[k];
          ia += c * sa[k];
          ib += c * sb[k];
        }
        if (pa->requires_grad) pa->grad[ia] += g[i] * dfa(va2[ia], vb2[ib]);
        if (pb->requires_grad) pb->grad[ib] += g[i] * dfb(va2[ia], vb2[ib]);
      }
    }
  };
  return Tensor(make_record(out_shape, std::move(out), {a.node(), b.node()}, std::move(bp)));
}

// Elementwise unary op; df(x, y) is d(out)/dx given input x and output y.
template <class F, class DF>
Tensor unary_op(const Tensor& a, const char* name, F f, DF df) {
  check_defined(a, name);
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  const auto& v = a.value();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(v[i]);
  auto bp = [df](TensorNode& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p->grad[i] += self.grad[i] * df(p->value[i], self.value[i]);
  };
  return Tensor(make_record(a.shape(), std::move(out), {a.node()}, std::move(bp)));
}

// C(m,n) += A(m,k) * B(k,n)
void mm_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
            std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A + i * k;
    double* crow = C + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double a = arow[l];
      if (a == 0.0) continue;
      const double* brow = B + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

// C(m,k) += G(m,n) * B(k,n)^T
void mm_abt_acc(const double* G, const double* B, double* C, std::size_t m, std::size_t k,
                std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = G + i * n;
    double* crow = C + i * k;
    for (std::size_t l = 0; l < k; ++l) {
      const double* brow = B + l * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[l] += acc;
    }
  }
}

// C(k,n) += A(m,k)^T * G(m,n)
void mm_atb_acc(const double* A, const double* G, double* C, std::size_t m, std::size_t k,
                std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A + i * k;
    const double* grow = G + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double a = arow[l];
      if (a == 0.0) continue;
      double* crow = C + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += a * grow[j];
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from_values(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> vals(n, v);
  return from_values(std::move(shape), std::move(vals), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  if (shape.empty() || n == 0) throw tensor_error("empty shapes are not supported");
  if (values.empty()) values.assign(n, 0.0);
  if (values.size() != n)
    throw tensor_error("value count " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape));
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->is_leaf = true;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) { return from_values({1}, {v}); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw tensor_error("tensor has no gradient");
  return node_->grad;
}

std::vector<double>& Tensor::grad_mut() {
  node_->ensure_grad();
  return node_->grad;
}

double Tensor::item() const {
  if (!defined() || numel() != 1) throw tensor_error("item() requires a single-element tensor");
  return node_->value[0];
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor neg(const Tensor& a) {
  return unary_op(
      a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double c) {
  return unary_op(
      a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_const(const Tensor& a, double c) {
  return unary_op(
      a, "add_const", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor exp_op(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_op(const Tensor& a) {
  for (double v : a.value())
    if (!(v > 0.0)) throw tensor_error("log of non-positive value " + std::to_string(v));
  return unary_op(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, "sigmoid", [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      a, "softplus", [](double x) { return stable_softplus(x); },
      [](double x, double) { return stable_sigmoid(x); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();

  if (sb.size() == 2 && (sa.size() == 2 || sa.size() == 3)) {
    const std::size_t k = sa.back();
    const std::size_t m = a.numel() / k;  // leading dims flattened
    if (sb[0] != k)
      throw tensor_error("matmul inner dims differ: " + shape_str(sa) + " vs " + shape_str(sb));
    const std::size_t n = sb[1];
    std::vector<double> out(m * n, 0.0);
    mm_acc(a.value().data(), b.value().data(), out.data(), m, k, n);
    Shape out_shape = sa;
    out_shape.back() = n;
    auto bp = [m, k, n](TensorNode& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      if (pa->requires_grad) {
        pa->ensure_grad();
        mm_abt_acc(self.grad.data(), pb->value.data(), pa->grad.data(), m, k, n);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        mm_atb_acc(pa->value.data(), self.grad.data(), pb->grad.data(), m, k, n);
      }
    };
    return Tensor(make_record(std::move(out_shape), std::move(out), {a.node(), b.node()},
                              std::move(bp)));
  }

  if (sa.size() == 3 && sb.size() == 3) {
    if (sa[0] != sb[0] || sa[2] != sb[1])
      throw tensor_error("batched matmul shape mismatch: " + shape_str(sa) + " vs " +
                         shape_str(sb));
    const std::size_t batch = sa[0], m = sa[1], k = sa[2], n = sb[2];
    std::vector<double> out(batch * m * n, 0.0);
    for (std::size_t t = 0; t < batch; ++t)
      mm_acc(a.value().data() + t * m * k, b.value().data() + t * k * n, out.data() + t * m * n, m,
             k, n);
    auto bp = [batch, m, k, n](TensorNode& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      if (pa->requires_grad) pa->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      for (std::size_t t = 0; t < batch; ++t) {
        const double* g = self.grad.data() + t * m * n;
        if (pa->requires_grad)
          mm_abt_acc(g, pb->value.data() + t * k * n, pa->grad.data() + t * m * k, m, k, n);
        if (pb->requires_grad)
          mm_atb_acc(pa->value.data() + t * m * k, g, pb->grad.data() + t * k * n, m, k, n);
      }
    };
    return Tensor(make_record({batch, m, n}, std::move(out), {a.node(), b.node()}, std::move(bp)));
  }

  throw tensor_error("matmul supports [m,k]x[k,n], [B,m,k]x[k,n], [B,m,k]x[B,k,n]; got " +
                     shape_str(sa) + " x " + shape_str(sb));
}

Tensor transpose_last2(const Tensor& a) {
  check_defined(a, "transpose_last2");
  const Shape& s = a.shape();
  if (s.size() < 2) throw tensor_error("transpose_last2 needs at least 2 dims");
  const std::size_t p = s[s.size() - 2], q = s.back();
  const std::size_t batch = a.numel() / (p * q);
  std::vector<double> out(a.numel());
  const auto& v = a.value();
  for (std::size_t t = 0; t < batch; ++t) {
    const double* src = v.data() + t * p * q;
    double* dst = out.data() + t * p * q;
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < q; ++j) dst[j * p + i] = src[i * q + j];
  }
  Shape out_shape = s;
  std::swap(out_shape[out_shape.size() - 2], out_shape.back());
  auto bp = [batch, p, q](TensorNode& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t t = 0; t < batch; ++t) {
      const double* g = self.grad.data() + t * p * q;
      double* dst = pa->grad.data() + t * p * q;
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) dst[i * q + j] += g[j * p + i];
    }
  };
  return Tensor(make_record(std::move(out_shape), std::move(out), {a.node()}, std::move(bp)));
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_defined(a, "reshape");
  if (shape_numel(shape) != a.numel())
    throw tensor_error("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                       " changes element count");
  std::vector<double> out = a.value();
  auto bp = [](TensorNode& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
  };
  return Tensor(make_record(std::move(shape), std::move(out), {a.node()}, std::move(bp)));
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
  check_defined(a, "concat_lastdim");
  check_defined(b, "concat_lastdim");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || sa.size() < 1)
    throw tensor_error("concat_lastdim rank mismatch");
  for (std::size_t k = 0; k + 1 < sa.size(); ++k)
    if (sa[k] != sb[k]) throw tensor_error("concat_lastdim leading dims differ");
  const std::size_t p = sa.back(), q = sb.back();
  const std::size_t rows = a.numel() / p;
  std::vector<double> out(rows * (p + q));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data() + r * p, p, out.data() + r * (p + q));
    std::copy_n(b.value().data() + r * q, q, out.data() + r * (p + q) + p);
  }
  Shape out_shape = sa;
  out_shape.back() = p + q;
  auto bp = [rows, p, q](TensorNode& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * (p + q);
      if (pa->requires_grad)
        for (std::size_t i = 0; i < p; ++i) pa->grad[r * p + i] += g[i];
      if (pb->requires_grad)
        for (std::size_t j = 0; j < q; ++j) pb->grad[r * q + j] += g[p + j];
    }
  };
  return Tensor(make_record(std::move(out_shape), std::move(out), {a.node(), b.node()},
                            std::move(bp)));
}

Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& ids) {
  check_defined(table, "gather_rows");
  if (table.dim() != 2) throw tensor_error("gather_rows table must be 2-D");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  for (std::int64_t id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw tensor_error("gather_rows id " + std::to_string(id) + " out of range [0," +
                         std::to_string(v) + ")");
  std::vector<double> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[r]) * d, d,
                out.data() + r * d);
  auto bp = [ids, d](TensorNode& self) {
    auto& pt = self.parents[0];
    if (!pt->requires_grad) return;
    pt->ensure_grad();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const double* g = self.grad.data() + r * d;
      double* dst = pt->grad.data() + static_cast<std::size_t>(ids[r]) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += g[c];
    }
  };
  return Tensor(make_record({ids.size(), d}, std::move(out), {table.node()}, std::move(bp)));
}

Tensor sum_all(const Tensor& a) {
  check_defined(a, "sum_all");
  double s = 0.0;
  for (double v : a.value()) s += v;
  auto bp = [](TensorNode& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const double g = self.grad[0];
    for (double& x : pa->grad) x += g;
  };
  return Tensor(make_record({1}, {s}, {a.node()}, std::move(bp)));
}

Tensor mean_all(const Tensor& a) {
  check_defined(a, "mean_all");
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.value()) s += v;
  auto bp = [inv](TensorNode& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const double g = self.grad[0] * inv;
    for (double& x : pa->grad) x += g;
  };
  return Tensor(make_record({1}, {s * inv}, {a.node()}, std::move(bp)));
}

Tensor sum_lastdim(const Tensor& a) {
  check_defined(a, "sum_lastdim");
  if (a.dim() < 2) throw tensor_error("sum_lastdim needs at least 2 dims");
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.numel() / d;
  std::vector<double> out(rows, 0.0);
  const auto& v = a.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r] += v[r * d + c];
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  auto bp = [rows, d](TensorNode& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = self.grad[r];
      double* dst = pa->grad.data() + r * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += g;
    }
  };
  return Tensor(make_record(std::move(out_shape), std::move(out), {a.node()}, std::move(bp)));
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  check_defined(x, "split_heads");
  if (x.dim() != 3) throw tensor_error("split_heads expects [B,L,d]");
  const std::size_t b = x.shape()[0], l = x.shape()[1], d = x.shape()[2];
  if (heads == 0 || d % heads != 0) throw tensor_error("dim must be divisible by heads");
  const std::size_t dh = d / heads;
  std::vector<double> out(x.numel());
  const auto& v = x.value();
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < l; ++t)
        std::copy_n(v.data() + (bi * l + t) * d + h * dh, dh,
                    out.data() + ((bi * heads + h) * l + t) * dh);
  auto bp = [b, l, d, heads, dh](TensorNode& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < l; ++t) {
          const double* g = self.grad.data() + ((bi * heads + h) * l + t) * dh;
          double* dst = pa->grad.data() + (bi * l + t) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) dst[c] += g[c];
        }
  };
  return Tensor(make_record({b * heads, l, dh}, std::move(out), {x.node()}, std::move(bp)));
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
  check_defined(x, "merge_heads");
  if (x.dim() != 3) throw tensor_error("merge_heads expects [B*heads,L,dh]");
  const std::size_t bh = x.shape()[0], l = x.shape()[1], dh = x.shape()[2];
  if (heads == 0 || bh % heads != 0) throw tensor_error("leading dim not divisible by heads");
  const std::size_t b = bh / heads, d = dh * heads;
  std::vector<double> out(x.numel());
  const auto& v = x.value();
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < l; ++t)
        std::copy_n(v.data() + ((bi * heads + h) * l + t) * dh, dh,
                    out.data() + (bi * l + t) * d + h * dh);
  auto bp = [b, l, d, heads, dh](TensorNode& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < l; ++t) {
          const double* g = self.grad.data() + (bi * l + t) * d + h * dh;
          double* dst = pa->grad.data() + ((bi * heads + h) * l + t) * dh;
          for (std::size_t c = 0; c < dh; ++c) dst[c] += g[c];
        }
  };
  return Tensor(make_record({b, l, d}, std::move(out), {x.node()}, std::move(bp)));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  check_defined(x, "layer_norm");
  check_defined(gain, "layer_norm");
  check_defined(bias, "layer_norm");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d)
    throw tensor_error("layer_norm gain/bias must have last-axis length " + std::to_string(d));
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  const auto& v = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = row[c] - mu;
      var += dv * dv;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (row[c] - mu) * inv;
      xhat[r * d + c] = xh;
      out[r * d + c] = xh * gv[c] + bv[c];
    }
  }
  auto bp = [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    if (px->requires_grad) px->ensure_grad();
    if (pg->requires_grad) pg->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    const auto& gv2 = pg->value;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * d;
      const double* xh = xhat.data() + r * d;
      if (pg->requires_grad)
        for (std::size_t c = 0; c < d; ++c) pg->grad[c] += g[c] * xh[c];
      if (pb->requires_grad)
        for (std::size_t c = 0; c < d; ++c) pb->grad[c] += g[c];
      if (px->requires_grad) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double h = g[c] * gv2[c];
          m1 += h;
          m2 += h * xh[c];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        double* dst = px->grad.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) {
          const double h = g[c] * gv2[c];
          dst[c] += (h - m1 - xh[c] * m2) * inv_std[r];
        }
      }
    }
  };
  return Tensor(
      make_record(x.shape(), std::move(out), {x.node(), gain.node(), bias.node()}, std::move(bp)));
}

Tensor causal_masked_softmax(const Tensor& scores, std::vector<std::uint8_t> key_valid,
                             std::size_t heads) {
  check_defined(scores, "causal_masked_softmax");
  if (scores.dim() != 3 || scores.shape()[1] != scores.shape()[2])
    throw tensor_error("causal_masked_softmax expects [R,L,L] scores");
  const std::size_t r_total = scores.shape()[0], l = scores.shape()[1];
  if (heads == 0 || r_total % heads != 0)
    throw tensor_error("score rows not divisible by heads");
  const std::size_t b = r_total / heads;
  if (key_valid.size() != b * l) throw tensor_error("key_valid size mismatch");
  std::vector<double> out(scores.numel(), 0.0);
  const auto& v = scores.value();
  for (std::size_t row = 0; row < r_total; ++row) {
    const std::size_t bi = row / heads;
    const std::uint8_t* valid = key_valid.data() + bi * l;
    for (std::size_t q = 0; q < l; ++q) {
      const double* s = v.data() + (row * l + q) * l;
      double* p = out.data() + (row * l + q) * l;
      double mx = -std::numeric_limits<double>::infinity();
      bool any = false;
      for (std::size_t j = 0; j <= q; ++j) {
        if (!valid[j]) continue;
        any = true;
        mx = std::max(mx, s[j]);
      }
      if (!any) {
        p[q] = 1.0;  // padding query attends to itself; output unused
        continue;
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= q; ++j) {
        if (!valid[j]) continue;
        const double e = std::exp(s[j] - mx);
        p[j] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::size_t j = 0; j <= q; ++j)
        if (valid[j]) p[j] *= inv;
    }
  }
  auto bp = [r_total, l](TensorNode& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t row = 0; row < r_total * l; ++row) {
      const double* p = self.value.data() + row * l;
      const double* g = self.grad.data() + row * l;
      double dot = 0.0;
      for (std::size_t j = 0; j < l; ++j) dot += p[j] * g[j];
      double* dst = pa->grad.data() + row * l;
      for (std::size_t j = 0; j < l; ++j) dst[j] += p[j] * (g[j] - dot);
    }
  };
  return Tensor(make_record(scores.shape(), std::move(out), {scores.node()}, std::move(bp)));
}

Tensor softmax_ce_over_set(const Tensor& logits) {
  check_defined(logits, "softmax_ce_over_set");
  const std::size_t c = logits.shape().back();
  if (c < 2) throw tensor_error("softmax_ce_over_set needs at least 2 classes");
  const std::size_t rows = logits.numel() / c;
  for (double v : logits.value())
    if (!std::isfinite(v)) throw tensor_error("softmax_ce_over_set: non-finite logit");
  std::vector<double> out(rows);
  std::vector<double> probs(logits.numel());
  const auto& v = logits.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* s = v.data() + r * c;
    double mx = s[0];
    for (std::size_t t = 1; t < c; ++t) mx = std::max(mx, s[t]);
    double z = 0.0;
    for (std::size_t t = 0; t < c; ++t) {
      const double e = std::exp(s[t] - mx);
      probs[r * c + t] = e;
      z += e;
    }
    const double inv = 1.0 / z;
    for (std::size_t t = 0; t < c; ++t) probs[r * c + t] *= inv;
    out[r] = mx + std::log(z) - s[0];
  }
  Shape out_shape;
  if (logits.dim() == 1)
    out_shape = {1};
  else
    out_shape.assign(logits.shape().begin(), logits.shape().end() - 1);
  auto bp = [rows, c, probs = std::move(probs)](TensorNode& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = self.grad[r];
      double* dst = pa->grad.data() + r * c;
      const double* p = probs.data() + r * c;
      dst[0] += g * (p[0] - 1.0);
      for (std::size_t t = 1; t < c; ++t) dst[t] += g * p[t];
    }
  };
  return Tensor(make_record(std::move(out_shape), std::move(out), {logits.node()}, std::move(bp)));
}

Tensor mean_win_logprob(const Tensor& a, const Tensor& b) {
  check_defined(a, "mean_win_logprob");
  check_defined(b, "mean_win_logprob");
  if (a.dim() != b.dim()) throw tensor_error("mean_win_logprob rank mismatch");
  for (std::size_t k = 0; k + 1 < a.dim(); ++k)
    if (a.shape()[k] != b.shape()[k]) throw tensor_error("mean_win_logprob leading dims differ");
  const std::size_t na = a.shape().back(), nb = b.shape().back();
  if (na == 0 || nb == 0) throw tensor_error("mean_win_logprob: empty set");
  const std::size_t rows = a.numel() / na;
  std::vector<double> out(rows, 0.0);
  const auto& va = a.value();
  const auto& vb = b.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* pa = va.data() + r * na;
    const double* pb = vb.data() + r * nb;
    double mx = pa[0];
    for (std::size_t j = 1; j < na; ++j) mx = std::max(mx, pa[j]);
    for (std::size_t k = 0; k < nb; ++k) mx = std::max(mx, pb[k]);
    double e_sum = 0.0;
    for (std::size_t k = 0; k < nb; ++k) e_sum += std::exp(pb[k] - mx);
    double acc = 0.0;
    for (std::size_t j = 0; j < na; ++j) {
      const double t = std::exp(pa[j] - mx);
      acc += pa[j] - (mx + std::log(t + e_sum));
    }
    out[r] = acc / static_cast<double>(na);
  }
  Shape out_shape;
  if (a.dim() == 1)
    out_shape = {1};
  else
    out_shape.assign(a.shape().begin(), a.shape().end() - 1);
  auto bp = [rows, na, nb](TensorNode& self) {
    auto& pa_node = self.parents[0];
    auto& pb_node = self.parents[1];
    if (pa_node->requires_grad) pa_node->ensure_grad();
    if (pb_node->requires_grad) pb_node->ensure_grad();
    const double inv_na = 1.0 / static_cast<double>(na);
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = self.grad[r];
      if (g == 0.0) continue;
      const double* pa = pa_node->value.data() + r * na;
      const double* pb = pb_node->value.data() + r * nb;
      double mx = pa[0];
      for (std::size_t j = 1; j < na; ++j) mx = std::max(mx, pa[j]);
      for (std::size_t k = 0; k < nb; ++k) mx = std::max(mx, pb[k]);
      double e_sum = 0.0;
      for (std::size_t k = 0; k < nb; ++k) e_sum += std::exp(pb[k] - mx);
      double s1 = 0.0;  // sum_j 1/(t_j + E)
      for (std::size_t j = 0; j < na; ++j) {
        const double t = std::exp(pa[j] - mx);
        if (pa_node->requires_grad)
          pa_node->grad[r * na + j] += g * inv_na * (1.0 - t / (t + e_sum));
        s1 += 1.0 / (t + e_sum);
      }
      if (pb_node->requires_grad) {
        for (std::size_t k = 0; k < nb; ++k) {
          const double e = std::exp(pb[k] - mx);
          pb_node->grad[r * nb + k] -= g * inv_na * e * s1;
        }
      }
    }
  };
  return Tensor(
      make_record(std::move(out_shape), std::move(out), {a.node(), b.node()}, std::move(bp)));
}

Tensor dropout(const Tensor& x, double p, bool train, Rng& rng) {
  check_defined(x, "dropout");
  if (p < 0.0 || p >= 1.0) throw tensor_error("dropout rate must be in [0,1)");
  if (!train || p == 0.0) return x;
  const std::size_t n = x.numel();
  std::vector<std::uint8_t> mask(n);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> out(n);
  const auto& v = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = rng.next_double() >= p ? 1 : 0;
    out[i] = mask[i] ? v[i] * keep_scale : 0.0;
  }
  auto bp = [mask = std::move(mask), keep_scale](TensorNode& self) {
    auto& pa = self.parents[0];
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (mask[i]) pa->grad[i] += self.grad[i] * keep_scale;
  };
  return Tensor(make_record(x.shape(), std::move(out), {x.node()}, std::move(bp)));
}

void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1)
    throw tensor_error("backward requires a scalar root");
  auto root_node = root.node();
  if (!root_node->requires_grad) return;

  struct Frame {
    TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<TensorNode*> topo;
  std::unordered_set<TensorNode*> visited;
  std::vector<Frame> stack;
  stack.push_back({root_node.get(), 0});
  visited.insert(root_node.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  // Interior grads are rebuilt per call; leaves accumulate across calls.
  for (TensorNode* n : topo) {
    if (n->is_leaf)
      n->ensure_grad();
    else
      n->grad.assign(n->value.size(), 0.0);
  }
  root_node->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

}  // namespace transrec
