#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stylediff/tensor.hpp"

namespace stylediff {

// Named model parameter. Gradients are materialized per tape pass; frozen
// parameters never receive one (their gradient is absent, not zero).
template <class S>
struct Param {
  std::string name;
  Tensor<S> value;
  bool trainable = true;
};

// Reverse-mode tape over Tensor values. One tape per forward pass; models
// register parameters lazily via param() so the same Param storage can feed
// many tapes (e.g. one per batch item, each on its own thread).
template <class S>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  int leaf(Tensor<S> v, bool needs = false) {
    return push(std::move(v), needs && grad_enabled_, nullptr);
  }

  int param(Param<S>& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return it->second;
    int id = push(p.value, p.trainable && grad_enabled_, nullptr);
    param_ids_.emplace(&p, id);
    params_.emplace_back(&p, id);
    return id;
  }

  int push(Tensor<S> v, bool needs, std::function<void(Tape&, const Tensor<S>&)> backward) {
    Node n;
    n.value = std::move(v);
    n.needs = needs;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<S>& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool needs(int id) const { return nodes_[static_cast<size_t>(id)].needs; }
  bool has_grad(int id) const { return nodes_[static_cast<size_t>(id)].grad.numel() > 0; }

  Tensor<S>& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.numel() == 0) n.grad = Tensor<S>::zeros(n.value.shape());
    return n.grad;
  }

  // accumulate a 2-d expression into id's grad (no-op for non-requiring nodes)
  template <class Expr>
  void accum(int id, const Expr& e) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs) return;
    if (n.grad.numel() == 0) n.grad = Tensor<S>::zeros(n.value.shape());
    n.grad.view2d(e.rows(), e.cols()) += e;
  }

  // accumulate a flat array expression (same element order as storage)
  template <class Expr>
  void accum_arr(int id, const Expr& e) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs) return;
    if (n.grad.numel() == 0) n.grad = Tensor<S>::zeros(n.value.shape());
    n.grad.arr() += e;
  }

  void accum_flat(int id, Index i, S v) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs) return;
    if (n.grad.numel() == 0) n.grad = Tensor<S>::zeros(n.value.shape());
    n.grad[i] += v;
  }

  void backward(int loss_id) {
    if (!grad_enabled_) throw std::runtime_error("backward on a no-grad tape");
    Node& loss = nodes_[static_cast<size_t>(loss_id)];
    if (loss.value.numel() != 1) throw DimensionError("backward expects a scalar loss node");
    loss.grad = Tensor<S>::full(loss.value.shape(), S(1));
    for (int id = loss_id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.backward || !n.needs || n.grad.numel() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  // visit (param, grad) pairs that received a gradient this pass
  template <class F>
  void for_each_param_grad(F&& f) {
    for (auto& [p, id] : params_) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.grad.numel() > 0) f(*p, n.grad);
    }
  }

  const std::vector<std::pair<Param<S>*, int>>& params() const { return params_; }

  void clear() {
    nodes_.clear();
    params_.clear();
    param_ids_.clear();
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool needs = false;
    std::function<void(Tape&, const Tensor<S>&)> backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<Param<S>*, int>> params_;
  std::unordered_map<const void*, int> param_ids_;
  bool grad_enabled_;
};

// ---- differentiable ops ----
// Free functions building tape nodes. Shapes follow the rank<=2 matrix view of
// the operands unless stated otherwise.
namespace ag {

template <class S>
bool any_requires(Tape<S>& t, std::initializer_list<int> ids) {
  if (!t.grad_enabled()) return false;
  for (int id : ids)
    if (t.needs(id)) return true;
  return false;
}

template <class S>
int add(Tape<S>& t, int a, int b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (!A.same_shape(B))
    throw DimensionError("add " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  Tensor<S> out = Tensor<S>::uninit(A.shape());
  out.arr() = A.arr() + B.arr();
  if (!any_requires(t, {a, b})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [a, b](Tape<S>& t, const Tensor<S>& g) {
    t.accum_arr(a, g.arr());
    t.accum_arr(b, g.arr());
  });
}

template <class S>
int sub(Tape<S>& t, int a, int b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (!A.same_shape(B))
    throw DimensionError("sub " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  Tensor<S> out = Tensor<S>::uninit(A.shape());
  out.arr() = A.arr() - B.arr();
  if (!any_requires(t, {a, b})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [a, b](Tape<S>& t, const Tensor<S>& g) {
    t.accum_arr(a, g.arr());
    t.accum_arr(b, -g.arr());
  });
}

template <class S>
int mul(Tape<S>& t, int a, int b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (!A.same_shape(B))
    throw DimensionError("mul " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  Tensor<S> out = Tensor<S>::uninit(A.shape());
  out.arr() = A.arr() * B.arr();
  if (!any_requires(t, {a, b})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [a, b](Tape<S>& t, const Tensor<S>& g) {
    t.accum_arr(a, g.arr() * t.val(b).arr());
    t.accum_arr(b, g.arr() * t.val(a).arr());
  });
}

template <class S>
int scale(Tape<S>& t, int a, S s) {
  Tensor<S> out = Tensor<S>::uninit(t.val(a).shape());
  out.arr() = t.val(a).arr() * s;
  if (!any_requires(t, {a})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true,
                [a, s](Tape<S>& t, const Tensor<S>& g) { t.accum_arr(a, g.arr() * s); });
}

// alpha*a + beta*b
template <class S>
int lerp(Tape<S>& t, int a, int b, S alpha, S beta) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (!A.same_shape(B))
    throw DimensionError("lerp " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  Tensor<S> out = Tensor<S>::uninit(A.shape());
  out.arr() = alpha * A.arr() + beta * B.arr();
  if (!any_requires(t, {a, b})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [a, b, alpha, beta](Tape<S>& t, const Tensor<S>& g) {
    t.accum_arr(a, g.arr() * alpha);
    t.accum_arr(b, g.arr() * beta);
  });
}

// broadcast a rank-1 bias over the rows of a's 2-d view
template <class S>
int add_bias(Tape<S>& t, int a, int bias) {
  const auto& A = t.val(a);
  const auto& B = t.val(bias);
  Index c = B.numel();
  if (c == 0 || A.numel() % c != 0)
    throw DimensionError("add_bias " + shape_str(A.shape()) + " vs bias " + shape_str(B.shape()));
  Index r = A.numel() / c;
  Tensor<S> out = Tensor<S>::uninit(A.shape());
  out.view2d(r, c) = A.view2d(r, c).rowwise() + B.view2d(1, c).row(0);
  if (!any_requires(t, {a, bias})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [a, bias, r, c](Tape<S>& t, const Tensor<S>& g) {
    t.accum_arr(a, g.arr());
    t.accum(bias, g.view2d(r, c).colwise().sum());
  });
}

template <class S>
int matmul(Tape<S>& t, int a, int b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (A.mat().cols() != B.mat().rows())
    throw DimensionError("matmul inner dims: " + shape_str(A.shape()) + " vs " +
                         shape_str(B.shape()));
  Tensor<S> out = Tensor<S>::uninit({A.mat().rows(), B.mat().cols()});
  out.mat().noalias() = A.mat() * B.mat();
  if (!any_requires(t, {a, b})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [a, b](Tape<S>& t, const Tensor<S>& g) {
    t.accum(a, g.mat() * t.val(b).mat().transpose());
    t.accum(b, t.val(a).mat().transpose() * g.mat());
  });
}

// a * b^T
template <class S>
int matmul_nt(Tape<S>& t, int a, int b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (A.mat().cols() != B.mat().cols())
    throw DimensionError("matmul_nt feature dims: " + shape_str(A.shape()) + " vs " +
                         shape_str(B.shape()));
  Tensor<S> out = Tensor<S>::uninit({A.mat().rows(), B.mat().rows()});
  out.mat().noalias() = A.mat() * B.mat().transpose();
  if (!any_requires(t, {a, b})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [a, b](Tape<S>& t, const Tensor<S>& g) {
    t.accum(a, g.mat() * t.val(b).mat());
    t.accum(b, g.mat().transpose() * t.val(a).mat());
  });
}

template <class S>
int softmax_rows(Tape<S>& t, int a) {
  Tensor<S> out = stylediff::softmax_rows(t.val(a));
  if (!any_requires(t, {a})) return t.push(std::move(out), false, nullptr);
  auto y = std::make_shared<Tensor<S>>(out);
  return t.push(std::move(out), true, [a, y](Tape<S>& t, const Tensor<S>& g) {
    Index r = y->mat().rows(), c = y->mat().cols();
    auto gm = g.view2d(r, c);
    Tensor<S> dx = Tensor<S>::uninit({r, c});
    for (Index i = 0; i < r; ++i) {
      S dot = (gm.row(i).array() * y->mat().row(i).array()).sum();
      dx.mat().row(i) = ((gm.row(i).array() - dot) * y->mat().row(i).array()).matrix();
    }
    t.accum(a, dx.mat());
  });
}

template <class S>
int silu(Tape<S>& t, int a) {
  const auto& A = t.val(a);
  Tensor<S> out = Tensor<S>::uninit(A.shape());
  out.arr() = A.arr() / (S(1) + (-A.arr()).exp());
  if (!any_requires(t, {a})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [a](Tape<S>& t, const Tensor<S>& g) {
    const auto& x = t.val(a);
    auto sig = (S(1) / (S(1) + (-x.arr()).exp())).eval();
    t.accum_arr(a, g.arr() * sig * (S(1) + x.arr() * (S(1) - sig)));
  });
}

template <class S>
int concat_rows(Tape<S>& t, int a, int b) {
  Tensor<S> out = stylediff::concat_rows(t.val(a), t.val(b));
  Index ra = t.val(a).mat().rows();
  if (!any_requires(t, {a, b})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [a, b, ra](Tape<S>& t, const Tensor<S>& g) {
    t.accum(a, g.mat().topRows(ra));
    t.accum(b, g.mat().bottomRows(g.mat().rows() - ra));
  });
}

template <class S>
int slice_rows(Tape<S>& t, int a, Index r0, Index n) {
  const auto& A = t.val(a);
  if (r0 < 0 || r0 + n > A.mat().rows())
    throw DimensionError("slice_rows out of range on " + shape_str(A.shape()));
  Tensor<S> out = Tensor<S>::uninit({n, A.mat().cols()});
  out.mat() = A.mat().middleRows(r0, n);
  if (!any_requires(t, {a})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [a, r0, n](Tape<S>& t, const Tensor<S>& g) {
    if (!t.needs(a)) return;
    auto& ga = t.grad(a);
    ga.mat().middleRows(r0, n) += g.mat();
  });
}

template <class S>
int slice_cols(Tape<S>& t, int a, Index c0, Index n) {
  const auto& A = t.val(a);
  if (c0 < 0 || c0 + n > A.mat().cols())
    throw DimensionError("slice_cols out of range on " + shape_str(A.shape()));
  Tensor<S> out = Tensor<S>::uninit({A.mat().rows(), n});
  out.mat() = A.mat().middleCols(c0, n);
  if (!any_requires(t, {a})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [a, c0, n](Tape<S>& t, const Tensor<S>& g) {
    if (!t.needs(a)) return;
    auto& ga = t.grad(a);
    ga.mat().middleCols(c0, n) += g.mat();
  });
}

template <class S>
int concat_cols(Tape<S>& t, const std::vector<int>& parts) {
  Index rows = t.val(parts[0]).mat().rows();
  Index cols = 0;
  for (int p : parts) {
    if (t.val(p).mat().rows() != rows) throw DimensionError("concat_cols row mismatch");
    cols += t.val(p).mat().cols();
  }
  Tensor<S> out = Tensor<S>::uninit({rows, cols});
  Index c0 = 0;
  for (int p : parts) {
    Index c = t.val(p).mat().cols();
    out.mat().middleCols(c0, c) = t.val(p).mat();
    c0 += c;
  }
  bool req = false;
  for (int p : parts) req = req || (t.grad_enabled() && t.needs(p));
  if (!req) return t.push(std::move(out), false, nullptr);
  std::vector<int> ps = parts;
  return t.push(std::move(out), true, [ps](Tape<S>& t, const Tensor<S>& g) {
    Index c0 = 0;
    for (int p : ps) {
      Index c = t.val(p).mat().cols();
      t.accum(p, g.mat().middleCols(c0, c));
      c0 += c;
    }
  });
}

template <class S>
int reshape(Tape<S>& t, int a, Shape shape) {
  Tensor<S> out = t.val(a).reshaped(std::move(shape));
  if (!any_requires(t, {a})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true,
                [a](Tape<S>& t, const Tensor<S>& g) { t.accum_arr(a, g.arr()); });
}

// out row i = table row ids[i]
template <class S>
int gather_rows(Tape<S>& t, int table, const std::vector<int>& ids) {
  const auto& T = t.val(table);
  Index c = T.mat().cols();
  Tensor<S> out = Tensor<S>::uninit({static_cast<Index>(ids.size()), c});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= T.mat().rows())
      throw VocabularyError("embedding id " + std::to_string(ids[i]) + " out of table range [0," +
                            std::to_string(T.mat().rows()) + ")");
    out.mat().row(static_cast<Index>(i)) = T.mat().row(ids[i]);
  }
  if (!any_requires(t, {table})) return t.push(std::move(out), false, nullptr);
  std::vector<int> idv = ids;
  return t.push(std::move(out), true, [table, idv](Tape<S>& t, const Tensor<S>& g) {
    if (!t.needs(table)) return;
    auto& gt = t.grad(table);
    for (size_t i = 0; i < idv.size(); ++i)
      gt.mat().row(idv[i]) += g.mat().row(static_cast<Index>(i));
  });
}

// row-wise layer norm with per-column gain/bias
template <class S>
int layer_norm(Tape<S>& t, int a, int gain, int bias, S eps = S(1e-5)) {
  const auto& A = t.val(a);
  Index r = A.mat().rows(), c = A.mat().cols();
  Tensor<S> xhat = Tensor<S>::uninit(A.shape());
  Tensor<S> inv_sd = Tensor<S>::uninit({r});
  for (Index i = 0; i < r; ++i) {
    S mu = A.mat().row(i).mean();
    S var = (A.mat().row(i).array() - mu).square().mean();
    S inv = S(1) / std::sqrt(var + eps);
    inv_sd[i] = inv;
    xhat.mat().row(i) = ((A.mat().row(i).array() - mu) * inv).matrix();
  }
  Tensor<S> out = Tensor<S>::uninit(A.shape());
  out.mat() = ((xhat.mat().array().rowwise() *
                t.val(gain).view2d(1, c).row(0).array())
                   .rowwise() +
               t.val(bias).view2d(1, c).row(0).array())
                  .matrix();
  if (!any_requires(t, {a, gain, bias})) return t.push(std::move(out), false, nullptr);
  auto xh = std::make_shared<Tensor<S>>(std::move(xhat));
  auto is = std::make_shared<Tensor<S>>(std::move(inv_sd));
  return t.push(std::move(out), true,
                [a, gain, bias, xh, is, r, c](Tape<S>& t, const Tensor<S>& g) {
    const auto gm = g.view2d(r, c);
    t.accum(gain, (gm.array() * xh->mat().array()).colwise().sum().matrix());
    t.accum(bias, gm.colwise().sum());
    if (!t.needs(a)) return;
    auto& ga = t.grad(a);
    auto gv = t.val(gain).view2d(1, c).row(0);
    for (Index i = 0; i < r; ++i) {
      auto dxhat = (gm.row(i).array() * gv.array()).eval();
      S m1 = dxhat.mean();
      S m2 = (dxhat * xh->mat().row(i).array()).mean();
      ga.mat().row(i) += (((dxhat - m1) - xh->mat().row(i).array() * m2) * (*is)[i]).matrix();
    }
  });
}

// group norm over an (HW x C) layout: channels split into n_groups, statistics
// over all pixels and the group's channels; per-channel gain/bias
template <class S>
int group_norm(Tape<S>& t, int a, Index n_groups, int gain, int bias, S eps = S(1e-5)) {
  const auto& A = t.val(a);
  Index c = t.val(gain).numel();
  if (A.numel() % c != 0) throw DimensionError("group_norm input/gain mismatch");
  Index r = A.numel() / c;
  if (c % n_groups != 0)
    throw DimensionError("group_norm: " + std::to_string(c) + " channels not divisible by " +
                         std::to_string(n_groups) + " groups");
  Index gc = c / n_groups;
  auto in = A.view2d(r, c);
  Tensor<S> xhat = Tensor<S>::uninit(A.shape());
  Tensor<S> inv_sd = Tensor<S>::uninit({n_groups});
  for (Index g0 = 0; g0 < n_groups; ++g0) {
    auto blk = in.middleCols(g0 * gc, gc);
    S mu = blk.mean();
    S var = (blk.array() - mu).square().mean();
    S inv = S(1) / std::sqrt(var + eps);
    inv_sd[g0] = inv;
    xhat.view2d(r, c).middleCols(g0 * gc, gc) = ((blk.array() - mu) * inv).matrix();
  }
  Tensor<S> out = Tensor<S>::uninit(A.shape());
  out.view2d(r, c) = ((xhat.view2d(r, c).array().rowwise() *
                       t.val(gain).view2d(1, c).row(0).array())
                          .rowwise() +
                      t.val(bias).view2d(1, c).row(0).array())
                         .matrix();
  if (!any_requires(t, {a, gain, bias})) return t.push(std::move(out), false, nullptr);
  auto xh = std::make_shared<Tensor<S>>(std::move(xhat));
  auto is = std::make_shared<Tensor<S>>(std::move(inv_sd));
  return t.push(std::move(out), true,
                [a, gain, bias, xh, is, r, c, gc, n_groups](Tape<S>& t, const Tensor<S>& g) {
    const auto gm = g.view2d(r, c);
    auto xm = xh->view2d(r, c);
    t.accum(gain, (gm.array() * xm.array()).colwise().sum().matrix());
    t.accum(bias, gm.colwise().sum());
    if (!t.needs(a)) return;
    auto& ga = t.grad(a);
    auto gv = t.val(gain).view2d(1, c).row(0);
    for (Index g0 = 0; g0 < n_groups; ++g0) {
      auto xblk = xm.middleCols(g0 * gc, gc);
      auto dxhat = (gm.middleCols(g0 * gc, gc).array().rowwise() *
                    gv.segment(g0 * gc, gc).array())
                       .eval();
      S m1 = dxhat.mean();
      S m2 = (dxhat * xblk.array()).mean();
      ga.view2d(r, c).middleCols(g0 * gc, gc) +=
          (((dxhat - m1) - xblk.array() * m2) * (*is)[g0]).matrix();
    }
  });
}

// im2col over an (H*W x C) pixel-major layout; output (Ho*Wo x k*k*C)
template <class S>
int im2col(Tape<S>& t, int a, Index H, Index W, Index C, Index k, Index stride, Index pad) {
  const auto& A = t.val(a);
  if (A.numel() != H * W * C)
    throw DimensionError("im2col input " + shape_str(A.shape()) + " does not match " +
                         std::to_string(H) + "x" + std::to_string(W) + "x" + std::to_string(C));
  Index Ho = (H + 2 * pad - k) / stride + 1;
  Index Wo = (W + 2 * pad - k) / stride + 1;
  auto in = A.view2d(H * W, C);
  Tensor<S> out = Tensor<S>::zeros({Ho * Wo, k * k * C});
  auto o = out.mat();
  for (Index oy = 0; oy < Ho; ++oy)
    for (Index ox = 0; ox < Wo; ++ox) {
      Index orow = oy * Wo + ox;
      for (Index ky = 0; ky < k; ++ky) {
        Index iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= H) continue;
        for (Index kx = 0; kx < k; ++kx) {
          Index ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= W) continue;
          o.row(orow).segment((ky * k + kx) * C, C) = in.row(iy * W + ix);
        }
      }
    }
  if (!any_requires(t, {a})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true,
                [a, H, W, C, k, stride, pad, Ho, Wo](Tape<S>& t, const Tensor<S>& g) {
    if (!t.needs(a)) return;
    auto& ga = t.grad(a);
    auto gmat = ga.view2d(H * W, C);
    auto gg = g.view2d(Ho * Wo, k * k * C);
    for (Index oy = 0; oy < Ho; ++oy)
      for (Index ox = 0; ox < Wo; ++ox) {
        Index orow = oy * Wo + ox;
        for (Index ky = 0; ky < k; ++ky) {
          Index iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (Index kx = 0; kx < k; ++kx) {
            Index ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= W) continue;
            gmat.row(iy * W + ix) += gg.row(orow).segment((ky * k + kx) * C, C);
          }
        }
      }
  });
}

// nearest-neighbour 2x upsample of an (H*W x C) layout
template <class S>
int upsample2x(Tape<S>& t, int a, Index H, Index W, Index C) {
  const auto& A = t.val(a);
  if (A.numel() != H * W * C) throw DimensionError("upsample2x input mismatch");
  auto in = A.view2d(H * W, C);
  Tensor<S> out = Tensor<S>::uninit({4 * H * W, C});
  auto o = out.mat();
  for (Index y = 0; y < 2 * H; ++y)
    for (Index x = 0; x < 2 * W; ++x) o.row(y * 2 * W + x) = in.row((y / 2) * W + (x / 2));
  if (!any_requires(t, {a})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [a, H, W, C](Tape<S>& t, const Tensor<S>& g) {
    if (!t.needs(a)) return;
    auto& ga = t.grad(a);
    auto gmat = ga.view2d(H * W, C);
    auto gg = g.view2d(4 * H * W, C);
    for (Index y = 0; y < 2 * H; ++y)
      for (Index x = 0; x < 2 * W; ++x) gmat.row((y / 2) * W + (x / 2)) += gg.row(y * 2 * W + x);
  });
}

template <class S>
int mean_rows(Tape<S>& t, int a) {
  const auto& A = t.val(a);
  Index r = A.mat().rows(), c = A.mat().cols();
  Tensor<S> out = Tensor<S>::uninit({Index(1), c});
  out.mat() = A.mat().colwise().mean();
  if (!any_requires(t, {a})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [a, r, c](Tape<S>& t, const Tensor<S>& g) {
    if (!t.needs(a)) return;
    auto& ga = t.grad(a);
    ga.view2d(r, c).rowwise() += (g.view2d(1, c) / S(r)).row(0);
  });
}

// mean over all elements of (a-b)^2
template <class S>
int mse(Tape<S>& t, int a, int b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (!A.same_shape(B))
    throw DimensionError("mse " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  Tensor<S> out = Tensor<S>::uninit({Index(1)});
  out[0] = static_cast<S>((A.arr() - B.arr()).square().sum() / static_cast<S>(A.numel()));
  if (!any_requires(t, {a, b})) return t.push(std::move(out), false, nullptr);
  return t.push(std::move(out), true, [a, b](Tape<S>& t, const Tensor<S>& g) {
    const auto& A = t.val(a);
    const auto& B = t.val(b);
    S coef = g[0] * S(2) / static_cast<S>(A.numel());
    t.accum_arr(a, (A.arr() - B.arr()) * coef);
    t.accum_arr(b, (B.arr() - A.arr()) * coef);
  });
}

// mean cross-entropy of logits [n x C] against integer labels
template <class S>
int cross_entropy_logits(Tape<S>& t, int logits, const std::vector<int>& labels) {
  const auto& L = t.val(logits);
  Index n = L.mat().rows();
  if (static_cast<Index>(labels.size()) != n)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  Tensor<S> probs = stylediff::softmax_rows(L);
  Tensor<S> out = Tensor<S>::uninit({Index(1)});
  S acc = 0;
  for (Index i = 0; i < n; ++i)
    acc -= std::log(std::max(probs.at2(i, labels[static_cast<size_t>(i)]), S(1e-12)));
  out[0] = acc / static_cast<S>(n);
  if (!any_requires(t, {logits})) return t.push(std::move(out), false, nullptr);
  auto pr = std::make_shared<Tensor<S>>(std::move(probs));
  std::vector<int> lv = labels;
  return t.push(std::move(out), true, [logits, pr, lv, n](Tape<S>& t, const Tensor<S>& g) {
    Tensor<S> d = *pr;
    for (Index i = 0; i < n; ++i) d.at2(i, lv[static_cast<size_t>(i)]) -= S(1);
    t.accum(logits, (d.mat() * (g[0] / static_cast<S>(n))).eval());
  });
}

// weighted sum of scalar nodes
template <class S>
int add_scalars(Tape<S>& t, const std::vector<int>& parts, const std::vector<S>& weights) {
  Tensor<S> out = Tensor<S>::zeros({Index(1)});
  for (size_t i = 0; i < parts.size(); ++i) out[0] += weights[i] * t.val(parts[i])[0];
  bool req = false;
  for (int p : parts) req = req || (t.grad_enabled() && t.needs(p));
  if (!req) return t.push(std::move(out), false, nullptr);
  std::vector<int> ps = parts;
  std::vector<S> ws = weights;
  return t.push(std::move(out), true, [ps, ws](Tape<S>& t, const Tensor<S>& g) {
    for (size_t i = 0; i < ps.size(); ++i) t.accum_flat(ps[i], 0, g[0] * ws[i]);
  });
}

}  // namespace ag
}  // namespace stylediff
