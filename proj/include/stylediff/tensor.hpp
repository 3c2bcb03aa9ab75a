#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "stylediff/errors.hpp"
#include "stylediff/rng.hpp"

namespace stylediff {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

// Dense row-major multi-dimensional array over float or double. The storage is
// always contiguous; rank-2 views onto it drive all the linear algebra.
template <class S>
class Tensor {
 public:
  using Scalar = S;
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatView = Eigen::Map<Mat>;
  using ConstMatView = Eigen::Map<const Mat>;
  using ArrView = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
  using ConstArrView = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape();
    data_.setZero(shape_numel(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor uninit(Shape shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.check_shape();
    t.data_.resize(shape_numel(t.shape_));
    return t;
  }

  static Tensor full(Shape shape, S v) {
    Tensor t = uninit(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<S>> rows) {
    Index r = static_cast<Index>(rows.size());
    Index c = r ? static_cast<Index>(rows.begin()->size()) : 0;
    Tensor t = uninit({r, c});
    Index i = 0;
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != c)
        throw DimensionError("ragged initializer, expected " + std::to_string(c) + " columns");
      for (S v : row) t.data_[i++] = v;
    }
    t.ensure_finite("from_rows");
    return t;
  }

  static Tensor from_vec(Shape shape, const std::vector<S>& v) {
    Tensor t = uninit(std::move(shape));
    if (static_cast<Index>(v.size()) != t.numel())
      throw DimensionError("data size " + std::to_string(v.size()) + " does not match shape " +
                           shape_str(t.shape_));
    for (Index i = 0; i < t.numel(); ++i) t.data_[i] = v[static_cast<size_t>(i)];
    t.ensure_finite("from_vec");
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t = uninit(std::move(shape));
    for (Index i = 0; i < t.numel(); ++i) t.data_[i] = static_cast<S>(rng.normal() * scale);
    return t;
  }

  static Tensor identity(Index n) {
    Tensor t({n, n});
    for (Index i = 0; i < n; ++i) t.at2(i, i) = S(1);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index numel() const { return data_.size(); }
  Index dim(int i) const { return shape_[static_cast<size_t>(i)]; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  S& operator[](Index i) { return data_[i]; }
  S operator[](Index i) const { return data_[i]; }
  S& at2(Index r, Index c) { return data_[r * shape_[1] + c]; }
  S at2(Index r, Index c) const { return data_[r * shape_[1] + c]; }

  // rank<=2 matrix view; rank 0 -> 1x1, rank 1 -> 1xn
  MatView mat() {
    auto [r, c] = mat_dims();
    return MatView(data_.data(), r, c);
  }
  ConstMatView mat() const {
    auto [r, c] = mat_dims();
    return ConstMatView(data_.data(), r, c);
  }

  // arbitrary 2-d view, r*c must cover the buffer
  MatView view2d(Index r, Index c) {
    if (r * c != numel())
      throw DimensionError("view " + std::to_string(r) + "x" + std::to_string(c) +
                           " does not cover tensor " + shape_str(shape_));
    return MatView(data_.data(), r, c);
  }
  ConstMatView view2d(Index r, Index c) const {
    if (r * c != numel())
      throw DimensionError("view " + std::to_string(r) + "x" + std::to_string(c) +
                           " does not cover tensor " + shape_str(shape_));
    return ConstMatView(data_.data(), r, c);
  }

  ArrView arr() { return ArrView(data_.data(), numel()); }
  ConstArrView arr() const { return ConstArrView(data_.data(), numel()); }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw DimensionError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                           " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (Index i = 0; i < numel(); ++i)
      if (!std::isfinite(static_cast<double>(data_[i]))) return false;
    return true;
  }

  void ensure_finite(const char* where) const {
    if (!all_finite()) throw std::runtime_error(std::string(where) + ": non-finite value in tensor");
  }

  bool bitwise_equal(const Tensor& o) const {
    if (!same_shape(o)) return false;
    for (Index i = 0; i < numel(); ++i)
      if (data_[i] != o.data_[i] || std::signbit(data_[i]) != std::signbit(o.data_[i])) return false;
    return true;
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out = Tensor<T>::uninit(shape_);
    for (Index i = 0; i < numel(); ++i) out[i] = static_cast<T>(data_[i]);
    return out;
  }

 private:
  std::pair<Index, Index> mat_dims() const {
    if (shape_.empty()) return {1, 1};
    if (shape_.size() == 1) return {1, shape_[0]};
    if (shape_.size() == 2) return {shape_[0], shape_[1]};
    throw DimensionError("rank-" + std::to_string(shape_.size()) + " tensor " + shape_str(shape_) +
                         " has no canonical matrix view");
  }

  void check_shape() const {
    for (Index d : shape_)
      if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape_));
  }

  Shape shape_;
  Eigen::Matrix<S, Eigen::Dynamic, 1> data_;

  template <class T>
  friend class Tensor;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

// ---- core numeric primitives ----

// x[n x d_in] * W[d_in x d_out]
template <class S>
Tensor<S> linear_project(const Tensor<S>& x, const Tensor<S>& W) {
  if (x.rank() != 2 || W.rank() != 2)
    throw DimensionError("linear_project expects rank-2 operands, got " + shape_str(x.shape()) +
                         " and " + shape_str(W.shape()));
  if (x.dim(1) != W.dim(0))
    throw DimensionError("linear_project inner dims differ: " + shape_str(x.shape()) + " vs " +
                         shape_str(W.shape()));
  Tensor<S> out = Tensor<S>::uninit({x.dim(0), W.dim(1)});
  out.mat().noalias() = x.mat() * W.mat();
  return out;
}

// row-wise stabilized softmax
template <class S>
Tensor<S> softmax_rows(const Tensor<S>& m) {
  if (m.rank() != 2 || m.dim(1) == 0)
    throw DimensionError("softmax_rows needs a rank-2 tensor with nonempty rows, got " +
                         shape_str(m.shape()));
  Tensor<S> out = Tensor<S>::uninit(m.shape());
  auto in = m.mat();
  auto o = out.mat();
  for (Index r = 0; r < in.rows(); ++r) {
    S mx = in.row(r).maxCoeff();
    o.row(r) = (in.row(r).array() - mx).exp();
    o.row(r) /= o.row(r).sum();
  }
  return out;
}

// softmax(Q K^T / sqrt(d)) V
template <class S>
Tensor<S> scaled_dot_attention(const Tensor<S>& Q, const Tensor<S>& K, const Tensor<S>& V) {
  if (Q.rank() != 2 || K.rank() != 2 || V.rank() != 2)
    throw DimensionError("scaled_dot_attention expects rank-2 Q,K,V");
  if (Q.dim(1) == 0 || K.dim(0) == 0)
    throw DimensionError("scaled_dot_attention with empty feature or token axis: Q=" +
                         shape_str(Q.shape()) + " K=" + shape_str(K.shape()));
  if (Q.dim(1) != K.dim(1))
    throw DimensionError("Q/K feature dims differ: " + shape_str(Q.shape()) + " vs " +
                         shape_str(K.shape()));
  if (K.dim(0) != V.dim(0))
    throw DimensionError("K/V token dims differ: " + shape_str(K.shape()) + " vs " +
                         shape_str(V.shape()));
  Tensor<S> logits = Tensor<S>::uninit({Q.dim(0), K.dim(0)});
  S inv = static_cast<S>(1.0 / std::sqrt(static_cast<double>(Q.dim(1))));
  logits.mat().noalias() = (Q.mat() * K.mat().transpose()) * inv;
  Tensor<S> w = softmax_rows(logits);
  Tensor<S> out = Tensor<S>::uninit({Q.dim(0), V.dim(1)});
  out.mat().noalias() = w.mat() * V.mat();
  return out;
}

template <class S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("concat_rows column mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Tensor<S> out = Tensor<S>::uninit({a.dim(0) + b.dim(0), a.dim(1)});
  out.mat().topRows(a.dim(0)) = a.mat();
  out.mat().bottomRows(b.dim(0)) = b.mat();
  return out;
}

template <class S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b))
    throw DimensionError("max_abs_diff shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  double m = 0;
  for (Index i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace stylediff
