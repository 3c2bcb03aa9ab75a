#include <doctest.h>

#include "stylediff/gradcheck.hpp"
#include "stylediff/tape.hpp"

using namespace stylediff;

TEST_CASE("linear_project on hand-checked inputs") {
  auto x = Tensord::from_rows({{1, 0}});
  auto W = Tensord::from_rows({{2, 0}, {0, 3}});
  auto y = linear_project(x, W);
  CHECK(y.at2(0, 0) == doctest::Approx(2));
  CHECK(y.at2(0, 1) == doctest::Approx(0));

  auto I = Tensord::identity(2);
  auto ones = Tensord::from_rows({{1, 1}});
  auto yi = linear_project(ones, I);
  CHECK(yi.at2(0, 0) == doctest::Approx(1));
  CHECK(yi.at2(0, 1) == doctest::Approx(1));

  auto x2 = Tensord::from_rows({{1, 2}});
  auto W2 = Tensord::from_rows({{1, 1}, {1, -1}});
  auto y2 = linear_project(x2, W2);
  CHECK(y2.at2(0, 0) == doctest::Approx(3));
  CHECK(y2.at2(0, 1) == doctest::Approx(-1));
}

TEST_CASE("linear_project rejects mismatched inner dims, naming both shapes") {
  auto x = Tensord::zeros({2, 3});
  auto W = Tensord::zeros({4, 2});
  try {
    linear_project(x, W);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x2") != std::string::npos);
  }
}

TEST_CASE("softmax_rows closed-form values and stabilization") {
  auto a = softmax_rows(Tensord::from_rows({{0, 0}}));
  CHECK(a.at2(0, 0) == doctest::Approx(0.5));
  CHECK(a.at2(0, 1) == doctest::Approx(0.5));

  auto big = softmax_rows(Tensord::from_rows({{1000, 1000}}));
  CHECK(big.all_finite());
  CHECK(big.at2(0, 0) == doctest::Approx(0.5));

  auto c = softmax_rows(Tensord::from_rows({{std::log(2.0), 0.0}}));
  CHECK(c.at2(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(c.at2(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("softmax_rows invariant to per-row constant shifts") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = Tensord::randn({3, 5}, rng, 2.0);
    auto shifted = m;
    for (Index r = 0; r < 3; ++r) {
      double c = rng.uniform(-5, 5);
      for (Index j = 0; j < 5; ++j) shifted.at2(r, j) += c;
    }
    CHECK(max_abs_diff(softmax_rows(m), softmax_rows(shifted)) < 1e-6);
  }
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(9);
  auto m = Tensord::randn({6, 9}, rng, 3.0);
  auto s = softmax_rows(m);
  for (Index r = 0; r < 6; ++r) {
    double sum = 0;
    for (Index c = 0; c < 9; ++c) {
      sum += s.at2(r, c);
      CHECK(s.at2(r, c) >= 0.0);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

namespace {

// scalar-loop softmax attention, independent of the Eigen path
Tensord naive_attention(const Tensord& Q, const Tensord& K, const Tensord& V) {
  Index n = Q.dim(0), m = K.dim(0), d = Q.dim(1), dv = V.dim(1);
  Tensord out = Tensord::zeros({n, dv});
  for (Index i = 0; i < n; ++i) {
    std::vector<double> logits(static_cast<size_t>(m), 0.0);
    double mx = -1e300;
    for (Index j = 0; j < m; ++j) {
      double acc = 0;
      for (Index k = 0; k < d; ++k) acc += Q.at2(i, k) * K.at2(j, k);
      logits[static_cast<size_t>(j)] = acc / std::sqrt(double(d));
      mx = std::max(mx, logits[static_cast<size_t>(j)]);
    }
    double z = 0;
    for (Index j = 0; j < m; ++j) z += std::exp(logits[static_cast<size_t>(j)] - mx);
    for (Index j = 0; j < m; ++j) {
      double w = std::exp(logits[static_cast<size_t>(j)] - mx) / z;
      for (Index k = 0; k < dv; ++k) out.at2(i, k) += w * V.at2(j, k);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("scaled_dot_attention examples") {
  // zero query -> uniform mixture of V rows
  auto Q = Tensord::zeros({1, 2});
  auto K = Tensord::from_rows({{3, 1}, {-2, 5}});
  auto V = Tensord::from_rows({{1, 0}, {0, 1}});
  auto out = scaled_dot_attention(Q, K, V);
  CHECK(out.at2(0, 0) == doctest::Approx(0.5));
  CHECK(out.at2(0, 1) == doctest::Approx(0.5));

  // frozen value from the scalar oracle: softmax([1/sqrt(2), 0])
  auto Q2 = Tensord::from_rows({{1, 0}});
  auto K2 = Tensord::from_rows({{1, 0}, {0, 1}});
  auto out2 = scaled_dot_attention(Q2, K2, V);
  CHECK(out2.at2(0, 0) == doctest::Approx(0.6698).epsilon(1e-3));
  CHECK(out2.at2(0, 1) == doctest::Approx(0.3302).epsilon(1e-3));
  CHECK(max_abs_diff(out2, naive_attention(Q2, K2, V)) < 1e-12);
}

TEST_CASE("scaled_dot_attention matches the scalar oracle on random inputs") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    auto Q = Tensord::randn({4, 6}, rng);
    auto K = Tensord::randn({5, 6}, rng);
    auto V = Tensord::randn({5, 3}, rng);
    CHECK(max_abs_diff(scaled_dot_attention(Q, K, V), naive_attention(Q, K, V)) < 1e-10);
  }
}

TEST_CASE("attention duplicate-token invariance") {
  Rng rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    auto Q = Tensord::randn({3, 4}, rng);
    auto K = Tensord::randn({5, 4}, rng);
    auto V = Tensord::randn({5, 2}, rng);
    auto K2 = concat_rows(K, K);
    auto V2 = concat_rows(V, V);
    CHECK(max_abs_diff(scaled_dot_attention(Q, K, V), scaled_dot_attention(Q, K2, V2)) < 1e-6);
  }
}

TEST_CASE("attention rows are convex combinations of V") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    auto Q = Tensord::randn({4, 3}, rng);
    auto K = Tensord::randn({6, 3}, rng);
    auto V = Tensord::randn({6, 1}, rng);
    double lo = 1e300, hi = -1e300;
    for (Index j = 0; j < 6; ++j) {
      lo = std::min(lo, V.at2(j, 0));
      hi = std::max(hi, V.at2(j, 0));
    }
    auto out = scaled_dot_attention(Q, K, V);
    for (Index i = 0; i < 4; ++i) {
      CHECK(out.at2(i, 0) >= lo - 1e-9);
      CHECK(out.at2(i, 0) <= hi + 1e-9);
    }
  }
}

TEST_CASE("attention dimension errors") {
  auto Q = Tensord::zeros({1, 2});
  auto K = Tensord::zeros({2, 3});
  auto V = Tensord::zeros({2, 2});
  CHECK_THROWS_AS(scaled_dot_attention(Q, K, V), DimensionError);
  auto V2 = Tensord::zeros({3, 2});
  auto K2 = Tensord::zeros({2, 2});
  CHECK_THROWS_AS(scaled_dot_attention(Q, K2, V2), DimensionError);
}

TEST_CASE("finite_diff_grad_check on a quadratic") {
  // loss = 0.5 * ||W x||^2 at W = I
  Rng rng(5);
  Tensord W = Tensord::identity(3);
  Tensord x = Tensord::randn({3, 1}, rng);
  auto loss_fn = [&]() {
    auto y = linear_project(x.reshaped({1, 3}), W.reshaped({3, 3}));
    double acc = 0;
    for (Index i = 0; i < y.numel(); ++i) acc += 0.5 * y[i] * y[i];
    return acc;
  };
  // analytic: dL/dW = x y^T with y = W x = x at identity
  Tensord analytic = Tensord::zeros({3, 3});
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) analytic.at2(j, i) = x[j] * x[i];
  auto reports = finite_diff_grad_check(loss_fn, {{"W", &W, analytic}});
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].passed);
  CHECK(reports[0].max_rel_error < 1e-6);
}

TEST_CASE("finite_diff_grad_check flags non-determinism") {
  Tensord W = Tensord::zeros({1});
  int calls = 0;
  auto loss_fn = [&]() { return static_cast<double>(calls++); };
  CHECK_THROWS_AS(finite_diff_grad_check(loss_fn, {{"W", &W, Tensord::zeros({1})}}),
                  DeterminismError);
}

TEST_CASE("finite_diff_grad_check accepts a constant parameter") {
  Tensord W = Tensord::zeros({4});
  auto loss_fn = []() { return 3.25; };
  auto reports = finite_diff_grad_check(loss_fn, {{"W", &W, Tensord::zeros({4})}});
  CHECK(reports[0].passed);
  CHECK(reports[0].max_rel_error == doctest::Approx(0.0));
}

TEST_CASE("finite_diff_grad_check validates eps") {
  Tensord W = Tensord::zeros({1});
  GradCheckOptions opt;
  opt.eps = 0.5;
  CHECK_THROWS_AS(finite_diff_grad_check([]() { return 0.0; }, {{"W", &W, Tensord::zeros({1})}}, opt),
                  ParameterError);
}

// ---- tape op gradients against the FD oracle ----

namespace {

template <class Fn>
void check_op_gradient(const char* name, Shape in_shape, Fn&& graph, uint64_t seed,
                       double tol = 1e-4) {
  Rng rng(seed);
  Param<double> p{name, Tensord::randn(in_shape, rng, 0.7), true};
  auto loss_value = [&]() {
    Tape<double> t(false);
    return t.val(graph(t, t.leaf(p.value)))[0];
  };
  Tape<double> t(true);
  int loss = graph(t, t.param(p));
  t.backward(loss);
  Tensord analytic = t.grad(t.params()[0].second);
  auto reports = finite_diff_grad_check(loss_value, {{name, &p.value, analytic}});
  CAPTURE(name);
  CHECK(reports[0].max_rel_error < tol);
}

}  // namespace

TEST_CASE("tape op gradients pass the finite-difference oracle") {
  Rng aux(99);
  Tensord other = Tensord::randn({4, 5}, aux, 0.9);
  Tensord w35 = Tensord::randn({5, 3}, aux, 0.8);
  Tensord gain = Tensord::randn({5}, aux, 0.3);
  Tensord bias = Tensord::randn({5}, aux, 0.3);

  check_op_gradient("matmul", {4, 5}, [&](Tape<double>& t, int x) {
    int w = t.leaf(w35);
    return ag::mse(t, ag::matmul(t, x, w), t.leaf(Tensord::zeros({4, 3})));
  }, 101);

  check_op_gradient("matmul_nt", {4, 5}, [&](Tape<double>& t, int x) {
    int w = t.leaf(other);
    return ag::mse(t, ag::matmul_nt(t, x, w), t.leaf(Tensord::zeros({4, 4})));
  }, 102);

  check_op_gradient("softmax", {4, 5}, [&](Tape<double>& t, int x) {
    int s = ag::softmax_rows(t, x);
    int w = t.leaf(w35);
    return ag::mse(t, ag::matmul(t, s, w), t.leaf(Tensord::zeros({4, 3})));
  }, 103);

  check_op_gradient("silu", {4, 5}, [&](Tape<double>& t, int x) {
    return ag::mse(t, ag::silu(t, x), t.leaf(Tensord::zeros({4, 5})));
  }, 104);

  check_op_gradient("layer_norm", {4, 5}, [&](Tape<double>& t, int x) {
    int ln = ag::layer_norm(t, x, t.leaf(gain), t.leaf(bias));
    return ag::mse(t, ln, t.leaf(Tensord::zeros({4, 5})));
  }, 105);

  check_op_gradient("layer_norm_gain", {5}, [&](Tape<double>& t, int g) {
    int x = t.leaf(other);
    int ln = ag::layer_norm(t, x, g, t.leaf(bias));
    return ag::mse(t, ln, t.leaf(Tensord::zeros({4, 5})));
  }, 106);

  check_op_gradient("group_norm", {6, 8}, [&](Tape<double>& t, int x) {
    Rng r(7);
    int g = t.leaf(Tensord::randn({8}, r, 0.4));
    int b = t.leaf(Tensord::randn({8}, r, 0.4));
    int gn = ag::group_norm(t, x, 4, g, b);
    return ag::mse(t, gn, t.leaf(Tensord::zeros({6, 8})));
  }, 107);

  check_op_gradient("im2col", {16, 2}, [&](Tape<double>& t, int x) {
    int cols = ag::im2col(t, x, 4, 4, 2, 3, 1, 1);
    return ag::mse(t, cols, t.leaf(Tensord::zeros({16, 18})));
  }, 108);

  check_op_gradient("im2col_stride2", {16, 2}, [&](Tape<double>& t, int x) {
    int cols = ag::im2col(t, x, 4, 4, 2, 3, 2, 1);
    return ag::mse(t, cols, t.leaf(Tensord::zeros({4, 18})));
  }, 109);

  check_op_gradient("upsample2x", {16, 3}, [&](Tape<double>& t, int x) {
    int u = ag::upsample2x(t, x, 4, 4, 3);
    return ag::mse(t, u, t.leaf(Tensord::zeros({64, 3})));
  }, 110);

  check_op_gradient("concat_slice", {4, 6}, [&](Tape<double>& t, int x) {
    int top = ag::slice_rows(t, x, 0, 2);
    int bottom = ag::slice_rows(t, x, 2, 2);
    int joined = ag::concat_rows(t, bottom, top);
    int left = ag::slice_cols(t, joined, 0, 3);
    int right = ag::slice_cols(t, joined, 3, 3);
    int cols = ag::concat_cols(t, {right, left});
    return ag::mse(t, cols, t.leaf(Tensord::zeros({4, 6})));
  }, 111);

  check_op_gradient("add_bias_mean", {4, 5}, [&](Tape<double>& t, int x) {
    int b = t.leaf(bias);
    int y = ag::add_bias(t, x, b);
    int m = ag::mean_rows(t, y);
    return ag::mse(t, m, t.leaf(Tensord::zeros({1, 5})));
  }, 112);

  check_op_gradient("cross_entropy", {3, 4}, [&](Tape<double>& t, int x) {
    return ag::cross_entropy_logits(t, x, {1, 0, 3});
  }, 113);

  check_op_gradient("gather_rows", {6, 4}, [&](Tape<double>& t, int x) {
    int g = ag::gather_rows(t, x, {0, 2, 2, 5});
    return ag::mse(t, g, t.leaf(Tensord::zeros({4, 4})));
  }, 114);
}

TEST_CASE("frozen leaves receive no gradient while grads still flow through") {
  Rng rng(31);
  Param<double> trainable{"w", Tensord::randn({3, 3}, rng), true};
  Param<double> frozen{"frozen", Tensord::randn({3, 3}, rng), false};
  Tape<double> t(true);
  int a = t.param(trainable);
  int f = t.param(frozen);
  int y = ag::matmul(t, a, f);  // gradient must flow through f to a
  int loss = ag::mse(t, y, t.leaf(Tensord::zeros({3, 3})));
  t.backward(loss);
  CHECK(t.has_grad(t.params()[0].second));
  CHECK_FALSE(t.has_grad(t.params()[1].second));
  int with_grad = 0;
  t.for_each_param_grad([&](Param<double>& p, const Tensord&) {
    ++with_grad;
    CHECK(p.name == "w");
  });
  CHECK(with_grad == 1);
}
