#include <doctest.h>

#include "stylediff/model.hpp"

using namespace stylediff;

namespace {

StyleModel<float>& shared_model() {
  static StyleModel<float> model = [] {
    Rng rng(17);
    ModelDims dims;
    return StyleModel<float>(default_vocabulary(), dims, 1000, rng);
  }();
  return model;
}

ConditioningBundle<float> text_bundle(StyleModel<float>& m, const std::string& prompt) {
  ConditioningBundle<float> b;
  b.text = m.encode_prompt(prompt);
  return b;
}

}  // namespace

TEST_CASE("make_schedule endpoints and monotonicity") {
  auto s = make_schedule<double>(1000);
  CHECK(s.alphas_cumprod[0] == doctest::Approx(0.9999).epsilon(1e-9));
  for (Index i = 1; i < 1000; ++i) {
    CHECK(s.alphas_cumprod[i] < s.alphas_cumprod[i - 1]);
    CHECK(s.alphas_cumprod[i] > 0.0);
    CHECK(s.betas[i] >= s.betas[i - 1]);
  }
  auto s2 = make_schedule<double>(2);
  CHECK(s2.betas[0] == doctest::Approx(1e-4));
  CHECK(s2.betas[1] == doctest::Approx(0.02));
  CHECK_THROWS_AS(make_schedule<double>(1), ParameterError);
}

TEST_CASE("add_noise algebra") {
  auto s = make_schedule<double>(100);
  Rng rng(3);
  Tensord z0 = Tensord::randn({4, 4, 3}, rng);
  Tensord eps = Tensord::randn({4, 4, 3}, rng);
  Tensord zero = Tensord::zeros({4, 4, 3});

  Tensord no_noise = add_noise(z0, Index(0), zero, s);
  for (Index i = 0; i < z0.numel(); ++i)
    CHECK(no_noise[i] == doctest::Approx(std::sqrt(s.alphas_cumprod[0]) * z0[i]));
  // near t=0 the signal survives almost unchanged
  CHECK(max_abs_diff(no_noise, z0) < 1e-3);

  Tensord pure = add_noise(zero, Index(50), eps, s);
  for (Index i = 0; i < eps.numel(); ++i)
    CHECK(pure[i] == doctest::Approx(std::sqrt(1.0 - s.alphas_cumprod[50]) * eps[i]));

  CHECK_THROWS_AS(add_noise(z0, Index(100), eps, s), ParameterError);
  CHECK_THROWS_AS(add_noise(z0, Index(-1), eps, s), ParameterError);
}

TEST_CASE("routing table is the fixed coarse/fine partition") {
  RoutingTable rt = routing_table();
  CHECK(rt.at(6) == RepClass::kContent);
  CHECK(rt.at(0) == RepClass::kStyle);
  CHECK(rt.count(RepClass::kContent) == 5);
  CHECK(rt.count(RepClass::kStyle) == 11);
  for (int k = 0; k < 16; ++k) {
    bool coarse = (k >= 4 && k <= 8);
    CHECK(rt.at(k) == (coarse ? RepClass::kContent : RepClass::kStyle));
  }
  CHECK_THROWS_AS(rt.at(16), ParameterError);
}

TEST_CASE("forward_denoise runs text-only, deterministically, shape-preserving") {
  auto& m = shared_model();
  Rng rng(5);
  Tensorf z = Tensorf::randn({32, 32, 3}, rng);
  auto bundle = text_bundle(m, "circle, gold leaf");
  Tensorf a = m.unet.forward_denoise(z, 500, bundle);
  CHECK(a.shape() == z.shape());
  Tensorf b = m.unet.forward_denoise(z, 500, bundle);
  CHECK(a.bitwise_equal(b));
}

TEST_CASE("bundles with contradicting instruction tags are rejected") {
  auto& m = shared_model();
  Rng rng(6);
  Tensorf z = Tensorf::randn({32, 32, 3}, rng);
  ConditioningBundle<float> bad = text_bundle(m, "circle");
  bad.style_tokens = QueryTokens<float>{Tensorf::randn({16, 64}, rng), "content"};
  CHECK_THROWS_AS(m.unet.forward_denoise(z, 10, bad), InstructionError);
  ConditioningBundle<float> bad2 = text_bundle(m, "circle");
  bad2.content_tokens = QueryTokens<float>{Tensorf::randn({16, 64}, rng), "style"};
  CHECK_THROWS_AS(m.unet.forward_denoise(z, 10, bad2), InstructionError);
}

TEST_CASE("per-site behavioral routing: sites ignore the class not assigned to them") {
  auto& m = shared_model();
  Rng rng(7);
  RoutingTable rt = m.unet.routing();
  for (int k = 0; k < kNumAttentionSites; ++k) {
    auto& site = m.unet.sites()[static_cast<size_t>(k)];
    Index ch = site.channels;
    Tensorf z = Tensorf::randn({64, ch}, rng, 0.5);
    Tensorf text = Tensorf::randn({2, 64}, rng, 0.5);
    Tensorf style_a = Tensorf::randn({16, 64}, rng, 0.5);
    Tensorf style_b = Tensorf::randn({16, 64}, rng, 0.5);
    Tensorf content_a = Tensorf::randn({16, 64}, rng, 0.5);
    Tensorf content_b = Tensorf::randn({16, 64}, rng, 0.5);

    auto run = [&](const Tensorf& style, const Tensorf& content) {
      Tape<float> t(false);
      CondIds cond;
      cond.text = t.leaf(text);
      cond.style = t.leaf(style);
      cond.content = t.leaf(content);
      int out = site.forward(t, t.leaf(z), m.unet.pick_tokens(k, cond), cond.text);
      return t.val(out);
    };

    if (rt.at(k) == RepClass::kStyle) {
      CHECK(run(style_a, content_a).bitwise_equal(run(style_a, content_b)));
      CHECK_FALSE(run(style_a, content_a).bitwise_equal(run(style_b, content_a)));
    } else {
      CHECK(run(style_a, content_a).bitwise_equal(run(style_b, content_a)));
      CHECK_FALSE(run(style_a, content_a).bitwise_equal(run(style_a, content_b)));
    }
  }
}

TEST_CASE("training_loss closed-form cases") {
  auto sched = make_schedule<float>(50);
  Rng rng(8);
  DiffusionBatch<float> batch;
  for (int i = 0; i < 3; ++i) {
    batch.z0.push_back(Tensorf::randn({32, 32, 3}, rng));
    batch.t.push_back(Index(10 + i));
    batch.eps.push_back(Tensorf::randn({32, 32, 3}, rng));
    ConditioningBundle<float> c;
    c.text = shared_model().null_text();
    batch.cond.push_back(c);
  }

  // a model that answers with the exact noise
  size_t idx = 0;
  auto perfect = [&](const Tensorf&, Index, const ConditioningBundle<float>&) {
    return batch.eps[idx++];
  };
  CHECK(training_loss(batch, sched, perfect) == doctest::Approx(0.0));

  // constant offset c in every element costs exactly c^2
  idx = 0;
  auto offset = [&](const Tensorf&, Index, const ConditioningBundle<float>&) {
    Tensorf e = batch.eps[idx++];
    e.arr() += 0.5f;
    return e;
  };
  CHECK(training_loss(batch, sched, offset) == doctest::Approx(0.25).epsilon(1e-4));
}

TEST_CASE("training_loss is invariant to permuting batch elements") {
  auto& m = shared_model();
  auto sched = make_schedule<float>(100);
  Rng rng(9);
  DiffusionBatch<float> batch;
  for (int i = 0; i < 3; ++i) {
    batch.z0.push_back(Tensorf::randn({32, 32, 3}, rng));
    batch.t.push_back(Index(20 * (i + 1)));
    batch.eps.push_back(Tensorf::randn({32, 32, 3}, rng));
    batch.cond.push_back(text_bundle(m, "star, azure ink"));
  }
  auto fwd = [&](const Tensorf& z, Index t, const ConditioningBundle<float>& c) {
    return m.unet.forward_denoise(z, t, c);
  };
  float a = training_loss(batch, sched, fwd);
  DiffusionBatch<float> perm;
  for (int i : {2, 0, 1}) {
    perm.z0.push_back(batch.z0[size_t(i)]);
    perm.t.push_back(batch.t[size_t(i)]);
    perm.eps.push_back(batch.eps[size_t(i)]);
    perm.cond.push_back(batch.cond[size_t(i)]);
  }
  float b = training_loss(perm, sched, fwd);
  CHECK(a == doctest::Approx(b).epsilon(1e-6));
}

TEST_CASE("both token sets absent degenerates to a plain text denoiser") {
  auto& m = shared_model();
  Rng rng(10);
  Tensorf z = Tensorf::randn({32, 32, 3}, rng);
  ConditioningBundle<float> plain = text_bundle(m, "ring, teal sketch");
  Tensorf out = m.unet.forward_denoise(z, 123, plain);
  CHECK(out.shape() == Shape{32, 32, 3});
  CHECK(out.all_finite());
}

TEST_CASE("eval counter instrumentation") {
  auto& m = shared_model();
  Rng rng(11);
  Tensorf z = Tensorf::randn({32, 32, 3}, rng);
  m.unet.reset_eval_count();
  auto bundle = text_bundle(m, "dot");
  m.unet.forward_denoise(z, 1, bundle);
  m.unet.forward_denoise(z, 2, bundle);
  CHECK(m.unet.eval_count() == 2);
}
