#include <doctest.h>

#include "stylediff/dataset.hpp"
#include "stylediff/training.hpp"

using namespace stylediff;

namespace {

StyleModel<float> make_model(uint64_t seed = 23) {
  Rng rng(seed);
  ModelDims dims;
  return StyleModel<float>(default_vocabulary(), dims, 100, rng);
}

PairedItem<float> make_item(TaskKind task, Rng& rng) {
  auto specs = default_style_specs();
  PairedItem<float> item;
  item.target_subject_word = "circle";
  item.target_style_word = specs[2].name;
  // SERE pairs share the subject but differ in style
  const StyleSpec& ref_spec = task == TaskKind::kSere ? specs[5] : specs[2];
  item.reference_image = procedural_render("circle", ref_spec, rng.next_u64());
  item.target_image = task == TaskKind::kRecon ? item.reference_image
                                               : procedural_render("circle", specs[2], rng.next_u64());
  item.task = task;
  return item;
}

}  // namespace

TEST_CASE("sample_task is uniform and seed-reproducible") {
  Rng rng(42);
  int counts[3] = {0, 0, 0};
  const int N = 30000;
  for (int i = 0; i < N; ++i) counts[static_cast<int>(sample_task(rng))]++;
  double chi2 = 0;
  for (int k = 0; k < 3; ++k) {
    CHECK(counts[k] >= 9500);
    CHECK(counts[k] <= 10500);
    double diff = counts[k] - N / 3.0;
    chi2 += diff * diff / (N / 3.0);
  }
  CHECK(chi2 < 18.42);  // 2 dof, p > 1e-4

  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(sample_task(a) == sample_task(b));
}

TEST_CASE("condition builders wire captions and token sets per task") {
  StyleModel<float> model = make_model();
  Rng rng(5);
  auto specs = default_style_specs();

  PairedItem<float> stre = make_item(TaskKind::kStre, rng);
  ConditioningBundle<float> b1 = build_condition_stre(stre, model);
  CHECK(b1.style_tokens.has_value());
  CHECK_FALSE(b1.content_tokens.has_value());
  CHECK(b1.text.token_ids == tokenize("circle", model.vocab));
  for (int id : b1.text.token_ids) CHECK_FALSE(model.vocab.is_style_id(id));

  PairedItem<float> sere = make_item(TaskKind::kSere, rng);
  sere.reference_image = procedural_render("circle", specs[0], rng.next_u64());
  ConditioningBundle<float> b2 = build_condition_sere(sere, model);
  CHECK(b2.content_tokens.has_value());
  CHECK_FALSE(b2.style_tokens.has_value());
  CHECK(b2.text.token_ids == tokenize(sere.target_style_word, model.vocab));
  for (int id : b2.text.token_ids) CHECK_FALSE(model.vocab.is_subject_id(id));

  PairedItem<float> recon = make_item(TaskKind::kRecon, rng);
  ConditioningBundle<float> b3 = build_condition_recon(recon, model);
  CHECK(b3.style_tokens.has_value());
  CHECK(b3.content_tokens.has_value());
  CHECK(b3.text.token_ids == std::vector<int>{Vocabulary::kNullId});

  // task mismatch is an error
  CHECK_THROWS_AS(build_condition_stre(sere, model), TaskError);
  CHECK_THROWS_AS(build_condition_sere(recon, model), TaskError);
  CHECK_THROWS_AS(build_condition_recon(stre, model), TaskError);

  // RECON with reference != target is malformed
  PairedItem<float> broken = make_item(TaskKind::kRecon, rng);
  broken.target_image = procedural_render("star", specs[1], 1);
  CHECK_THROWS_AS(build_condition_recon(broken, model), TaskError);
}

TEST_CASE("train_step updates only the adapter trainable set") {
  StyleModel<float> model = make_model();
  model.enter_adapter_phase();
  Rng rng(6);
  std::vector<PairedItem<float>> batch = {make_item(TaskKind::kRecon, rng),
                                          make_item(TaskKind::kStre, rng)};

  // snapshot every parameter
  std::vector<std::pair<std::string, Tensorf>> before;
  model.visit_params([&](Param<float>& p) { before.emplace_back(p.name, p.value); });

  TrainState<float> state(1e-3, 0.01, 99);
  TrainStepOptions opt;
  opt.p_drop = 0.0;
  opt.paranoid = true;
  float loss = train_step(state, batch, model, opt);
  CHECK(loss > 0.0f);
  CHECK(state.step == 1);

  size_t i = 0;
  int changed = 0, frozen_changed = 0;
  model.visit_params([&](Param<float>& p) {
    bool same = p.value.bitwise_equal(before[i].second);
    if (!same) {
      ++changed;
      if (!p.trainable) ++frozen_changed;
      // the trainable set is exactly Q-Formers, query tokens, W_I projections
      bool is_qf = p.name.rfind("qformer.", 0) == 0;
      bool is_wi =
          p.name.find("W_I_K") != std::string::npos || p.name.find("W_I_V") != std::string::npos;
      CHECK((is_qf || is_wi));
    }
    ++i;
  });
  CHECK(frozen_changed == 0);
  CHECK(changed > 0);
}

TEST_CASE("gradients over a mixed batch cover the whole declared trainable set") {
  StyleModel<float> model = make_model();
  model.enter_adapter_phase();
  Rng rng(7);
  // every task present, no dropout, so every adapter parameter participates
  std::vector<PairedItem<float>> batch = {make_item(TaskKind::kStre, rng),
                                          make_item(TaskKind::kSere, rng),
                                          make_item(TaskKind::kRecon, rng)};
  TrainState<float> state(1e-3, 0.01, 100);
  TrainStepOptions opt;
  opt.p_drop = 0.0;
  std::vector<std::pair<std::string, Tensorf>> before;
  model.visit_params([&](Param<float>& p) { before.emplace_back(p.name, p.value); });
  train_step(state, batch, model, opt);

  size_t i = 0;
  std::vector<std::string> untouched;
  model.visit_params([&](Param<float>& p) {
    if (p.trainable && p.value.bitwise_equal(before[i].second)) untouched.push_back(p.name);
    ++i;
  });
  // AdamW moves every parameter that received any gradient; the trainable set
  // must be covered exactly
  CHECK(untouched.empty());
}

TEST_CASE("train_step is bitwise reproducible under a fixed seed") {
  auto run = [](uint64_t seed) {
    StyleModel<float> model = make_model(31);
    model.enter_adapter_phase();
    Rng rng(8);
    std::vector<PairedItem<float>> batch = {make_item(TaskKind::kRecon, rng),
                                            make_item(TaskKind::kSere, rng)};
    TrainState<float> state(1e-3, 0.01, seed);
    TrainStepOptions opt;
    for (int s = 0; s < 3; ++s) train_step(state, batch, model, opt);
    std::vector<Tensorf> params;
    model.visit_params([&](Param<float>& p) { params.push_back(p.value); });
    return params;
  };
  auto a = run(5), b = run(5), c = run(6);
  REQUIRE(a.size() == b.size());
  bool all_eq = true, any_diff_seed = false;
  for (size_t i = 0; i < a.size(); ++i) {
    all_eq = all_eq && a[i].bitwise_equal(b[i]);
    any_diff_seed = any_diff_seed || !a[i].bitwise_equal(c[i]);
  }
  CHECK(all_eq);
  CHECK(any_diff_seed);
}

TEST_CASE("unconditional dropout produces null-text items") {
  StyleModel<float> model = make_model();
  model.enter_adapter_phase();
  Rng rng(9);
  std::vector<PairedItem<float>> batch = {make_item(TaskKind::kStre, rng)};
  TrainState<float> state(1e-3, 0.01, 3);
  TrainStepOptions opt;
  opt.p_drop = 1.0 - 1e-9;  // every item drops to the unconditional bundle
  train_step(state, batch, model, opt);
  // with the condition dropped, no Q-Former parameter saw a gradient
  // (AdamW may still apply weight decay only to params with grads; verify via
  // a second run against a zero-drop run)
  StyleModel<float> model2 = make_model();
  model2.enter_adapter_phase();
  Rng rng2(9);
  std::vector<PairedItem<float>> batch2 = {make_item(TaskKind::kStre, rng2)};
  TrainState<float> state2(1e-3, 0.01, 3);
  TrainStepOptions opt2;
  opt2.p_drop = 0.0;
  train_step(state2, batch2, model2, opt2);

  Tensorf q1 = model.style_qf.query_tokens().value;
  Tensorf q2 = model2.style_qf.query_tokens().value;
  StyleModel<float> fresh = make_model();
  CHECK(q1.bitwise_equal(fresh.style_qf.query_tokens().value));  // dropped -> untouched
  CHECK_FALSE(q2.bitwise_equal(fresh.style_qf.query_tokens().value));
}

TEST_CASE("frozen encoders and base U-Net stay bitwise constant through training") {
  StyleModel<float> model = make_model();
  model.enter_adapter_phase();
  Rng rng(10);
  std::vector<std::pair<std::string, Tensorf>> frozen_before;
  model.visit_params([&](Param<float>& p) {
    if (!p.trainable) frozen_before.emplace_back(p.name, p.value);
  });
  TrainState<float> state(2e-3, 0.01, 11);
  TrainStepOptions opt;
  for (int s = 0; s < 5; ++s) {
    std::vector<PairedItem<float>> batch = {make_item(sample_task(rng), rng)};
    if (batch[0].task == TaskKind::kRecon) batch[0].target_image = batch[0].reference_image;
    train_step(state, batch, model, opt);
  }
  size_t i = 0;
  model.visit_params([&](Param<float>& p) {
    if (p.trainable) return;
    CHECK(p.value.bitwise_equal(frozen_before[i].second));
    ++i;
  });
}
