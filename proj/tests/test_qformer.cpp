#include <doctest.h>

#include "stylediff/gradcheck.hpp"
#include "stylediff/model.hpp"

using namespace stylediff;

namespace {

template <class S>
QFormer<S> make_qf(const std::string& instr, const Vocabulary& vocab, Rng& rng) {
  return QFormer<S>(instr, {instruction_token_id(instr, vocab)}, 64, 2, 4, rng);
}

}  // namespace

TEST_CASE("extract emits exactly 16 tagged tokens, deterministically") {
  Vocabulary vocab = default_vocabulary();
  Rng rng(1);
  TextEncoder<float> text(text_table_rows(vocab), 64, 8, rng);
  ImageEncoder<float> image(64, 8, 16, rng);
  QFormer<float> qf = make_qf<float>("style", vocab, rng);

  TextFeatures<float> instr = text.encode({instruction_token_id("style", vocab)});
  auto emb = image.encode(Tensorf::randn({32, 32, 3}, rng, 0.3));
  QueryTokens<float> out = qf.extract(emb, instr);
  CHECK(out.tokens.shape() == Shape{16, 64});
  CHECK(out.tokens.all_finite());
  CHECK(out.source_instruction == "style");

  QueryTokens<float> again = qf.extract(emb, instr);
  CHECK(out.tokens.bitwise_equal(again.tokens));

  // single-patch image still yields 16 tokens
  auto emb1 = image.encode(Tensorf::randn({8, 8, 3}, rng, 0.3));
  CHECK(qf.extract(emb1, instr).tokens.shape() == Shape{16, 64});
}

TEST_CASE("instruction binding rejects the wrong filter text") {
  Vocabulary vocab = default_vocabulary();
  Rng rng(2);
  TextEncoder<float> text(text_table_rows(vocab), 64, 8, rng);
  ImageEncoder<float> image(64, 8, 16, rng);
  QFormer<float> style_qf = make_qf<float>("style", vocab, rng);
  auto emb = image.encode(Tensorf::randn({32, 32, 3}, rng, 0.3));

  TextFeatures<float> content_instr = text.encode({instruction_token_id("content", vocab)});
  CHECK_THROWS_AS(style_qf.extract(emb, content_instr), InstructionError);
  // a vocabulary word is not an instruction either
  TextFeatures<float> word = text.encode(tokenize("circle", vocab));
  CHECK_THROWS_AS(style_qf.extract(emb, word), InstructionError);
}

TEST_CASE("gradients flow to Q-Former parameters but not the frozen encoder") {
  Vocabulary vocab = default_vocabulary();
  Rng rng(3);
  EncoderBundle<float> enc(vocab, 64, 8, 8, 16, rng);
  enc.text.table.value = Tensorf::randn({text_table_rows(vocab), 64}, rng, 0.1);
  enc.freeze();
  QFormer<float> qf = make_qf<float>("content", vocab, rng);
  TextFeatures<float> instr = enc.text.encode({instruction_token_id("content", vocab)});

  Tape<float> t(true);
  int img_tokens = enc.image.forward(t, Tensorf::randn({32, 32, 3}, rng, 0.3));
  int out = qf.forward_checked(t, img_tokens, instr);
  int loss = ag::mse(t, out, t.leaf(Tensorf::zeros({16, 64})));
  t.backward(loss);

  size_t qf_params = 0;
  qf.visit_params([&](Param<float>&) { ++qf_params; });
  size_t with_grad = 0;
  t.for_each_param_grad([&](Param<float>& p, const Tensorf& g) {
    ++with_grad;
    CHECK(p.name.rfind("qformer.content.", 0) == 0);
    CHECK(g.numel() == p.value.numel());
  });
  CHECK(with_grad == qf_params);
}

TEST_CASE("style and content Q-Formers are independent instances") {
  Vocabulary vocab = default_vocabulary();
  Rng rng(11);
  ModelDims dims;
  StyleModel<float> model(vocab, dims, 100, rng);
  CHECK(model.style_qf.instruction() == "style");
  CHECK(model.content_qf.instruction() == "content");
  CHECK_FALSE(model.style_qf.query_tokens().value.bitwise_equal(
      model.content_qf.query_tokens().value));
}

TEST_CASE("Q-Former gradients pass the finite-difference oracle in double") {
  Vocabulary vocab({"a"}, {"b"});
  Rng rng(5);
  QFormer<double> qf("style", {instruction_token_id("style", vocab)}, 16, 1, 4, rng);
  Tensord img_tokens = Tensord::randn({4, 16}, rng, 0.5);
  Tensord instr = Tensord::randn({1, 16}, rng, 0.5);
  Tensord target = Tensord::randn({16, 16}, rng, 0.3);

  auto loss_value = [&]() {
    Tape<double> t(false);
    int out = qf.forward(t, t.leaf(img_tokens), t.leaf(instr));
    return t.val(ag::mse(t, out, t.leaf(target)))[0];
  };
  Tape<double> t(true);
  int out = qf.forward(t, t.leaf(img_tokens), t.leaf(instr));
  t.backward(ag::mse(t, out, t.leaf(target)));
  std::vector<GradCheckTarget> targets;
  t.for_each_param_grad(
      [&](Param<double>& p, const Tensord& g) { targets.push_back({p.name, &p.value, g}); });
  GradCheckOptions opt;
  opt.max_coords = 6;
  for (auto& rep : finite_diff_grad_check(loss_value, std::move(targets), opt)) {
    CAPTURE(rep.param_name);
    CHECK(rep.max_rel_error < 1e-4);
  }
}
