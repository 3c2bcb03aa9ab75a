#pragma once

#include <string>

#include "stylediff/encoders.hpp"
#include "stylediff/qformer.hpp"
#include "stylediff/unet.hpp"

namespace stylediff {

struct ModelDims {
  Index d = 64;       // shared text/image token dim
  Index patch = 8;
  Index image_size = 32;
  int qformer_blocks = 2;
  int heads = 4;
  UNetDims unet;
};

// Everything the pipeline trains and samples from: frozen encoders, the two
// instruction-bound Q-Formers, and the denoiser with its 16 joint
// cross-attention sites.
template <class S>
struct StyleModel {
  Vocabulary vocab;
  ModelDims dims;
  EncoderBundle<S> encoders;
  QFormer<S> style_qf;
  QFormer<S> content_qf;
  DenoiserUNet<S> unet;
  NoiseSchedule<S> schedule;
  TextFeatures<S> style_instruction;
  TextFeatures<S> content_instruction;

  StyleModel() = default;

  StyleModel(Vocabulary vocab_, const ModelDims& dims_, Index T, Rng& rng)
      : vocab(std::move(vocab_)), dims(dims_) {
    Index max_text = 8;
    Index max_img_tokens = (dims.image_size / dims.patch) * (dims.image_size / dims.patch);
    Rng enc_rng = rng.fork(1);
    encoders = EncoderBundle<S>(vocab, dims.d, dims.patch, max_text, max_img_tokens, enc_rng);
    // two extra embedding rows back the instruction words
    encoders.text.table.value =
        Tensor<S>::randn({text_table_rows(vocab), dims.d}, enc_rng, 1.0 / std::sqrt(double(dims.d)));
    Rng sq_rng = rng.fork(2);
    style_qf = QFormer<S>("style", {instruction_token_id("style", vocab)}, dims.d,
                          dims.qformer_blocks, dims.heads, sq_rng);
    Rng cq_rng = rng.fork(3);
    content_qf = QFormer<S>("content", {instruction_token_id("content", vocab)}, dims.d,
                            dims.qformer_blocks, dims.heads, cq_rng);
    Rng un_rng = rng.fork(4);
    unet = DenoiserUNet<S>(dims.unet, un_rng);
    schedule = make_schedule<S>(T);
    refresh_instruction_features();
  }

  // instruction text re-encoded from the (possibly retrained) text encoder
  void refresh_instruction_features() {
    style_instruction = encoders.text.encode({instruction_token_id("style", vocab)});
    content_instruction = encoders.text.encode({instruction_token_id("content", vocab)});
  }

  TextFeatures<S> encode_prompt(const std::string& prompt) {
    return encoders.text.encode(tokenize(prompt, vocab));
  }

  TextFeatures<S> null_text() { return encoders.text.encode({Vocabulary::kNullId}); }

  QueryTokens<S> extract_style(const Tensor<S>& reference) {
    return style_qf.extract(encoders.image.encode(reference), style_instruction);
  }

  QueryTokens<S> extract_content(const Tensor<S>& reference) {
    return content_qf.extract(encoders.image.encode(reference), content_instruction);
  }

  template <class F>
  void visit_params(F&& f) {
    encoders.visit_params(f);
    style_qf.visit_params(f);
    content_qf.visit_params(f);
    unet.visit_params(f);
  }

  std::vector<Param<S>*> trainable_params() {
    std::vector<Param<S>*> out;
    visit_params([&](Param<S>& p) {
      if (p.trainable) out.push_back(&p);
    });
    return out;
  }

  std::vector<std::string> trainable_names() {
    std::vector<std::string> out;
    visit_params([&](Param<S>& p) {
      if (p.trainable) out.push_back(p.name);
    });
    return out;
  }

  // adapter phase per the training recipe: encoders and base U-Net frozen,
  // Q-Formers (incl. query tokens) and the W_I projections learn
  void enter_adapter_phase() {
    encoders.freeze();
    unet.enter_adapter_phase();
    style_qf.set_trainable(true);
    content_qf.set_trainable(true);
  }

  void enter_base_phase() {
    encoders.freeze();
    unet.enter_base_phase();
    style_qf.set_trainable(false);
    content_qf.set_trainable(false);
  }
};

// cast every parameter into a fresh model of another scalar type (gradient
// checks run the same weights in double)
template <class T, class S, class ModelA, class ModelB>
void copy_params_cast(ModelA& src, ModelB& dst) {
  std::vector<const Param<S>*> sp;
  src.visit_params([&](Param<S>& p) { sp.push_back(&p); });
  size_t i = 0;
  dst.visit_params([&](Param<T>& p) {
    if (i >= sp.size()) throw ConsistencyError("parameter count mismatch in copy_params_cast");
    if (p.name != sp[i]->name)
      throw ConsistencyError("parameter order mismatch: " + p.name + " vs " + sp[i]->name);
    p.value = sp[i]->value.template cast<T>();
    p.trainable = sp[i]->trainable;
    ++i;
  });
  if (i != sp.size()) throw ConsistencyError("parameter count mismatch in copy_params_cast");
}

}  // namespace stylediff
