#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stylediff/attention.hpp"
#include "stylediff/rng.hpp"
#include "stylediff/tape.hpp"
#include "stylediff/vocab.hpp"

namespace stylediff {

template <class S>
struct TextFeatures {
  Tensor<S> tokens;  // s x d
  std::vector<int> token_ids;
};

template <class S>
struct ImageEmbedding {
  Tensor<S> tokens;  // p x d
};

// Embedding-table text encoder with learned positional offsets.
template <class S>
struct TextEncoder {
  Index d = 0;
  Index max_len = 0;
  Param<S> table;  // vocab_size x d
  Param<S> pos;    // max_len x d

  TextEncoder() = default;
  TextEncoder(int vocab_size, Index d_, Index max_len_, Rng& rng) : d(d_), max_len(max_len_) {
    table = {"encoder.text.table", Tensor<S>::randn({vocab_size, d}, rng, 1.0 / std::sqrt(double(d))),
             true};
    pos = {"encoder.text.pos", Tensor<S>::randn({max_len, d}, rng, 0.02), true};
  }

  int forward(Tape<S>& t, const std::vector<int>& ids) {
    if (ids.empty()) throw VocabularyError("encode_text on empty id list");
    if (static_cast<Index>(ids.size()) > max_len)
      throw DimensionError("prompt of " + std::to_string(ids.size()) + " tokens exceeds max_len " +
                           std::to_string(max_len));
    int emb = ag::gather_rows(t, t.param(table), ids);
    int p = ag::slice_rows(t, t.param(pos), 0, static_cast<Index>(ids.size()));
    return ag::add(t, emb, p);
  }

  TextFeatures<S> encode(const std::vector<int>& ids) {
    Tape<S> t(false);
    int out = forward(t, ids);
    return {t.val(out), ids};
  }

  template <class F>
  void visit_params(F&& f) {
    f(table);
    f(pos);
  }
};

// Patch-flattening image encoder: non-overlapping patches, linear projection,
// optional learned positional offset (disabled for covariance tests).
template <class S>
struct ImageEncoder {
  Index d = 0;
  Index patch = 8;
  Index max_tokens = 0;
  bool use_pos = true;
  Param<S> proj;  // (patch*patch*3) x d
  Param<S> bias;  // d
  Param<S> pos;   // max_tokens x d

  ImageEncoder() = default;
  ImageEncoder(Index d_, Index patch_, Index max_tokens_, Rng& rng)
      : d(d_), patch(patch_), max_tokens(max_tokens_) {
    Index in = patch * patch * 3;
    proj = {"encoder.image.proj", Tensor<S>::randn({in, d}, rng, 1.0 / std::sqrt(double(in))), true};
    bias = {"encoder.image.bias", Tensor<S>::zeros({d}), true};
    pos = {"encoder.image.pos", Tensor<S>::randn({max_tokens, d}, rng, 0.02), true};
  }

  // image is HxWx3 in [0,1]
  Tensor<S> patchify(const Tensor<S>& image) const {
    if (image.rank() != 3 || image.dim(2) != 3)
      throw DimensionError("encode_image expects HxWx3, got " + shape_str(image.shape()));
    Index H = image.dim(0), W = image.dim(1);
    if (H != W) throw DimensionError("encode_image expects a square image, got " +
                                     shape_str(image.shape()));
    if (H % patch != 0)
      throw DimensionError("image side " + std::to_string(H) + " not divisible by patch " +
                           std::to_string(patch));
    Index side = H / patch;
    Index n = side * side;
    Tensor<S> out = Tensor<S>::uninit({n, patch * patch * 3});
    for (Index py = 0; py < side; ++py)
      for (Index px = 0; px < side; ++px) {
        S* row = out.data() + (py * side + px) * patch * patch * 3;
        for (Index y = 0; y < patch; ++y)
          for (Index x = 0; x < patch; ++x) {
            const S* src = image.data() + ((py * patch + y) * W + (px * patch + x)) * 3;
            S* dst = row + (y * patch + x) * 3;
            dst[0] = src[0];
            dst[1] = src[1];
            dst[2] = src[2];
          }
      }
    return out;
  }

  int forward(Tape<S>& t, const Tensor<S>& image) {
    Tensor<S> patches = patchify(image);
    Index n = patches.dim(0);
    if (n > max_tokens)
      throw DimensionError("image yields " + std::to_string(n) + " tokens, positional table holds " +
                           std::to_string(max_tokens));
    int x = t.leaf(std::move(patches));
    int y = linear(t, x, t.param(proj), t.param(bias));
    if (use_pos) y = ag::add(t, y, ag::slice_rows(t, t.param(pos), 0, n));
    return y;
  }

  ImageEmbedding<S> encode(const Tensor<S>& image) {
    Tape<S> t(false);
    int out = forward(t, image);
    return {t.val(out)};
  }

  template <class F>
  void visit_params(F&& f) {
    f(proj);
    f(bias);
    f(pos);
  }
};

// labelled render for encoder warm-up and oracle training
template <class S>
struct LabelledImage {
  Tensor<S> image;
  int subject_index = 0;
  int style_index = 0;
};

// Frozen feature extractors plus the linear alignment head that defines the
// shared text-image metric space. Warm-up teaches the encoders to separate
// subject and style classes before everything is frozen.
template <class S>
struct EncoderBundle {
  TextEncoder<S> text;
  ImageEncoder<S> image;
  // alignment and the subject head read the full token grid (mean pooling
  // destroys the spatial layout subjects live in); the style head reads the
  // pooled feature
  Param<S> align_w;  // (p*d) x d, flattened image tokens -> text feature space
  Param<S> align_b;
  Param<S> subj_head_w, subj_head_b;          // (p*d) x n_subj
  Param<S> style_head_w, style_head_b;        // d x n_style
  Param<S> text_subj_head_w, text_subj_head_b;    // d x n_subj
  Param<S> text_style_head_w, text_style_head_b;  // d x n_style

  EncoderBundle() = default;
  EncoderBundle(const Vocabulary& vocab, Index d, Index patch, Index max_text_len,
                Index max_img_tokens, Rng& rng)
      : text(vocab.size(), d, max_text_len, rng), image(d, patch, max_img_tokens, rng) {
    int n_subj = static_cast<int>(vocab.subject_words().size());
    int n_style = static_cast<int>(vocab.style_words().size());
    Index pd = max_img_tokens * d;
    double spd = 1.0 / std::sqrt(double(pd));
    double sd = 1.0 / std::sqrt(double(d));
    align_w = {"encoder.align.w", Tensor<S>::randn({pd, d}, rng, spd), true};
    align_b = {"encoder.align.b", Tensor<S>::zeros({d}), true};
    subj_head_w = {"encoder.head.subject.w", Tensor<S>::randn({pd, n_subj}, rng, spd), true};
    subj_head_b = {"encoder.head.subject.b", Tensor<S>::zeros({n_subj}), true};
    style_head_w = {"encoder.head.style.w", Tensor<S>::randn({d, n_style}, rng, sd), true};
    style_head_b = {"encoder.head.style.b", Tensor<S>::zeros({n_style}), true};
    text_subj_head_w = {"encoder.head.text_subject.w", Tensor<S>::randn({d, n_subj}, rng, sd),
                        true};
    text_subj_head_b = {"encoder.head.text_subject.b", Tensor<S>::zeros({n_subj}), true};
    text_style_head_w = {"encoder.head.text_style.w", Tensor<S>::randn({d, n_style}, rng, sd),
                         true};
    text_style_head_b = {"encoder.head.text_style.b", Tensor<S>::zeros({n_style}), true};
  }

  template <class F>
  void visit_params(F&& f) {
    text.visit_params(f);
    image.visit_params(f);
    f(align_w);
    f(align_b);
    f(subj_head_w);
    f(subj_head_b);
    f(style_head_w);
    f(style_head_b);
    f(text_subj_head_w);
    f(text_subj_head_b);
    f(text_style_head_w);
    f(text_style_head_b);
  }

  void freeze() {
    visit_params([](Param<S>& p) { p.trainable = false; });
  }

  bool frozen() {
    bool all = true;
    visit_params([&](Param<S>& p) { all = all && !p.trainable; });
    return all;
  }

  // full token grid mapped into the text space (metric embedding)
  Tensor<S> embed_image_shared(const Tensor<S>& img) {
    Tape<S> t(false);
    int tokens = image.forward(t, img);
    int flat = ag::reshape(t, tokens, {Index(1), t.val(tokens).numel()});
    int a = linear(t, flat, t.param(align_w), t.param(align_b));
    return t.val(a);
  }

  Tensor<S> embed_text_shared(const std::vector<int>& ids) {
    Tape<S> t(false);
    int tokens = text.forward(t, ids);
    int pooled = ag::mean_rows(t, tokens);
    return t.val(pooled);
  }
};

template <class S>
double cosine_similarity(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b))
    throw DimensionError("cosine_similarity " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  double na = 0, nb = 0, dot = 0;
  for (Index i = 0; i < a.numel(); ++i) {
    dot += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace stylediff
