#pragma once

#include <string>
#include <vector>

#include "stylediff/attention.hpp"
#include "stylediff/encoders.hpp"

namespace stylediff {

inline constexpr Index kNumQueryTokens = 16;

// Instruction words live in two reserved embedding rows after the vocabulary.
inline int instruction_token_id(const std::string& word, const Vocabulary& vocab) {
  if (word == "style") return vocab.size();
  if (word == "content") return vocab.size() + 1;
  throw InstructionError("no instruction token for '" + word + "'");
}

inline int text_table_rows(const Vocabulary& vocab) { return vocab.size() + 2; }

template <class S>
struct QueryTokens {
  Tensor<S> tokens;  // 16 x d
  std::string source_instruction;
};

template <class S>
struct QFormerBlock {
  Param<S> ln1_g, ln1_b;
  Param<S> self_wq, self_wk, self_wv, self_wo;
  Param<S> ln2_g, ln2_b;
  Param<S> cross_wq, cross_wk, cross_wv, cross_wo;
  Param<S> ln3_g, ln3_b;
  Param<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  template <class F>
  void visit_params(F&& f) {
    f(ln1_g), f(ln1_b);
    f(self_wq), f(self_wk), f(self_wv), f(self_wo);
    f(ln2_g), f(ln2_b);
    f(cross_wq), f(cross_wk), f(cross_wv), f(cross_wo);
    f(ln3_g), f(ln3_b);
    f(ffn_w1), f(ffn_b1), f(ffn_w2), f(ffn_b2);
  }
};

// Representation filter: 16 learnable query tokens refined by self-attention
// over [queries ⊕ instruction tokens], cross-attention into the image
// embedding, and a feed-forward, repeated per block. The instruction word is
// bound at construction; extract() rejects any other instruction text.
template <class S>
class QFormer {
 public:
  QFormer() = default;

  QFormer(std::string instruction, std::vector<int> expected_instruction_ids, Index d, int blocks,
          int heads, Rng& rng)
      : instruction_(std::move(instruction)),
        expected_ids_(std::move(expected_instruction_ids)),
        d_(d),
        heads_(heads) {
    const std::string base = "qformer." + instruction_ + ".";
    double s = 1.0 / std::sqrt(double(d));
    query_tokens_ = {base + "query_tokens", Tensor<S>::randn({kNumQueryTokens, d}, rng, s), true};
    Index h = 2 * d;
    blocks_.resize(static_cast<size_t>(blocks));
    for (int b = 0; b < blocks; ++b) {
      auto& blk = blocks_[static_cast<size_t>(b)];
      const std::string p = base + "block" + std::to_string(b) + ".";
      auto mat = [&](const std::string& n, Index r, Index c, double sc) {
        return Param<S>{p + n, Tensor<S>::randn({r, c}, rng, sc), true};
      };
      auto ones = [&](const std::string& n, Index n_el) {
        return Param<S>{p + n, Tensor<S>::full({n_el}, S(1)), true};
      };
      auto zeros = [&](const std::string& n, Index n_el) {
        return Param<S>{p + n, Tensor<S>::zeros({n_el}), true};
      };
      blk.ln1_g = ones("ln1_g", d), blk.ln1_b = zeros("ln1_b", d);
      blk.self_wq = mat("self_wq", d, d, s), blk.self_wk = mat("self_wk", d, d, s);
      blk.self_wv = mat("self_wv", d, d, s), blk.self_wo = mat("self_wo", d, d, s);
      blk.ln2_g = ones("ln2_g", d), blk.ln2_b = zeros("ln2_b", d);
      blk.cross_wq = mat("cross_wq", d, d, s), blk.cross_wk = mat("cross_wk", d, d, s);
      blk.cross_wv = mat("cross_wv", d, d, s), blk.cross_wo = mat("cross_wo", d, d, s);
      blk.ln3_g = ones("ln3_g", d), blk.ln3_b = zeros("ln3_b", d);
      blk.ffn_w1 = mat("ffn_w1", d, h, s);
      blk.ffn_b1 = zeros("ffn_b1", h);
      blk.ffn_w2 = mat("ffn_w2", h, d, 1.0 / std::sqrt(double(h)));
      blk.ffn_b2 = zeros("ffn_b2", d);
    }
    out_ln_g_ = {base + "out_ln_g", Tensor<S>::full({d}, S(1)), true};
    out_ln_b_ = {base + "out_ln_b", Tensor<S>::zeros({d}), true};
  }

  const std::string& instruction() const { return instruction_; }
  Index dim() const { return d_; }
  Param<S>& query_tokens() { return query_tokens_; }

  // graph-level pass; image/instruction tokens are tape nodes
  int forward(Tape<S>& t, int image_tokens, int instr_tokens) {
    int x = t.param(query_tokens_);
    for (auto& blk : blocks_) {
      int h = ag::layer_norm(t, x, t.param(blk.ln1_g), t.param(blk.ln1_b));
      int kv = ag::concat_rows(t, h, instr_tokens);
      int att = multi_head_attention(t, linear(t, h, t.param(blk.self_wq)),
                                     linear(t, kv, t.param(blk.self_wk)),
                                     linear(t, kv, t.param(blk.self_wv)), heads_);
      x = ag::add(t, x, linear(t, att, t.param(blk.self_wo)));

      h = ag::layer_norm(t, x, t.param(blk.ln2_g), t.param(blk.ln2_b));
      att = multi_head_attention(t, linear(t, h, t.param(blk.cross_wq)),
                                 linear(t, image_tokens, t.param(blk.cross_wk)),
                                 linear(t, image_tokens, t.param(blk.cross_wv)), heads_);
      x = ag::add(t, x, linear(t, att, t.param(blk.cross_wo)));

      h = ag::layer_norm(t, x, t.param(blk.ln3_g), t.param(blk.ln3_b));
      int f = linear(t, ag::silu(t, linear(t, h, t.param(blk.ffn_w1), t.param(blk.ffn_b1))),
                     t.param(blk.ffn_w2), t.param(blk.ffn_b2));
      x = ag::add(t, x, f);
    }
    return ag::layer_norm(t, x, t.param(out_ln_g_), t.param(out_ln_b_));
  }

  // graph-level pass with the instruction binding check
  int forward_checked(Tape<S>& t, int image_tokens, const TextFeatures<S>& instr) {
    check_instruction(instr);
    return forward(t, image_tokens, t.leaf(instr.tokens));
  }

  QueryTokens<S> extract(const ImageEmbedding<S>& image, const TextFeatures<S>& instr) {
    check_instruction(instr);
    Tape<S> t(false);
    int out = forward(t, t.leaf(image.tokens), t.leaf(instr.tokens));
    return {t.val(out), instruction_};
  }

  void check_instruction(const TextFeatures<S>& instr) const {
    if (instr.token_ids != expected_ids_)
      throw InstructionError("Q-Former bound to '" + instruction_ +
                             "' received mismatched instruction text");
  }

  template <class F>
  void visit_params(F&& f) {
    f(query_tokens_);
    for (auto& blk : blocks_) blk.visit_params(f);
    f(out_ln_g_);
    f(out_ln_b_);
  }

  void set_trainable(bool v) {
    visit_params([v](Param<S>& p) { p.trainable = v; });
  }

 private:
  std::string instruction_;
  std::vector<int> expected_ids_;
  Index d_ = 0;
  int heads_ = 4;
  Param<S> query_tokens_;
  std::vector<QFormerBlock<S>> blocks_;
  Param<S> out_ln_g_, out_ln_b_;
};

}  // namespace stylediff
