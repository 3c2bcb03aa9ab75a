#pragma once

#include <optional>
#include <string>

#include "stylediff/attention.hpp"
#include "stylediff/qformer.hpp"

namespace stylediff {

// Joint text-image cross-attention: keys and values concatenate projected text
// features (frozen projections, part of the base network) with projected image
// query tokens (trainable projections). A single softmax runs over the
// combined token axis. The image projections start as bitwise copies of the
// text ones, which requires the text and token feature dims to agree.
template <class S>
class JointCrossAttention {
 public:
  JointCrossAttention() = default;

  JointCrossAttention(int site_index, Index d_z, Index d_txt, Index d_attn, int heads, Rng& rng)
      : site_index_(site_index), d_z_(d_z), d_txt_(d_txt), d_attn_(d_attn), heads_(heads) {
    const std::string p = "unet.site" + std::to_string(site_index) + ".";
    w_q_ = {p + "W_Q", Tensor<S>::randn({d_z, d_attn}, rng, 1.0 / std::sqrt(double(d_z))), true};
    double st = 1.0 / std::sqrt(double(d_txt));
    w_t_k_ = {p + "W_T_K", Tensor<S>::randn({d_txt, d_attn}, rng, st), true};
    w_t_v_ = {p + "W_T_V", Tensor<S>::randn({d_txt, d_attn}, rng, st), true};
    w_o_ = {p + "W_O", Tensor<S>::randn({d_attn, d_z}, rng, 1.0 / std::sqrt(double(d_attn))), true};
    w_i_k_ = {p + "W_I_K", Tensor<S>(), false};
    w_i_v_ = {p + "W_I_V", Tensor<S>(), false};
    sync_image_projections_from_text();
  }

  // image-token projections re-initialized from the (current) text ones
  void sync_image_projections_from_text() {
    w_i_k_.value = w_t_k_.value;
    w_i_v_.value = w_t_v_.value;
  }

  // c_i feature dim must equal d_txt so the sync above is well-typed
  int forward(Tape<S>& t, int z, int c_t, std::optional<int> c_i) {
    const auto& Z = t.val(z);
    if (Z.mat().cols() != d_z_)
      throw DimensionError("joint_attend: Z " + shape_str(Z.shape()) + " vs d_z " +
                           std::to_string(d_z_));
    if (t.val(c_t).mat().cols() != d_txt_)
      throw DimensionError("joint_attend: text features " + shape_str(t.val(c_t).shape()) +
                           " vs d_txt " + std::to_string(d_txt_));
    int q = ag::matmul(t, z, t.param(w_q_));
    int k = ag::matmul(t, c_t, t.param(w_t_k_));
    int v = ag::matmul(t, c_t, t.param(w_t_v_));
    if (c_i) {
      if (t.val(*c_i).mat().cols() != d_txt_)
        throw DimensionError("joint_attend: image tokens " + shape_str(t.val(*c_i).shape()) +
                             " vs d_txt " + std::to_string(d_txt_));
      k = ag::concat_rows(t, k, ag::matmul(t, *c_i, t.param(w_i_k_)));
      v = ag::concat_rows(t, v, ag::matmul(t, *c_i, t.param(w_i_v_)));
    }
    int att = multi_head_attention(t, q, k, v, heads_);
    return ag::matmul(t, att, t.param(w_o_));
  }

  // plain-value convenience, used by tests and the attention-math oracle
  Tensor<S> joint_attend(const Tensor<S>& Z, const Tensor<S>& c_t,
                         const std::optional<Tensor<S>>& c_i) {
    Tape<S> t(false);
    int z = t.leaf(Z);
    int ct = t.leaf(c_t);
    std::optional<int> ci;
    if (c_i) ci = t.leaf(*c_i);
    return t.val(forward(t, z, ct, ci));
  }

  // adapter phase: only W_I_K / W_I_V learn, re-synced from the frozen text
  // projections at entry
  void enter_adapter_phase() {
    sync_image_projections_from_text();
    w_q_.trainable = false;
    w_t_k_.trainable = false;
    w_t_v_.trainable = false;
    w_o_.trainable = false;
    w_i_k_.trainable = true;
    w_i_v_.trainable = true;
  }

  void enter_base_phase() {
    w_q_.trainable = true;
    w_t_k_.trainable = true;
    w_t_v_.trainable = true;
    w_o_.trainable = true;
    w_i_k_.trainable = false;
    w_i_v_.trainable = false;
  }

  int site_index() const { return site_index_; }
  Index d_z() const { return d_z_; }
  Index d_txt() const { return d_txt_; }
  int heads() const { return heads_; }
  Param<S>& w_q() { return w_q_; }
  Param<S>& w_t_k() { return w_t_k_; }
  Param<S>& w_t_v() { return w_t_v_; }
  Param<S>& w_i_k() { return w_i_k_; }
  Param<S>& w_i_v() { return w_i_v_; }
  Param<S>& w_o() { return w_o_; }

  template <class F>
  void visit_params(F&& f) {
    f(w_q_);
    f(w_t_k_);
    f(w_t_v_);
    f(w_i_k_);
    f(w_i_v_);
    f(w_o_);
  }

 private:
  int site_index_ = 0;
  Index d_z_ = 0, d_txt_ = 0, d_attn_ = 0;
  int heads_ = 4;
  Param<S> w_q_, w_t_k_, w_t_v_, w_i_k_, w_i_v_, w_o_;
};

}  // namespace stylediff
