#pragma once

#include <array>
#include <atomic>
#include <optional>
#include <vector>

#include "stylediff/joint_attention.hpp"

namespace stylediff {

inline constexpr int kNumAttentionSites = 16;
inline constexpr int kCoarseFirst = 4;
inline constexpr int kCoarseLast = 8;

enum class RepClass { kStyle, kContent };

// Constant site partition: coarse sites 4..8 take content tokens, the rest
// take style tokens.
struct RoutingTable {
  std::array<RepClass, kNumAttentionSites> assignment;

  RoutingTable() {
    for (int i = 0; i < kNumAttentionSites; ++i)
      assignment[static_cast<size_t>(i)] =
          (i >= kCoarseFirst && i <= kCoarseLast) ? RepClass::kContent : RepClass::kStyle;
  }

  RepClass at(int site) const {
    if (site < 0 || site >= kNumAttentionSites)
      throw ParameterError("site index " + std::to_string(site) + " outside [0,16)");
    return assignment[static_cast<size_t>(site)];
  }

  int count(RepClass c) const {
    int n = 0;
    for (auto a : assignment) n += (a == c);
    return n;
  }
};

inline RoutingTable routing_table() { return RoutingTable(); }

template <class S>
struct NoiseSchedule {
  Index T = 0;
  Tensor<S> betas;
  Tensor<S> alphas_cumprod;
};

// linear betas 1e-4 .. 0.02
template <class S>
NoiseSchedule<S> make_schedule(Index T) {
  if (T < 2) throw ParameterError("schedule needs T >= 2, got " + std::to_string(T));
  NoiseSchedule<S> s;
  s.T = T;
  s.betas = Tensor<S>::uninit({T});
  s.alphas_cumprod = Tensor<S>::uninit({T});
  double prod = 1.0;
  for (Index i = 0; i < T; ++i) {
    double beta = 1e-4 + (0.02 - 1e-4) * double(i) / double(T - 1);
    s.betas[i] = static_cast<S>(beta);
    prod *= (1.0 - beta);
    s.alphas_cumprod[i] = static_cast<S>(prod);
  }
  return s;
}

template <class S>
Tensor<S> add_noise(const Tensor<S>& z0, Index t, const Tensor<S>& eps,
                    const NoiseSchedule<S>& sched) {
  if (t < 0 || t >= sched.T)
    throw ParameterError("timestep " + std::to_string(t) + " outside [0," +
                         std::to_string(sched.T) + ")");
  if (!z0.same_shape(eps))
    throw DimensionError("add_noise shapes " + shape_str(z0.shape()) + " vs " +
                         shape_str(eps.shape()));
  S a = std::sqrt(sched.alphas_cumprod[t]);
  S b = std::sqrt(S(1) - sched.alphas_cumprod[t]);
  Tensor<S> out = Tensor<S>::uninit(z0.shape());
  out.arr() = a * z0.arr() + b * eps.arr();
  return out;
}

template <class S>
struct ConditioningBundle {
  TextFeatures<S> text;
  std::optional<QueryTokens<S>> style_tokens;
  std::optional<QueryTokens<S>> content_tokens;

  void validate() const {
    if (style_tokens && style_tokens->source_instruction != "style")
      throw InstructionError("style slot holds tokens from '" +
                             style_tokens->source_instruction + "'");
    if (content_tokens && content_tokens->source_instruction != "content")
      throw InstructionError("content slot holds tokens from '" +
                             content_tokens->source_instruction + "'");
    if (style_tokens && style_tokens->tokens.dim(0) != kNumQueryTokens)
      throw DimensionError("style tokens must be 16 rows");
    if (content_tokens && content_tokens->tokens.dim(0) != kNumQueryTokens)
      throw DimensionError("content tokens must be 16 rows");
  }
};

template <class S>
struct DiffusionBatch {
  std::vector<Tensor<S>> z0;
  std::vector<Index> t;
  std::vector<Tensor<S>> eps;
  std::vector<ConditioningBundle<S>> cond;

  size_t size() const { return z0.size(); }
};

// conditioning as tape nodes, for graph-level forwards
struct CondIds {
  int text = -1;
  std::optional<int> style;
  std::optional<int> content;
};

inline Index sinusoid_dim_default() { return 32; }

template <class S>
Tensor<S> timestep_embedding(Index t, Index dim) {
  Tensor<S> e = Tensor<S>::uninit({Index(1), dim});
  Index half = dim / 2;
  for (Index i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * double(i) / double(half - 1));
    e[i] = static_cast<S>(std::sin(double(t) * freq));
    e[half + i] = static_cast<S>(std::cos(double(t) * freq));
  }
  return e;
}

namespace detail {

// y = conv_k(x) + b over an (H*W x Cin) layout; weight is (k*k*Cin x Cout)
template <class S>
int conv2d(Tape<S>& t, int x, Index H, Index W, Index Cin, Param<S>& w, Param<S>& b, Index k,
           Index stride, Index pad) {
  int cols = ag::im2col(t, x, H, W, Cin, k, stride, pad);
  return linear(t, cols, t.param(w), t.param(b));
}

}  // namespace detail

// GroupNorm -> SiLU -> 3x3 conv -> +time -> GroupNorm -> SiLU -> 1x1 conv,
// residual around the whole thing (1x1 projection when channels change).
template <class S>
struct ResBlock {
  Index cin = 0, cout = 0;
  Index groups = 4;
  Param<S> gn1_g, gn1_b, conv1_w, conv1_b;
  Param<S> temb_w, temb_b;
  Param<S> gn2_g, gn2_b, conv2_w, conv2_b;
  Param<S> skip_w;  // only when cin != cout

  ResBlock() = default;
  ResBlock(const std::string& name, Index cin_, Index cout_, Index time_hidden, Rng& rng)
      : cin(cin_), cout(cout_) {
    auto mat = [&](const std::string& n, Index r, Index c, double sc) {
      return Param<S>{name + "." + n, Tensor<S>::randn({r, c}, rng, sc), true};
    };
    gn1_g = {name + ".gn1_g", Tensor<S>::full({cin}, S(1)), true};
    gn1_b = {name + ".gn1_b", Tensor<S>::zeros({cin}), true};
    conv1_w = mat("conv1_w", 9 * cin, cout, 1.0 / std::sqrt(9.0 * double(cin)));
    conv1_b = {name + ".conv1_b", Tensor<S>::zeros({cout}), true};
    temb_w = mat("temb_w", time_hidden, cout, 1.0 / std::sqrt(double(time_hidden)));
    temb_b = {name + ".temb_b", Tensor<S>::zeros({cout}), true};
    gn2_g = {name + ".gn2_g", Tensor<S>::full({cout}, S(1)), true};
    gn2_b = {name + ".gn2_b", Tensor<S>::zeros({cout}), true};
    // zero init keeps the residual path an identity at the start of training
    conv2_w = {name + ".conv2_w", Tensor<S>::zeros({cout, cout}), true};
    conv2_b = {name + ".conv2_b", Tensor<S>::zeros({cout}), true};
    if (cin != cout) skip_w = mat("skip_w", cin, cout, 1.0 / std::sqrt(double(cin)));
  }

  int forward(Tape<S>& t, int x, Index H, Index W, int temb) {
    int h = ag::group_norm(t, x, groups, t.param(gn1_g), t.param(gn1_b));
    h = ag::silu(t, h);
    h = detail::conv2d(t, h, H, W, cin, conv1_w, conv1_b, 3, 1, 1);
    int tproj = linear(t, temb, t.param(temb_w), t.param(temb_b));
    h = ag::add_bias(t, h, tproj);
    h = ag::group_norm(t, h, groups, t.param(gn2_g), t.param(gn2_b));
    h = ag::silu(t, h);
    h = linear(t, h, t.param(conv2_w), t.param(conv2_b));
    int skip = (cin == cout) ? x : ag::matmul(t, x, t.param(skip_w));
    return ag::add(t, h, skip);
  }

  template <class F>
  void visit_params(F&& f) {
    f(gn1_g), f(gn1_b), f(conv1_w), f(conv1_b);
    f(temb_w), f(temb_b);
    f(gn2_g), f(gn2_b), f(conv2_w), f(conv2_b);
    if (cin != cout) f(skip_w);
  }
};

// numbered cross-attention site: optional spatial self-attention (used on the
// low-resolution blocks, where global layout forms), then GroupNorm and the
// joint text-image attention, each with a residual add
template <class S>
struct AttnSite {
  Index channels = 0;
  Index groups = 4;
  bool has_self = false;
  Param<S> sa_gn_g, sa_gn_b, sa_wq, sa_wk, sa_wv, sa_wo;
  Param<S> gn_g, gn_b;
  JointCrossAttention<S> jca;
  int heads = 4;

  AttnSite() = default;
  AttnSite(int site_index, Index channels_, Index d_txt, Index d_attn, int heads_, bool self_attn,
           Rng& rng)
      : channels(channels_),
        has_self(self_attn),
        jca(site_index, channels_, d_txt, d_attn, heads_, rng),
        heads(heads_) {
    const std::string p = "unet.site" + std::to_string(site_index) + ".";
    gn_g = {p + "gn_g", Tensor<S>::full({channels}, S(1)), true};
    gn_b = {p + "gn_b", Tensor<S>::zeros({channels}), true};
    if (has_self) {
      double sc = 1.0 / std::sqrt(double(channels));
      sa_gn_g = {p + "self_gn_g", Tensor<S>::full({channels}, S(1)), true};
      sa_gn_b = {p + "self_gn_b", Tensor<S>::zeros({channels}), true};
      sa_wq = {p + "self_wq", Tensor<S>::randn({channels, d_attn}, rng, sc), true};
      sa_wk = {p + "self_wk", Tensor<S>::randn({channels, d_attn}, rng, sc), true};
      sa_wv = {p + "self_wv", Tensor<S>::randn({channels, d_attn}, rng, sc), true};
      sa_wo = {p + "self_wo",
               Tensor<S>::randn({d_attn, channels}, rng, 0.1 / std::sqrt(double(d_attn))), true};
    }
  }

  int forward(Tape<S>& t, int x, std::optional<int> c_i, int c_t) {
    if (has_self) {
      int h = ag::group_norm(t, x, groups, t.param(sa_gn_g), t.param(sa_gn_b));
      int sa = multi_head_attention(t, ag::matmul(t, h, t.param(sa_wq)),
                                    ag::matmul(t, h, t.param(sa_wk)),
                                    ag::matmul(t, h, t.param(sa_wv)), heads);
      x = ag::add(t, x, ag::matmul(t, sa, t.param(sa_wo)));
    }
    int h = ag::group_norm(t, x, groups, t.param(gn_g), t.param(gn_b));
    int o = jca.forward(t, h, c_t, c_i);
    return ag::add(t, x, o);
  }

  template <class F>
  void visit_params(F&& f) {
    if (has_self) {
      f(sa_gn_g), f(sa_gn_b);
      f(sa_wq), f(sa_wk), f(sa_wv), f(sa_wo);
    }
    f(gn_g), f(gn_b);
    jca.visit_params(f);
  }
};

enum class Injection { kRouted, kAllSites };

struct UNetDims {
  Index image_size = 32;
  Index c1 = 8, c2 = 16, c3 = 48;
  Index time_sin = 32, time_hidden = 64;
  Index d_txt = 64;
  Index d_attn = 32;
  int heads = 4;
};

// Pixel-space denoiser over 32x32x3 with three resolutions (32/16/8) and 16
// numbered cross-attention sites; sites 4..8 sit on the 8x8 blocks. Site
// layout input->output:
//   down: 0 @32 | 1 2 3 @16 | 4 5 @8 | mid: 6 @8 | up: 7 8 @8 | 9..12 @16 |
//   13..15 @32
template <class S>
class DenoiserUNet {
 public:
  DenoiserUNet() = default;

  DenoiserUNet(const UNetDims& dims, Rng& rng) : dims_(dims) {
    auto mat = [&](const std::string& n, Index r, Index c, double sc) {
      return Param<S>{n, Tensor<S>::randn({r, c}, rng, sc), true};
    };
    const Index c1 = dims.c1, c2 = dims.c2, c3 = dims.c3;
    stem_w_ = mat("unet.stem_w", 9 * 3, c1, 1.0 / std::sqrt(27.0));
    stem_b_ = {"unet.stem_b", Tensor<S>::zeros({c1}), true};
    mlp_w1_ = mat("unet.time_mlp_w1", dims.time_sin, dims.time_hidden,
                  1.0 / std::sqrt(double(dims.time_sin)));
    mlp_b1_ = {"unet.time_mlp_b1", Tensor<S>::zeros({dims.time_hidden}), true};
    mlp_w2_ = mat("unet.time_mlp_w2", dims.time_hidden, dims.time_hidden,
                  1.0 / std::sqrt(double(dims.time_hidden)));
    mlp_b2_ = {"unet.time_mlp_b2", Tensor<S>::zeros({dims.time_hidden}), true};

    int site = 0, rb = 0;
    auto add_rb = [&](Index cin, Index cout) {
      res_.emplace_back("unet.res" + std::to_string(rb++), cin, cout, dims.time_hidden, rng);
    };
    auto add_site = [&](Index ch, bool self_attn = false) {
      sites_.emplace_back(site++, ch, dims.d_txt, dims.d_attn, dims.heads, self_attn, rng);
      // damp the site output at the start of training but keep the gradient
      // path into the conditioning projections alive
      sites_.back().jca.w_o().value.arr() *= S(0.1);
    };

    add_rb(c1, c1), add_site(c1);                           // 0 @32
    down1_w_ = mat("unet.down1_w", 9 * c1, c2, 1.0 / std::sqrt(9.0 * double(c1)));
    down1_b_ = {"unet.down1_b", Tensor<S>::zeros({c2}), true};
    for (int i = 0; i < 3; ++i) add_rb(c2, c2), add_site(c2);  // 1,2,3 @16
    down2_w_ = mat("unet.down2_w", 9 * c2, c3, 1.0 / std::sqrt(9.0 * double(c2)));
    down2_b_ = {"unet.down2_b", Tensor<S>::zeros({c3}), true};
    for (int i = 0; i < 2; ++i) add_rb(c3, c3), add_site(c3, true);  // 4,5 @8
    add_rb(c3, c3), add_site(c3, true);                              // mid: 6 @8
    add_rb(c3, c3);                                                  // mid tail
    add_rb(2 * c3, c3), add_site(c3, true);                          // 7 @8 (skip concat)
    add_rb(c3, c3), add_site(c3, true);                              // 8 @8
    up1_w_ = mat("unet.up1_w", 9 * c3, c2, 1.0 / std::sqrt(9.0 * double(c3)));
    up1_b_ = {"unet.up1_b", Tensor<S>::zeros({c2}), true};
    add_rb(2 * c2, c2), add_site(c2);                          // 9 @16 (skip concat)
    for (int i = 0; i < 3; ++i) add_rb(c2, c2), add_site(c2);  // 10,11,12 @16
    up2_w_ = mat("unet.up2_w", 9 * c2, c1, 1.0 / std::sqrt(9.0 * double(c2)));
    up2_b_ = {"unet.up2_b", Tensor<S>::zeros({c1}), true};
    add_rb(2 * c1, c1), add_site(c1);                          // 13 @32 (skip concat)
    for (int i = 0; i < 2; ++i) add_rb(c1, c1), add_site(c1);  // 14,15 @32
    out_gn_g_ = {"unet.out_gn_g", Tensor<S>::full({c1}, S(1)), true};
    out_gn_b_ = {"unet.out_gn_b", Tensor<S>::zeros({c1}), true};
    out_w_ = {"unet.out_w", Tensor<S>::zeros({9 * c1, Index(3)}), true};
    out_b_ = {"unet.out_b", Tensor<S>::zeros({Index(3)}), true};
  }

  const UNetDims& dims() const { return dims_; }
  Injection injection() const { return injection_; }
  void set_injection(Injection m) { injection_ = m; }
  RoutingTable routing() const { return routing_; }
  std::vector<AttnSite<S>>& sites() { return sites_; }
  std::vector<ResBlock<S>>& res_blocks() { return res_; }

  int64_t eval_count() const { return eval_count_->load(); }
  void reset_eval_count() { eval_count_->store(0); }

  std::optional<int> pick_tokens(int site, const CondIds& cond) const {
    if (injection_ == Injection::kAllSites) return cond.style ? cond.style : cond.content;
    return routing_.at(site) == RepClass::kStyle ? cond.style : cond.content;
  }

  // graph-level denoiser pass; z is an (HW x 3) node
  int forward(Tape<S>& t, int z, Index tstep, const CondIds& cond) {
    eval_count_->fetch_add(1, std::memory_order_relaxed);
    const Index sz = dims_.image_size;
    if (t.val(z).numel() != sz * sz * 3)
      throw DimensionError("denoiser input " + shape_str(t.val(z).shape()) + ", expected " +
                           std::to_string(sz) + "x" + std::to_string(sz) + "x3");
    int temb = t.leaf(timestep_embedding<S>(tstep, dims_.time_sin));
    temb = linear(t, temb, t.param(mlp_w1_), t.param(mlp_b1_));
    temb = ag::silu(t, temb);
    temb = linear(t, temb, t.param(mlp_w2_), t.param(mlp_b2_));

    const Index c1 = dims_.c1, c2 = dims_.c2, c3 = dims_.c3;
    int rb = 0, st = 0;
    auto res = [&](int x, Index H) { return res_[static_cast<size_t>(rb++)].forward(t, x, H, H, temb); };
    auto site = [&](int x) {
      int i = st++;
      return sites_[static_cast<size_t>(i)].forward(t, x, pick_tokens(i, cond), cond.text);
    };

    int x = detail::conv2d(t, z, sz, sz, 3, stem_w_, stem_b_, 3, 1, 1);
    x = res(x, sz);
    x = site(x);
    int skip32 = x;
    x = detail::conv2d(t, x, sz, sz, c1, down1_w_, down1_b_, 3, 2, 1);
    for (int i = 0; i < 3; ++i) x = site(res(x, sz / 2));
    int skip16 = x;
    x = detail::conv2d(t, x, sz / 2, sz / 2, c2, down2_w_, down2_b_, 3, 2, 1);
    for (int i = 0; i < 2; ++i) x = site(res(x, sz / 4));
    int skip8 = x;
    x = site(res(x, sz / 4));
    x = res(x, sz / 4);
    x = ag::concat_cols(t, {x, skip8});
    x = site(res(x, sz / 4));
    x = site(res(x, sz / 4));
    x = ag::upsample2x(t, x, sz / 4, sz / 4, c3);
    x = detail::conv2d(t, x, sz / 2, sz / 2, c3, up1_w_, up1_b_, 3, 1, 1);
    x = ag::concat_cols(t, {x, skip16});
    for (int i = 0; i < 4; ++i) x = site(res(x, sz / 2));
    x = ag::upsample2x(t, x, sz / 2, sz / 2, c2);
    x = detail::conv2d(t, x, sz, sz, c2, up2_w_, up2_b_, 3, 1, 1);
    x = ag::concat_cols(t, {x, skip32});
    for (int i = 0; i < 3; ++i) x = site(res(x, sz));
    x = ag::group_norm(t, x, Index(4), t.param(out_gn_g_), t.param(out_gn_b_));
    x = ag::silu(t, x);
    x = detail::conv2d(t, x, sz, sz, c1, out_w_, out_b_, 3, 1, 1);
    return x;
  }

  // value-level pass over a conditioning bundle; eps_pred has z_t's shape
  Tensor<S> forward_denoise(const Tensor<S>& z_t, Index tstep,
                            const ConditioningBundle<S>& cond) {
    cond.validate();
    if (tstep < 0) throw ParameterError("negative timestep");
    Tape<S> t(false);
    CondIds ids = load_cond(t, cond);
    int z = t.leaf(z_t.reshaped({dims_.image_size * dims_.image_size, Index(3)}));
    int out = forward(t, z, tstep, ids);
    return t.val(out).reshaped(z_t.shape());
  }

  CondIds load_cond(Tape<S>& t, const ConditioningBundle<S>& cond) {
    cond.validate();
    CondIds ids;
    ids.text = t.leaf(cond.text.tokens);
    if (cond.style_tokens) ids.style = t.leaf(cond.style_tokens->tokens);
    if (cond.content_tokens) ids.content = t.leaf(cond.content_tokens->tokens);
    return ids;
  }

  template <class F>
  void visit_params(F&& f) {
    f(stem_w_), f(stem_b_);
    f(mlp_w1_), f(mlp_b1_), f(mlp_w2_), f(mlp_b2_);
    f(down1_w_), f(down1_b_), f(down2_w_), f(down2_b_);
    f(up1_w_), f(up1_b_), f(up2_w_), f(up2_b_);
    for (auto& r : res_) r.visit_params(f);
    for (auto& s : sites_) s.visit_params(f);
    f(out_gn_g_), f(out_gn_b_), f(out_w_), f(out_b_);
  }

  // base pretraining trains everything except the image-token projections
  void enter_base_phase() {
    visit_params([](Param<S>& p) { p.trainable = true; });
    for (auto& s : sites_) s.jca.enter_base_phase();
  }

  // adapter training: only W_I_K / W_I_V sites learn inside the U-Net
  void enter_adapter_phase() {
    visit_params([](Param<S>& p) { p.trainable = false; });
    for (auto& s : sites_) s.jca.enter_adapter_phase();
  }

 private:
  UNetDims dims_;
  Injection injection_ = Injection::kRouted;
  RoutingTable routing_;
  Param<S> stem_w_, stem_b_;
  Param<S> mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
  Param<S> down1_w_, down1_b_, down2_w_, down2_b_;
  Param<S> up1_w_, up1_b_, up2_w_, up2_b_;
  Param<S> out_gn_g_, out_gn_b_, out_w_, out_b_;
  std::vector<ResBlock<S>> res_;
  std::vector<AttnSite<S>> sites_;
  std::shared_ptr<std::atomic<int64_t>> eval_count_ = std::make_shared<std::atomic<int64_t>>(0);
};

// Eq.-style diffusion objective: per item the elementwise mean of
// ||eps - eps_pred||^2, averaged over the batch.
template <class S, class Fwd>
S training_loss(const DiffusionBatch<S>& batch, const NoiseSchedule<S>& sched, Fwd&& fwd) {
  if (batch.size() == 0) throw ParameterError("training_loss on empty batch");
  double acc = 0;
  for (size_t i = 0; i < batch.size(); ++i) {
    Tensor<S> z_t = add_noise(batch.z0[i], batch.t[i], batch.eps[i], sched);
    Tensor<S> pred = fwd(z_t, batch.t[i], batch.cond[i]);
    if (!pred.same_shape(batch.eps[i]))
      throw DimensionError("eps_pred " + shape_str(pred.shape()) + " vs eps " +
                           shape_str(batch.eps[i].shape()));
    acc += double((batch.eps[i].arr() - pred.arr()).square().mean());
  }
  return static_cast<S>(acc / double(batch.size()));
}

}  // namespace stylediff
