#pragma once

#include <optional>

#include "stylediff/training.hpp"

namespace stylediff {

template <class S>
struct StyleMix {
  Tensor<S> reference_b;
  double alpha = 0.5;
};

template <class S>
struct SampleRequest {
  std::string prompt;
  std::optional<Tensor<S>> style_reference;
  std::optional<Tensor<S>> content_reference;
  std::optional<StyleMix<S>> mix;
  int steps = 50;
  double guidance_scale = 8.0;
  uint64_t seed = 0;
};

struct SampleStats {
  int cond_evals = 0;
  int uncond_evals = 0;
};

// evenly strided decreasing timestep grid ending at 0
inline std::vector<Index> ddim_timesteps(Index T, int steps) {
  if (steps < 1) throw ParameterError("ddim steps must be >= 1");
  if (steps > T)
    throw ParameterError("ddim steps " + std::to_string(steps) + " exceeds schedule T " +
                         std::to_string(T));
  Index stride = std::max<Index>(1, (T + steps / 2) / steps);
  std::vector<Index> ts(static_cast<size_t>(steps));
  for (int k = 0; k < steps; ++k) ts[static_cast<size_t>(k)] = stride * (steps - 1 - k);
  return ts;
}

template <class S>
Tensor<S> cfg_combine(const Tensor<S>& eps_uncond, const Tensor<S>& eps_cond, double scale) {
  if (!eps_uncond.same_shape(eps_cond))
    throw DimensionError("cfg_combine " + shape_str(eps_uncond.shape()) + " vs " +
                         shape_str(eps_cond.shape()));
  Tensor<S> out = Tensor<S>::uninit(eps_uncond.shape());
  out.arr() = eps_uncond.arr() + static_cast<S>(scale) * (eps_cond.arr() - eps_uncond.arr());
  return out;
}

namespace detail {

// deterministic DDIM (eta = 0) in [-1,1] model space with per-step x0 clamping
template <class S>
Tensor<S> ddim_sample_loop(StyleModel<S>& model, const ConditioningBundle<S>& cond,
                           const ConditioningBundle<S>& uncond, int steps, double scale,
                           uint64_t seed, SampleStats* stats) {
  const Index sz = model.dims.image_size;
  Rng rng(seed ^ 0x5d5a1ce5a11ull);
  Tensor<S> x = Tensor<S>::randn({sz, sz, Index(3)}, rng);
  const auto& ac = model.schedule.alphas_cumprod;
  std::vector<Index> ts = ddim_timesteps(model.schedule.T, steps);
  for (size_t i = 0; i < ts.size(); ++i) {
    Index t = ts[i];
    Tensor<S> eps_u = model.unet.forward_denoise(x, t, uncond);
    Tensor<S> eps_c = model.unet.forward_denoise(x, t, cond);
    if (stats) {
      stats->uncond_evals++;
      stats->cond_evals++;
    }
    Tensor<S> eps = cfg_combine(eps_u, eps_c, scale);
    S a_t = ac[t];
    S a_prev = (i + 1 < ts.size()) ? ac[ts[i + 1]] : S(1);
    Tensor<S> x0 = Tensor<S>::uninit(x.shape());
    x0.arr() = (x.arr() - std::sqrt(S(1) - a_t) * eps.arr()) / std::sqrt(a_t);
    x0.arr() = x0.arr().cwiseMax(S(-1)).cwiseMin(S(1));
    x.arr() = std::sqrt(a_prev) * x0.arr() + std::sqrt(S(1) - a_prev) * eps.arr();
  }
  return from_model_space(x);
}

}  // namespace detail

// Inference-time conditioning: style reference feeds the fine sites through
// the style Q-Former, content reference feeds the coarse sites through the
// content Q-Former, the prompt text reaches every site. The unconditional
// branch drops both text and image tokens.
template <class S>
Tensor<S> sample(const SampleRequest<S>& req, StyleModel<S>& model, SampleStats* stats = nullptr) {
  if (req.steps < 1 || req.steps > model.schedule.T)
    throw ParameterError("sample steps " + std::to_string(req.steps) + " outside [1,T]");
  if (req.mix && req.content_reference)
    throw ParameterError("unsupported combination: style mixing plus content reference");
  if (req.mix && !req.style_reference)
    throw ParameterError("style mixing needs a primary style reference");
  if (req.mix && !(req.mix->alpha >= 0.0 && req.mix->alpha <= 1.0))
    throw ParameterError("mix alpha " + std::to_string(req.mix->alpha) + " outside [0,1]");

  ConditioningBundle<S> cond;
  cond.text = model.encode_prompt(req.prompt);
  if (req.style_reference) {
    QueryTokens<S> qa = model.extract_style(*req.style_reference);
    if (req.mix) {
      double a = req.mix->alpha;
      if (a == 0.0) {
        cond.style_tokens = qa;
      } else {
        QueryTokens<S> qb = model.extract_style(req.mix->reference_b);
        if (a == 1.0) {
          cond.style_tokens = qb;
        } else {
          QueryTokens<S> blend = qa;
          blend.tokens.arr() =
              static_cast<S>(1.0 - a) * qa.tokens.arr() + static_cast<S>(a) * qb.tokens.arr();
          cond.style_tokens = blend;
        }
      }
    } else {
      cond.style_tokens = qa;
    }
  }
  if (req.content_reference) cond.content_tokens = model.extract_content(*req.content_reference);

  ConditioningBundle<S> uncond;
  uncond.text = model.null_text();

  return detail::ddim_sample_loop(model, cond, uncond, req.steps, req.guidance_scale, req.seed,
                                  stats);
}

template <class S>
Tensor<S> style_mix(const SampleRequest<S>& req, StyleModel<S>& model,
                    SampleStats* stats = nullptr) {
  if (!req.mix) throw ParameterError("style_mix without a mix request");
  return sample(req, model, stats);
}

// stylization of the reference's semantics: content tokens at the coarse
// sites, the style described purely by text
template <class S>
Tensor<S> stylize_semantics(const Tensor<S>& content_reference, const std::string& style_prompt,
                            StyleModel<S>& model, int steps, double guidance_scale, uint64_t seed,
                            SampleStats* stats = nullptr) {
  SampleRequest<S> req;
  req.prompt = style_prompt;
  req.content_reference = content_reference;
  req.steps = steps;
  req.guidance_scale = guidance_scale;
  req.seed = seed;
  return sample(req, model, stats);
}

}  // namespace stylediff
