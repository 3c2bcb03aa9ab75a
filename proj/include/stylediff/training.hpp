#pragma once

#include <cstring>
#include <thread>

#include "stylediff/model.hpp"
#include "stylediff/optimizer.hpp"

namespace stylediff {

enum class TaskKind { kStre, kSere, kRecon };

inline const char* task_name(TaskKind k) {
  switch (k) {
    case TaskKind::kStre: return "STRE";
    case TaskKind::kSere: return "SERE";
    case TaskKind::kRecon: return "RECON";
  }
  return "?";
}

// uniform over the three task kinds (1:1:1)
inline TaskKind sample_task(Rng& rng) {
  switch (rng.below(3)) {
    case 0: return TaskKind::kStre;
    case 1: return TaskKind::kSere;
    default: return TaskKind::kRecon;
  }
}

template <class S>
struct PairedItem {
  Tensor<S> reference_image;
  Tensor<S> target_image;
  std::string target_subject_word;
  std::string target_style_word;
  TaskKind task = TaskKind::kRecon;
};

// which caption and which token sets a task wires up
struct ConditionPlan {
  std::vector<int> caption_ids;
  bool use_style = false;
  bool use_content = false;
};

// STRE: style tokens + content caption (style words excluded).
// SERE: content tokens + style caption (subject word excluded).
// RECON: both token sets, null caption.
template <class S>
ConditionPlan condition_plan(const PairedItem<S>& item, const Vocabulary& vocab) {
  ConditionPlan plan;
  switch (item.task) {
    case TaskKind::kStre:
      plan.caption_ids = tokenize(item.target_subject_word, vocab);
      plan.use_style = true;
      break;
    case TaskKind::kSere:
      plan.caption_ids = tokenize(item.target_style_word, vocab);
      plan.use_content = true;
      break;
    case TaskKind::kRecon:
      plan.caption_ids = {Vocabulary::kNullId};
      plan.use_style = true;
      plan.use_content = true;
      break;
  }
  return plan;
}

template <class S>
ConditioningBundle<S> build_condition(const PairedItem<S>& item, StyleModel<S>& model,
                                      TaskKind expected) {
  if (item.task != expected)
    throw TaskError(std::string("item carries task ") + task_name(item.task) + ", builder expects " +
                    task_name(expected));
  if (item.task == TaskKind::kRecon &&
      !item.reference_image.bitwise_equal(item.target_image))
    throw TaskError("RECON item whose reference differs from its target");
  ConditionPlan plan = condition_plan(item, model.vocab);
  ConditioningBundle<S> bundle;
  bundle.text = model.encoders.text.encode(plan.caption_ids);
  if (plan.use_style) bundle.style_tokens = model.extract_style(item.reference_image);
  if (plan.use_content) bundle.content_tokens = model.extract_content(item.reference_image);
  return bundle;
}

template <class S>
ConditioningBundle<S> build_condition_stre(const PairedItem<S>& item, StyleModel<S>& model) {
  return build_condition(item, model, TaskKind::kStre);
}

template <class S>
ConditioningBundle<S> build_condition_sere(const PairedItem<S>& item, StyleModel<S>& model) {
  return build_condition(item, model, TaskKind::kSere);
}

template <class S>
ConditioningBundle<S> build_condition_recon(const PairedItem<S>& item, StyleModel<S>& model) {
  return build_condition(item, model, TaskKind::kRecon);
}

template <class S>
struct TrainState {
  int64_t step = 0;
  AdamW<S> optimizer;
  Rng rng{1};

  TrainState() = default;
  TrainState(double lr, double weight_decay, uint64_t seed)
      : optimizer(lr, weight_decay), rng(seed) {}
};

struct TrainStepOptions {
  double p_drop = 0.1;     // unconditional dropout for classifier-free guidance
  int threads = 1;
  bool paranoid = false;   // verify frozen parameters stay bitwise constant
  // base pretraining: full caption text, no image tokens, whole U-Net learns
  bool base_pretrain = false;
  // ablation baseline: one Q-Former only, its tokens at every site
  bool baseline_single_qformer = false;
};

namespace detail {

// pixel [0,1] -> model space [-1,1]
template <class S>
Tensor<S> to_model_space(const Tensor<S>& img) {
  Tensor<S> out = Tensor<S>::uninit(img.shape());
  out.arr() = img.arr() * S(2) - S(1);
  return out;
}

template <class S>
Tensor<S> from_model_space(const Tensor<S>& z) {
  Tensor<S> out = Tensor<S>::uninit(z.shape());
  out.arr() = ((z.arr() + S(1)) * S(0.5)).cwiseMax(S(0)).cwiseMin(S(1));
  return out;
}

template <class S>
uint64_t bits_fingerprint(StyleModel<S>& model, bool frozen_only) {
  uint64_t h = 0xcbf29ce484222325ull;
  model.visit_params([&](Param<S>& p) {
    if (frozen_only && p.trainable) return;
    for (Index i = 0; i < p.value.numel(); ++i) {
      uint64_t bits = 0;
      if constexpr (sizeof(S) == 4) {
        uint32_t b;
        std::memcpy(&b, &p.value[i], 4);
        bits = b;
      } else {
        std::memcpy(&bits, &p.value[i], 8);
      }
      h ^= bits;
      h *= 0x100000001b3ull;
    }
  });
  return h;
}

// all randomness a step consumes, drawn up-front so worker threads stay
// deterministic
template <class S>
struct ItemDraw {
  Index t = 0;
  Tensor<S> eps;
  bool drop = false;
};

}  // namespace detail

// One optimizer update over a batch of paired items. Builds the per-item
// conditioning graph (Q-Former forward included, so gradients reach it),
// denoises the noised target, and applies AdamW to the trainable set only.
// Returns the batch loss.
template <class S>
S train_step(TrainState<S>& state, const std::vector<PairedItem<S>>& items, StyleModel<S>& model,
             const TrainStepOptions& opt = {}) {
  if (items.empty()) throw ParameterError("train_step on empty batch");
  const size_t B = items.size();
  const Index sz = model.dims.image_size;

  uint64_t frozen_before = opt.paranoid ? detail::bits_fingerprint(model, true) : 0;

  std::vector<detail::ItemDraw<S>> draws(B);
  for (size_t i = 0; i < B; ++i) {
    draws[i].t = static_cast<Index>(state.rng.below(static_cast<uint64_t>(model.schedule.T)));
    draws[i].eps = Tensor<S>::randn({sz, sz, Index(3)}, state.rng);
    draws[i].drop = state.rng.bernoulli(opt.p_drop);
  }

  std::vector<std::vector<std::pair<Param<S>*, Tensor<S>>>> item_grads(B);
  std::vector<double> item_loss(B, 0.0);

  auto run_item = [&](size_t i) {
    const PairedItem<S>& item = items[i];
    ConditionPlan plan = condition_plan(item, model.vocab);
    if (opt.base_pretrain) {
      plan.use_style = plan.use_content = false;
      plan.caption_ids =
          tokenize(item.target_subject_word + ", " + item.target_style_word, model.vocab);
    }
    if (opt.baseline_single_qformer) plan.use_content = false;
    if (item.task == TaskKind::kRecon && !item.reference_image.bitwise_equal(item.target_image))
      throw TaskError("RECON item whose reference differs from its target");
    Tape<S> t(true);
    CondIds cond;
    if (draws[i].drop) {
      cond.text = model.encoders.text.forward(t, {Vocabulary::kNullId});
    } else {
      cond.text = model.encoders.text.forward(t, plan.caption_ids);
      if (plan.use_style || plan.use_content) {
        int img_tokens = model.encoders.image.forward(t, item.reference_image);
        if (plan.use_style)
          cond.style = model.style_qf.forward_checked(t, img_tokens, model.style_instruction);
        if (plan.use_content)
          cond.content =
              model.content_qf.forward_checked(t, img_tokens, model.content_instruction);
      }
    }
    Tensor<S> z0 = detail::to_model_space(item.target_image);
    Tensor<S> z_t = add_noise(z0, draws[i].t, draws[i].eps, model.schedule);
    int z = t.leaf(z_t.reshaped({sz * sz, Index(3)}));
    int eps_pred = model.unet.forward(t, z, draws[i].t, cond);
    int eps_ref = t.leaf(draws[i].eps.reshaped({sz * sz, Index(3)}));
    int loss = ag::mse(t, eps_pred, eps_ref);
    item_loss[i] = double(t.val(loss)[0]);
    t.backward(loss);
    t.for_each_param_grad(
        [&](Param<S>& p, const Tensor<S>& g) { item_grads[i].emplace_back(&p, g); });
  };

  int n_threads = std::max(1, opt.threads);
  if (n_threads <= 1 || B == 1) {
    for (size_t i = 0; i < B; ++i) run_item(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int w = 0; w < n_threads; ++w)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < B; i = next.fetch_add(1)) run_item(i);
      });
    for (auto& th : pool) th.join();
  }

  // reduce in item order so the sum is independent of thread scheduling
  std::unordered_map<Param<S>*, Tensor<S>> grad_sum;
  for (size_t i = 0; i < B; ++i)
    for (auto& [p, g] : item_grads[i]) {
      auto it = grad_sum.find(p);
      if (it == grad_sum.end())
        grad_sum.emplace(p, g);
      else
        it->second.arr() += g.arr();
    }

  std::vector<std::pair<Param<S>*, const Tensor<S>*>> ordered;
  model.visit_params([&](Param<S>& p) {
    auto it = grad_sum.find(&p);
    if (it == grad_sum.end()) return;
    it->second.arr() /= static_cast<S>(B);
    ordered.emplace_back(&p, &it->second);
  });
  state.optimizer.apply(ordered);
  ++state.step;

  if (opt.paranoid) {
    uint64_t frozen_after = detail::bits_fingerprint(model, true);
    if (frozen_before != frozen_after)
      throw ConsistencyError("a frozen parameter changed during train_step");
  }

  double total = 0;
  for (double l : item_loss) total += l;
  return static_cast<S>(total / double(B));
}

}  // namespace stylediff
