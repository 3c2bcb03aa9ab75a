#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "stylediff/tape.hpp"

namespace stylediff {

// AdamW with decoupled weight decay. Moments are keyed by parameter name so
// optimizer state survives checkpoint round trips.
template <class S>
class AdamW {
 public:
  struct Moments {
    Tensor<S> m;
    Tensor<S> v;
  };

  AdamW() = default;
  AdamW(double lr, double weight_decay) : lr_(lr), weight_decay_(weight_decay) {}

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  int64_t step_count() const { return step_count_; }

  // one update over (param, averaged gradient) pairs
  void apply(const std::vector<std::pair<Param<S>*, const Tensor<S>*>>& grads) {
    ++step_count_;
    const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
    const S bc1 = static_cast<S>(1.0 - std::pow(beta1_, double(step_count_)));
    const S bc2 = static_cast<S>(1.0 - std::pow(beta2_, double(step_count_)));
    for (auto& [p, g] : grads) {
      if (!p->trainable)
        throw ConsistencyError("optimizer fed gradient for frozen parameter " + p->name);
      Moments& mo = moments_[p->name];
      if (mo.m.numel() == 0) {
        mo.m = Tensor<S>::zeros(p->value.shape());
        mo.v = Tensor<S>::zeros(p->value.shape());
      }
      mo.m.arr() = b1 * mo.m.arr() + (S(1) - b1) * g->arr();
      mo.v.arr() = b2 * mo.v.arr() + (S(1) - b2) * g->arr().square();
      auto mhat = mo.m.arr() / bc1;
      auto vhat = mo.v.arr() / bc2;
      p->value.arr() -= static_cast<S>(lr_) * (mhat / (vhat.sqrt() + static_cast<S>(eps_)) +
                                               static_cast<S>(weight_decay_) * p->value.arr());
    }
  }

  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void set_step_count(int64_t n) { step_count_ = n; }

 private:
  double lr_ = 1e-4;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  double weight_decay_ = 0.01;
  int64_t step_count_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace stylediff
