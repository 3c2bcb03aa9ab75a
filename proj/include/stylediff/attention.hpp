#pragma once

#include "stylediff/tape.hpp"

namespace stylediff {

// y = x W (+ bias); bias < 0 means none
template <class S>
int linear(Tape<S>& t, int x, int W, int bias = -1) {
  int y = ag::matmul(t, x, W);
  if (bias >= 0) y = ag::add_bias(t, y, bias);
  return y;
}

// Multi-head scaled dot-product attention over already-projected q/k/v
// [n x d], [m x d], [m x d]; heads split the feature axis. Softmax runs over
// the full key axis, one distribution per query row.
template <class S>
int multi_head_attention(Tape<S>& t, int q, int k, int v, int n_heads) {
  Index d = t.val(q).mat().cols();
  if (d % n_heads != 0)
    throw DimensionError("attention dim " + std::to_string(d) + " not divisible by " +
                         std::to_string(n_heads) + " heads");
  Index hd = d / n_heads;
  S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
  std::vector<int> heads;
  heads.reserve(static_cast<size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    int qh = ag::slice_cols(t, q, h * hd, hd);
    int kh = ag::slice_cols(t, k, h * hd, hd);
    int vh = ag::slice_cols(t, v, h * hd, hd);
    int logits = ag::scale(t, ag::matmul_nt(t, qh, kh), inv_sqrt);
    int w = ag::softmax_rows(t, logits);
    heads.push_back(ag::matmul(t, w, vh));
  }
  return n_heads == 1 ? heads[0] : ag::concat_cols(t, heads);
}

}  // namespace stylediff
