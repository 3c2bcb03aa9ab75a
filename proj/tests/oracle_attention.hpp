#pragma once

// From-scratch scalar evaluation of the combined text-image cross-attention:
//   Q = Z W^Q, K = [c_t W_T^K ; c_i W_I^K], V = [c_t W_T^V ; c_i W_I^V],
//   out = softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated, times
//   the output projection. Plain loops over std::vector<double>, kept
//   deliberately independent of the Tensor/Eigen implementation it checks.

#include <cmath>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat matmul(const Mat& a, const Mat& b) {
  size_t n = a.size(), k = a[0].size(), m = b[0].size();
  Mat out(n, std::vector<double>(m, 0.0));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j)
      for (size_t l = 0; l < k; ++l) out[i][j] += a[i][l] * b[l][j];
  return out;
}

inline Mat vstack(const Mat& a, const Mat& b) {
  Mat out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// single softmax over the whole (possibly concatenated) key axis
inline Mat attention_weights(const Mat& Q, const Mat& K, double scale) {
  size_t n = Q.size(), m = K.size(), d = Q[0].size();
  Mat w(n, std::vector<double>(m, 0.0));
  for (size_t i = 0; i < n; ++i) {
    double mx = -1e300;
    for (size_t j = 0; j < m; ++j) {
      double acc = 0;
      for (size_t l = 0; l < d; ++l) acc += Q[i][l] * K[j][l];
      w[i][j] = acc * scale;
      mx = std::max(mx, w[i][j]);
    }
    double z = 0;
    for (size_t j = 0; j < m; ++j) {
      w[i][j] = std::exp(w[i][j] - mx);
      z += w[i][j];
    }
    for (size_t j = 0; j < m; ++j) w[i][j] /= z;
  }
  return w;
}

inline Mat slice_cols(const Mat& a, size_t c0, size_t n) {
  Mat out(a.size(), std::vector<double>(n));
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < n; ++j) out[i][j] = a[i][c0 + j];
  return out;
}

struct JointAttentionInputs {
  Mat Z, c_t, c_i;  // c_i may be empty
  Mat W_Q, W_T_K, W_T_V, W_I_K, W_I_V, W_O;
  int heads = 4;
};

inline Mat joint_attention(const JointAttentionInputs& in) {
  Mat Q = matmul(in.Z, in.W_Q);
  Mat K = matmul(in.c_t, in.W_T_K);
  Mat V = matmul(in.c_t, in.W_T_V);
  if (!in.c_i.empty()) {
    K = vstack(K, matmul(in.c_i, in.W_I_K));
    V = vstack(V, matmul(in.c_i, in.W_I_V));
  }
  size_t d = Q[0].size();
  size_t hd = d / static_cast<size_t>(in.heads);
  double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Mat att(Q.size(), std::vector<double>(d, 0.0));
  for (int h = 0; h < in.heads; ++h) {
    Mat Qh = slice_cols(Q, static_cast<size_t>(h) * hd, hd);
    Mat Kh = slice_cols(K, static_cast<size_t>(h) * hd, hd);
    Mat Vh = slice_cols(V, static_cast<size_t>(h) * hd, hd);
    Mat w = attention_weights(Qh, Kh, scale);
    for (size_t i = 0; i < Q.size(); ++i)
      for (size_t j = 0; j < hd; ++j) {
        double acc = 0;
        for (size_t l = 0; l < K.size(); ++l) acc += w[i][l] * Vh[l][j];
        att[i][static_cast<size_t>(h) * hd + j] = acc;
      }
  }
  return matmul(att, in.W_O);
}

}  // namespace oracle
