#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive (nested loops, no shared code with the library fast
// paths) so a bug in the library cannot hide in its own oracle.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

namespace oracles {

// Direct cross-correlation, six nested loops.
inline std::vector<double> naive_conv2d(const std::vector<double>& x, int N,
                                        int C_in, int H, int W,
                                        const std::vector<double>& w, int C_out,
                                        int k, int stride, int pad, int& H_out,
                                        int& W_out) {
  H_out = (H + 2 * pad - k) / stride + 1;
  W_out = (W + 2 * pad - k) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(N) * C_out * H_out * W_out, 0.0);
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < C_out; ++co)
      for (int oy = 0; oy < H_out; ++oy)
        for (int ox = 0; ox < W_out; ++ox) {
          double acc = 0.0;
          for (int ci = 0; ci < C_in; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                int iy = oy * stride - pad + ky;
                int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((static_cast<std::size_t>(n) * C_in + ci) * H + iy) * W + ix] *
                       w[((static_cast<std::size_t>(co) * C_in + ci) * k + ky) * k + kx];
              }
          y[((static_cast<std::size_t>(n) * C_out + co) * H_out + oy) * W_out + ox] = acc;
        }
  return y;
}

// y = x * W^T + b, triple loop.
inline std::vector<double> naive_affine(const std::vector<double>& x, int N,
                                        int D_in, const std::vector<double>& w,
                                        int D_out, const std::vector<double>& b) {
  std::vector<double> y(static_cast<std::size_t>(N) * D_out, 0.0);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < D_out; ++o) {
      double acc = b[static_cast<std::size_t>(o)];
      for (int i = 0; i < D_in; ++i)
        acc += x[static_cast<std::size_t>(n) * D_in + i] *
               w[static_cast<std::size_t>(o) * D_in + i];
      y[static_cast<std::size_t>(n) * D_out + o] = acc;
    }
  return y;
}

// Pairwise (cascade) summation: a different accumulation order from the
// library's sequential reductions.
inline double pairwise_sum(const double* v, std::size_t n) {
  if (n == 1) return v[0];
  std::size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

// Rank of the true label when classes are sorted by descending score with
// ties broken toward the lower class index. rank 0 == best.
inline int argsort_rank(const std::vector<double>& scores, int label) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    return a < b;
  });
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i] == label) return static_cast<int>(i);
  return -1;
}

// ---- closed-form parameter accounting --------------------------------------
// Hand summation over the layer table, kept separate from the model builder.

inline std::int64_t conv_p(std::int64_t cin, std::int64_t cout, std::int64_t k) {
  return cin * cout * k * k;
}
inline std::int64_t bn_p(std::int64_t c) { return 2 * c; }
inline std::int64_t se_p(std::int64_t c, std::int64_t r) {
  std::int64_t h = std::max<std::int64_t>(1, c / r);
  return h * c + h + c * h + c;  // reduce W+b, expand W+b
}
inline std::int64_t block_p(std::int64_t cin, std::int64_t cout) {
  return conv_p(cin, cout, 3) + bn_p(cout) + conv_p(cout, cout, 3) + bn_p(cout);
}
inline std::int64_t bridge_p(std::int64_t cin, std::int64_t cout) {
  return conv_p(cin, cout, 1) + bn_p(cout);
}

inline std::int64_t baseline_params(int n, int classes) {
  std::int64_t total = conv_p(3, 16, 3) + bn_p(16);
  total += n * block_p(16, 16);
  total += block_p(16, 32) + bridge_p(16, 32) + (n - 1) * block_p(32, 32);
  total += block_p(32, 64) + bridge_p(32, 64) + (n - 1) * block_p(64, 64);
  total += 64 * static_cast<std::int64_t>(classes) + classes;
  return total;
}

inline std::int64_t nobridge_params(int n, int classes) {
  return baseline_params(n, classes) - bridge_p(16, 32) - bridge_p(32, 64);
}

inline std::int64_t se_resnet_params(int n, int classes, int r) {
  return baseline_params(n, classes) +
         n * (se_p(16, r) + se_p(32, r) + se_p(64, r));
}

inline std::int64_t res_se_net_params(int n, int classes, int r) {
  return baseline_params(n, classes) + se_p(32, r) + se_p(64, r);
}

inline std::int64_t res_se_net_predown_params(int n, int classes, int r) {
  return baseline_params(n, classes) + se_p(16, r) + se_p(32, r);
}

// SE on every identity skip: all blocks except the two transition ones.
inline std::int64_t se_all_skips_params(int n, int classes, int r) {
  return res_se_net_params(n, classes, r) + n * se_p(16, r) +
         (n - 1) * se_p(32, r) + (n - 1) * se_p(64, r);
}

}  // namespace oracles
