#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ressenet/common.hpp"
#include "ressenet/tape.hpp"
#include "ressenet/tensor.hpp"

// Differentiable primitives. Every op validates shapes before touching data,
// allocates a fresh output tensor, and (when a tape is supplied and an input
// wants gradients) records a closure that accumulates into the operands'
// grad buffers. Reductions run in a fixed sequential order; the conv and
// fully-connected inner products go through Eigen, whose single-threaded
// kernels likewise evaluate in a fixed order, so identical inputs give
// bitwise-identical outputs across runs.

namespace ressenet::ops {

namespace detail {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatR<T>>;
template <typename T>
using MapC = Eigen::Map<const MatR<T>>;

template <typename T>
bool wants_grad(Tape<T>* tape, const TensorPtr<T>& t) {
  return tape != nullptr && t->requires_grad;
}

template <typename T>
void mark_output(Tape<T>* tape, const TensorPtr<T>& out, bool any_input_grad) {
  out->requires_grad = tape != nullptr && any_input_grad;
}

// Gather one image into column-major patches: cols[(ci*k+ky)*k+kx][oy*Wo+ox].
template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad,
            int Ho, int Wo, T* cols) {
  const int M = Ho * Wo;
  for (int ci = 0; ci < C; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * M;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            std::fill(row + oy * Wo, row + (oy + 1) * Wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(ci) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * Wo + ox] = (ix < 0 || ix >= W) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

// Scatter-add the transpose of im2col: overlapping receptive fields sum.
template <typename T>
void col2im_add(const T* cols, int C, int H, int W, int k, int stride, int pad,
                int Ho, int Wo, T* x) {
  const int M = Ho * Wo;
  for (int ci = 0; ci < C; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * M;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          T* dst = x + (static_cast<std::size_t>(ci) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
TensorPtr<T> conv2d(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    int stride, int padding) {
  if (x->ndim() != 4 || w->ndim() != 4) {
    throw ShapeError("conv2d expects 4-d input and weight, got " +
                     shape_str(x->shape) + " and " + shape_str(w->shape));
  }
  const int N = static_cast<int>(x->dim(0));
  const int C_in = static_cast<int>(x->dim(1));
  const int H = static_cast<int>(x->dim(2));
  const int W = static_cast<int>(x->dim(3));
  const int C_out = static_cast<int>(w->dim(0));
  const int k = static_cast<int>(w->dim(2));
  if (w->dim(1) != C_in) {
    throw ShapeError("conv2d channel mismatch: input has " +
                     std::to_string(C_in) + ", weight expects " +
                     std::to_string(w->dim(1)));
  }
  if (w->dim(3) != k || (k != 1 && k != 3)) {
    throw ShapeError("conv2d supports square 1x1 or 3x3 kernels, got " +
                     shape_str(w->shape));
  }
  if (stride != 1 && stride != 2) {
    throw ShapeError("conv2d stride must be 1 or 2, got " + std::to_string(stride));
  }
  if (padding < 0) {
    throw ShapeError("conv2d padding must be nonnegative");
  }
  if (!all_finite(x->data) || !all_finite(w->data)) {
    throw NumericError("conv2d received a non-finite input");
  }

  const int Ho = (H + 2 * padding - k) / stride + 1;
  const int Wo = (W + 2 * padding - k) / stride + 1;
  if (Ho <= 0 || Wo <= 0) {
    throw ShapeError("conv2d output would be empty for input " +
                     shape_str(x->shape));
  }
  const int K = C_in * k * k;
  const int M = Ho * Wo;

  auto out = zeros<T>({N, C_out, Ho, Wo});
  {
    std::vector<T> cols(static_cast<std::size_t>(K) * M);
    detail::MapC<T> Wm(w->data.data(), C_out, K);
    for (int n = 0; n < N; ++n) {
      detail::im2col(x->data.data() + static_cast<std::size_t>(n) * C_in * H * W,
                     C_in, H, W, k, stride, padding, Ho, Wo, cols.data());
      detail::MapC<T> Cm(cols.data(), K, M);
      detail::MapM<T> Om(out->data.data() + static_cast<std::size_t>(n) * C_out * M,
                         C_out, M);
      Om.noalias() = Wm * Cm;
    }
  }

  const bool gx = detail::wants_grad(tape, x);
  const bool gw = detail::wants_grad(tape, w);
  detail::mark_output(tape, out, gx || gw);
  if (gx || gw) {
    tape->record("conv2d", [=] {
      if (out->grad.empty()) return;
      if (gx) x->ensure_grad();
      if (gw) w->ensure_grad();
      std::vector<T> cols(static_cast<std::size_t>(K) * M);
      std::vector<T> dcols(gx ? static_cast<std::size_t>(K) * M : 0);
      detail::MapC<T> Wm(w->data.data(), C_out, K);
      for (int n = 0; n < N; ++n) {
        detail::MapC<T> Gm(out->grad.data() + static_cast<std::size_t>(n) * C_out * M,
                           C_out, M);
        if (gx) {
          detail::MapM<T> Dc(dcols.data(), K, M);
          Dc.noalias() = Wm.transpose() * Gm;
          detail::col2im_add(dcols.data(), C_in, H, W, k, stride, padding, Ho, Wo,
                             x->grad.data() + static_cast<std::size_t>(n) * C_in * H * W);
        }
        if (gw) {
          detail::im2col(x->data.data() + static_cast<std::size_t>(n) * C_in * H * W,
                         C_in, H, W, k, stride, padding, Ho, Wo, cols.data());
          detail::MapC<T> Cm(cols.data(), K, M);
          detail::MapM<T> Wg(w->grad.data(), C_out, K);
          Wg.noalias() += Gm * Cm.transpose();
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> relu(Tape<T>* tape, const TensorPtr<T>& x) {
  auto out = zeros<T>(x->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i)
    out->data[i] = x->data[i] > T(0) ? x->data[i] : T(0);

  const bool gx = detail::wants_grad(tape, x);
  detail::mark_output(tape, out, gx);
  if (gx) {
    tape->record("relu", [x, out] {
      if (out->grad.empty()) return;
      x->ensure_grad();
      for (std::size_t i = 0; i < x->data.size(); ++i)
        if (x->data[i] > T(0)) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> sigmoid(Tape<T>* tape, const TensorPtr<T>& x) {
  // Outputs stay strictly inside (0,1): deep saturation is pinned to the
  // nearest representable neighbour of the bound instead of rounding onto it,
  // so a gate can never pass a channel through exactly or kill it exactly.
  const T lo = std::nextafter(T(0), T(1));
  const T hi = std::nextafter(T(1), T(0));
  auto out = zeros<T>(x->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    const T v = x->data[i];
    T s;
    if (v >= T(0)) {
      const T e = std::exp(-v);
      s = T(1) / (T(1) + e);
    } else {
      const T e = std::exp(v);
      s = e / (T(1) + e);
    }
    out->data[i] = std::clamp(s, lo, hi);
  }

  const bool gx = detail::wants_grad(tape, x);
  detail::mark_output(tape, out, gx);
  if (gx) {
    tape->record("sigmoid", [x, out] {
      if (out->grad.empty()) return;
      x->ensure_grad();
      for (std::size_t i = 0; i < out->data.size(); ++i) {
        const T s = out->data[i];
        x->grad[i] += out->grad[i] * s * (T(1) - s);
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> global_avg_pool(Tape<T>* tape, const TensorPtr<T>& x) {
  if (x->ndim() != 4) {
    throw ShapeError("global_avg_pool expects a 4-d tensor, got " +
                     shape_str(x->shape));
  }
  const std::int64_t N = x->dim(0), C = x->dim(1);
  const std::int64_t plane = x->dim(2) * x->dim(3);
  auto out = zeros<T>({N, C, 1, 1});
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    T acc = T(0);
    const T* p = x->data.data() + nc * plane;
    for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
    out->data[static_cast<std::size_t>(nc)] = acc / static_cast<T>(plane);
  }

  const bool gx = detail::wants_grad(tape, x);
  detail::mark_output(tape, out, gx);
  if (gx) {
    tape->record("global_avg_pool", [x, out, N, C, plane] {
      if (out->grad.empty()) return;
      x->ensure_grad();
      for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const T g = out->grad[static_cast<std::size_t>(nc)] / static_cast<T>(plane);
        T* p = x->grad.data() + nc * plane;
        for (std::int64_t i = 0; i < plane; ++i) p[i] += g;
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> avg_pool(Tape<T>* tape, const TensorPtr<T>& x, int k) {
  if (x->ndim() != 4) {
    throw ShapeError("avg_pool expects a 4-d tensor, got " + shape_str(x->shape));
  }
  const std::int64_t N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  if (k < 1 || H % k != 0 || W % k != 0) {
    throw ShapeError("avg_pool window " + std::to_string(k) +
                     " must divide spatial extents of " + shape_str(x->shape));
  }
  const std::int64_t Ho = H / k, Wo = W / k;
  auto out = zeros<T>({N, C, Ho, Wo});
  const T inv = T(1) / static_cast<T>(k * k);
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = x->data.data() + nc * H * W;
    T* dst = out->data.data() + nc * Ho * Wo;
    for (std::int64_t oy = 0; oy < Ho; ++oy)
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        T acc = T(0);
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            acc += src[(oy * k + dy) * W + ox * k + dx];
        dst[oy * Wo + ox] = acc * inv;
      }
  }

  const bool gx = detail::wants_grad(tape, x);
  detail::mark_output(tape, out, gx);
  if (gx) {
    tape->record("avg_pool", [x, out, N, C, H, W, Ho, Wo, k, inv] {
      if (out->grad.empty()) return;
      x->ensure_grad();
      for (std::int64_t nc = 0; nc < N * C; ++nc) {
        T* dst = x->grad.data() + nc * H * W;
        const T* g = out->grad.data() + nc * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy)
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const T gv = g[oy * Wo + ox] * inv;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx)
                dst[(oy * k + dy) * W + ox * k + dx] += gv;
          }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> fully_connected(Tape<T>* tape, const TensorPtr<T>& x,
                             const TensorPtr<T>& w, const TensorPtr<T>& b) {
  if (x->ndim() != 2 || w->ndim() != 2 || b->ndim() != 1) {
    throw ShapeError("fully_connected expects x[N,D_in], w[D_out,D_in], b[D_out]");
  }
  const std::int64_t N = x->dim(0), D_in = x->dim(1), D_out = w->dim(0);
  if (w->dim(1) != D_in || b->dim(0) != D_out) {
    throw ShapeError("fully_connected dimension mismatch: x " + shape_str(x->shape) +
                     ", w " + shape_str(w->shape) + ", b " + shape_str(b->shape));
  }
  auto out = zeros<T>({N, D_out});
  {
    detail::MapC<T> X(x->data.data(), N, D_in);
    detail::MapC<T> Wm(w->data.data(), D_out, D_in);
    detail::MapM<T> Y(out->data.data(), N, D_out);
    Y.noalias() = X * Wm.transpose();
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t o = 0; o < D_out; ++o)
        out->data[static_cast<std::size_t>(n * D_out + o)] += b->data[static_cast<std::size_t>(o)];
  }

  const bool gx = detail::wants_grad(tape, x);
  const bool gw = detail::wants_grad(tape, w);
  const bool gb = detail::wants_grad(tape, b);
  detail::mark_output(tape, out, gx || gw || gb);
  if (gx || gw || gb) {
    tape->record("fully_connected", [=] {
      if (out->grad.empty()) return;
      detail::MapC<T> G(out->grad.data(), N, D_out);
      if (gx) {
        x->ensure_grad();
        detail::MapM<T> Xg(x->grad.data(), N, D_in);
        detail::MapC<T> Wm(w->data.data(), D_out, D_in);
        Xg.noalias() += G * Wm;
      }
      if (gw) {
        w->ensure_grad();
        detail::MapM<T> Wg(w->grad.data(), D_out, D_in);
        detail::MapC<T> X(x->data.data(), N, D_in);
        Wg.noalias() += G.transpose() * X;
      }
      if (gb) {
        b->ensure_grad();
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t o = 0; o < D_out; ++o)
            b->grad[static_cast<std::size_t>(o)] += out->grad[static_cast<std::size_t>(n * D_out + o)];
      }
    });
  }
  return out;
}

// Train mode normalizes by the biased batch variance and folds the batch
// statistics into the running stats (EMA, unbiased variance stored). Eval
// mode applies the running stats as a fixed affine transform.
template <typename T>
TensorPtr<T> batch_norm(Tape<T>* tape, const TensorPtr<T>& x,
                        const TensorPtr<T>& gamma, const TensorPtr<T>& beta,
                        const TensorPtr<T>& running_mean,
                        const TensorPtr<T>& running_var, Mode mode,
                        T eps = T(1e-5), T momentum = T(0.1)) {
  if (x->ndim() != 4) {
    throw ShapeError("batch_norm expects a 4-d tensor, got " + shape_str(x->shape));
  }
  const std::int64_t N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  if (gamma->size() != C || beta->size() != C || running_mean->size() != C ||
      running_var->size() != C) {
    throw ShapeError("batch_norm parameter length must equal channel count " +
                     std::to_string(C));
  }
  const std::int64_t M = N * H * W;
  const std::int64_t plane = H * W;
  auto out = zeros<T>(x->shape);

  auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C));

  if (mode == Mode::Train) {
    if (M < 2) {
      throw ShapeError("batch_norm train mode needs at least 2 values per "
                       "channel, got " + std::to_string(M));
    }
    for (std::int64_t c = 0; c < C; ++c) {
      T sum = T(0);
      for (std::int64_t n = 0; n < N; ++n) {
        const T* p = x->data.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) sum += p[i];
      }
      const T m = sum / static_cast<T>(M);
      T sq = T(0);
      for (std::int64_t n = 0; n < N; ++n) {
        const T* p = x->data.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const T d = p[i] - m;
          sq += d * d;
        }
      }
      const T var = sq / static_cast<T>(M);
      (*mean)[static_cast<std::size_t>(c)] = m;
      (*inv_std)[static_cast<std::size_t>(c)] = T(1) / std::sqrt(var + eps);
      running_mean->data[static_cast<std::size_t>(c)] =
          (T(1) - momentum) * running_mean->data[static_cast<std::size_t>(c)] + momentum * m;
      running_var->data[static_cast<std::size_t>(c)] =
          (T(1) - momentum) * running_var->data[static_cast<std::size_t>(c)] +
          momentum * var * static_cast<T>(M) / static_cast<T>(M - 1);
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      (*mean)[static_cast<std::size_t>(c)] = running_mean->data[static_cast<std::size_t>(c)];
      (*inv_std)[static_cast<std::size_t>(c)] =
          T(1) / std::sqrt(running_var->data[static_cast<std::size_t>(c)] + eps);
    }
  }

  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T m = (*mean)[static_cast<std::size_t>(c)];
      const T is = (*inv_std)[static_cast<std::size_t>(c)];
      const T g = gamma->data[static_cast<std::size_t>(c)];
      const T bt = beta->data[static_cast<std::size_t>(c)];
      const T* src = x->data.data() + (n * C + c) * plane;
      T* dst = out->data.data() + (n * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = g * ((src[i] - m) * is) + bt;
    }

  const bool gx = detail::wants_grad(tape, x);
  const bool gg = detail::wants_grad(tape, gamma);
  const bool gb = detail::wants_grad(tape, beta);
  detail::mark_output(tape, out, gx || gg || gb);
  if (gx || gg || gb) {
    const bool train = mode == Mode::Train;
    tape->record("batch_norm", [=] {
      if (out->grad.empty()) return;
      if (gx) x->ensure_grad();
      if (gg) gamma->ensure_grad();
      if (gb) beta->ensure_grad();
      for (std::int64_t c = 0; c < C; ++c) {
        const T m = (*mean)[static_cast<std::size_t>(c)];
        const T is = (*inv_std)[static_cast<std::size_t>(c)];
        const T gam = gamma->data[static_cast<std::size_t>(c)];
        // Channel reductions: sum of upstream grad and of grad * x_hat.
        T s1 = T(0), s2 = T(0);
        for (std::int64_t n = 0; n < N; ++n) {
          const T* gp = out->grad.data() + (n * C + c) * plane;
          const T* xp = x->data.data() + (n * C + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            s1 += gp[i];
            s2 += gp[i] * ((xp[i] - m) * is);
          }
        }
        if (gg) gamma->grad[static_cast<std::size_t>(c)] += s2;
        if (gb) beta->grad[static_cast<std::size_t>(c)] += s1;
        if (!gx) continue;
        if (train) {
          const T invM = T(1) / static_cast<T>(M);
          for (std::int64_t n = 0; n < N; ++n) {
            const T* gp = out->grad.data() + (n * C + c) * plane;
            const T* xp = x->data.data() + (n * C + c) * plane;
            T* dp = x->grad.data() + (n * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              const T xh = (xp[i] - m) * is;
              dp[i] += gam * is * (gp[i] - s1 * invM - xh * s2 * invM);
            }
          }
        } else {
          for (std::int64_t n = 0; n < N; ++n) {
            const T* gp = out->grad.data() + (n * C + c) * plane;
            T* dp = x->grad.data() + (n * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) dp[i] += gam * is * gp[i];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape) {
    throw ShapeError("add requires identical shapes, got " + shape_str(a->shape) +
                     " and " + shape_str(b->shape) +
                     " (a shortcut with these operands needs a bridge projection)");
  }
  auto out = zeros<T>(a->shape);
  for (std::size_t i = 0; i < a->data.size(); ++i)
    out->data[i] = a->data[i] + b->data[i];

  const bool ga = detail::wants_grad(tape, a);
  const bool gb = detail::wants_grad(tape, b);
  detail::mark_output(tape, out, ga || gb);
  if (ga || gb) {
    tape->record("add", [=] {
      if (out->grad.empty()) return;
      if (ga) {
        a->ensure_grad();
        for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
      }
      if (gb) {
        b->ensure_grad();
        for (std::size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> mul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape) {
    throw ShapeError("mul requires identical shapes, got " + shape_str(a->shape) +
                     " and " + shape_str(b->shape));
  }
  auto out = zeros<T>(a->shape);
  for (std::size_t i = 0; i < a->data.size(); ++i)
    out->data[i] = a->data[i] * b->data[i];

  const bool ga = detail::wants_grad(tape, a);
  const bool gb = detail::wants_grad(tape, b);
  detail::mark_output(tape, out, ga || gb);
  if (ga || gb) {
    tape->record("mul", [=] {
      if (out->grad.empty()) return;
      if (ga) {
        a->ensure_grad();
        for (std::size_t i = 0; i < out->grad.size(); ++i)
          a->grad[i] += out->grad[i] * b->data[i];
      }
      if (gb) {
        b->ensure_grad();
        for (std::size_t i = 0; i < out->grad.size(); ++i)
          b->grad[i] += out->grad[i] * a->data[i];
      }
    });
  }
  return out;
}

// Per-channel gain: every spatial element of channel (n,c) is multiplied by
// the scalar s[n,c,0,0].
template <typename T>
TensorPtr<T> scale_channels(Tape<T>* tape, const TensorPtr<T>& x,
                            const TensorPtr<T>& s) {
  if (x->ndim() != 4 || s->ndim() != 4 || s->dim(2) != 1 || s->dim(3) != 1 ||
      s->dim(0) != x->dim(0) || s->dim(1) != x->dim(1)) {
    throw ShapeError("scale_channels expects x[N,C,H,W] and s[N,C,1,1], got " +
                     shape_str(x->shape) + " and " + shape_str(s->shape));
  }
  const std::int64_t NC = x->dim(0) * x->dim(1);
  const std::int64_t plane = x->dim(2) * x->dim(3);
  auto out = zeros<T>(x->shape);
  for (std::int64_t nc = 0; nc < NC; ++nc) {
    const T gain = s->data[static_cast<std::size_t>(nc)];
    const T* src = x->data.data() + nc * plane;
    T* dst = out->data.data() + nc * plane;
    for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * gain;
  }

  const bool gx = detail::wants_grad(tape, x);
  const bool gs = detail::wants_grad(tape, s);
  detail::mark_output(tape, out, gx || gs);
  if (gx || gs) {
    tape->record("scale_channels", [=] {
      if (out->grad.empty()) return;
      if (gx) x->ensure_grad();
      if (gs) s->ensure_grad();
      for (std::int64_t nc = 0; nc < NC; ++nc) {
        const T gain = s->data[static_cast<std::size_t>(nc)];
        const T* g = out->grad.data() + nc * plane;
        if (gx) {
          T* dx = x->grad.data() + nc * plane;
          for (std::int64_t i = 0; i < plane; ++i) dx[i] += g[i] * gain;
        }
        if (gs) {
          const T* xp = x->data.data() + nc * plane;
          T acc = T(0);
          for (std::int64_t i = 0; i < plane; ++i) acc += g[i] * xp[i];
          s->grad[static_cast<std::size_t>(nc)] += acc;
        }
      }
    });
  }
  return out;
}

// Mean over the batch of -log softmax(logits)[label], in log-sum-exp form.
template <typename T>
TensorPtr<T> softmax_cross_entropy(Tape<T>* tape, const TensorPtr<T>& logits,
                                   const std::vector<int>& labels) {
  if (logits->ndim() != 2) {
    throw ShapeError("softmax_cross_entropy expects logits[N,K], got " +
                     shape_str(logits->shape));
  }
  const std::int64_t N = logits->dim(0), K = logits->dim(1);
  if (static_cast<std::int64_t>(labels.size()) != N) {
    throw ShapeError("softmax_cross_entropy got " + std::to_string(labels.size()) +
                     " labels for a batch of " + std::to_string(N));
  }
  for (int y : labels) {
    if (y < 0 || y >= K) {
      throw ShapeError("label " + std::to_string(y) + " outside [0," +
                       std::to_string(K) + ")");
    }
  }

  auto probs = std::make_shared<std::vector<T>>(logits->data.size());
  T total = T(0);
  for (std::int64_t n = 0; n < N; ++n) {
    const T* row = logits->data.data() + n * K;
    T m = row[0];
    for (std::int64_t c = 1; c < K; ++c) m = std::max(m, row[c]);
    T z = T(0);
    for (std::int64_t c = 0; c < K; ++c) z += std::exp(row[c] - m);
    const T lse = m + std::log(z);
    for (std::int64_t c = 0; c < K; ++c)
      (*probs)[static_cast<std::size_t>(n * K + c)] = std::exp(row[c] - lse);
    total += lse - row[labels[static_cast<std::size_t>(n)]];
  }
  auto out = make_tensor<T>({1}, {total / static_cast<T>(N)});

  const bool gl = detail::wants_grad(tape, logits);
  detail::mark_output(tape, out, gl);
  if (gl) {
    tape->record("softmax_cross_entropy", [logits, out, probs, labels, N, K] {
      if (out->grad.empty()) return;
      logits->ensure_grad();
      const T upstream = out->grad[0] / static_cast<T>(N);
      for (std::int64_t n = 0; n < N; ++n) {
        const int y = labels[static_cast<std::size_t>(n)];
        for (std::int64_t c = 0; c < K; ++c) {
          T p = (*probs)[static_cast<std::size_t>(n * K + c)];
          if (c == y) p -= T(1);
          logits->grad[static_cast<std::size_t>(n * K + c)] += upstream * p;
        }
      }
    });
  }
  return out;
}

// Shape change with identical element order; gradient passes straight through.
template <typename T>
TensorPtr<T> reshape(Tape<T>* tape, const TensorPtr<T>& x, Shape shape) {
  if (numel(shape) != x->size()) {
    throw ShapeError("reshape from " + shape_str(x->shape) + " to " +
                     shape_str(shape) + " changes the element count");
  }
  auto out = make_tensor<T>(std::move(shape), x->data);
  const bool gx = detail::wants_grad(tape, x);
  detail::mark_output(tape, out, gx);
  if (gx) {
    tape->record("reshape", [x, out] {
      if (out->grad.empty()) return;
      x->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> sum_all(Tape<T>* tape, const TensorPtr<T>& x) {
  T acc = T(0);
  for (const T& v : x->data) acc += v;
  auto out = make_tensor<T>({1}, {acc});
  const bool gx = detail::wants_grad(tape, x);
  detail::mark_output(tape, out, gx);
  if (gx) {
    tape->record("sum_all", [x, out] {
      if (out->grad.empty()) return;
      x->ensure_grad();
      const T g = out->grad[0];
      for (auto& v : x->grad) v += g;
    });
  }
  return out;
}

}  // namespace ressenet::ops
