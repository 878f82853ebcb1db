#pragma once

// Layer primitives with explicit forward/backward, and a finite-difference checker.
//
// Every forward returns the output together with the cache its backward needs.
// Summation order is fixed, so results do not depend on how a batch is split.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cafe/error.hpp"
#include "cafe/tensor.hpp"

namespace cafe {

/// Gradients produced by one backward call: one entry per parameter plus the input gradient.
struct LayerGrad {
  std::map<std::string, Tensor> params;
  Tensor input;
};

namespace kernels {

// C[m,n] (+)= A[m,k] * B[k,n]
inline void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n,
                    bool accumulate = false) {
  if (!accumulate) std::fill(C, C + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

// C[k,n] (+)= A[m,k]^T * B[m,n]
inline void gemm_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n,
                    bool accumulate = false) {
  if (!accumulate) std::fill(C, C + k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* b = B + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      double* c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

// C[m,k] (+)= A[m,n] * B[k,n]^T
inline void gemm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t n, std::size_t k,
                    bool accumulate = false) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* b = B + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a[j] * b[j];
      C[i * k + p] = accumulate ? C[i * k + p] + s : s;
    }
  }
}

}  // namespace kernels

// ---- linear ---------------------------------------------------------------

struct LinearCache {
  Tensor x;
  Tensor W;
};

/// y = x W + b for x[B,N], W[N,M], b[M].
inline std::pair<Tensor, LinearCache> linear_forward(const Tensor& x, const Tensor& W, const Tensor& b) {
  require_rank(x, 2, "linear x");
  require_rank(W, 2, "linear W");
  require(x.dim(1) == W.dim(0), "linear: x is " + shape_str(x.shape()) + " but W is " + shape_str(W.shape()));
  require_shape(b, {W.dim(1)}, "linear b");
  const std::size_t B = x.dim(0), N = x.dim(1), M = W.dim(1);
  Tensor y({B, M});
  for (std::size_t r = 0; r < B; ++r) std::copy_n(b.data().begin(), M, y.data().begin() + static_cast<std::ptrdiff_t>(r * M));
  kernels::gemm_nn(x.data().data(), W.data().data(), y.data().data(), B, N, M, true);
  return {std::move(y), LinearCache{x, W}};
}

inline LayerGrad linear_backward(const LinearCache& cache, const Tensor& dy) {
  const std::size_t B = cache.x.dim(0), N = cache.x.dim(1), M = cache.W.dim(1);
  require_shape(dy, {B, M}, "linear upstream grad");
  Tensor dW({N, M}), db({M}), dx({B, N});
  kernels::gemm_tn(cache.x.data().data(), dy.data().data(), dW.data().data(), B, N, M);
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t m = 0; m < M; ++m) db[m] += dy[r * M + m];
  kernels::gemm_nt(dy.data().data(), cache.W.data().data(), dx.data().data(), B, M, N);
  return {{{"W", std::move(dW)}, {"b", std::move(db)}}, std::move(dx)};
}

// ---- depthwise / pointwise 1-D convolution --------------------------------

struct DepthwiseCache {
  Tensor x;
  Tensor k;
};

/// Per-channel cross-correlation with odd kernel length and zero "same" padding.
inline std::pair<Tensor, DepthwiseCache> conv1d_depthwise_forward(const Tensor& x, const Tensor& k) {
  require_rank(x, 3, "conv1d_depthwise x");
  require_rank(k, 2, "conv1d_depthwise k");
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), K = k.dim(1);
  require(k.dim(0) == C, "conv1d_depthwise: kernel has " + std::to_string(k.dim(0)) + " channels, input " +
                             std::to_string(C));
  require(K % 2 == 1, "conv1d_depthwise: kernel length must be odd, got " + std::to_string(K));
  const auto pad = static_cast<std::ptrdiff_t>(K / 2);
  Tensor y({B, C, T});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const double* xr = x.data().data() + (b * C + c) * T;
      double* yr = y.data().data() + (b * C + c) * T;
      for (std::size_t j = 0; j < K; ++j) {
        const double w = k.at(c, j);
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - pad;
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -off);
        const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(T), static_cast<std::ptrdiff_t>(T) - off);
        for (std::ptrdiff_t t = t0; t < t1; ++t) yr[t] += w * xr[t + off];
      }
    }
  return {std::move(y), DepthwiseCache{x, k}};
}

inline LayerGrad conv1d_depthwise_backward(const DepthwiseCache& cache, const Tensor& dy) {
  const auto& x = cache.x;
  const auto& k = cache.k;
  require_shape(dy, x.shape(), "conv1d_depthwise upstream grad");
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), K = k.dim(1);
  const auto pad = static_cast<std::ptrdiff_t>(K / 2);
  Tensor dk(k.shape()), dx(x.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const double* xr = x.data().data() + (b * C + c) * T;
      const double* gr = dy.data().data() + (b * C + c) * T;
      double* dxr = dx.data().data() + (b * C + c) * T;
      for (std::size_t j = 0; j < K; ++j) {
        const double w = k.at(c, j);
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - pad;
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -off);
        const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(T), static_cast<std::ptrdiff_t>(T) - off);
        double acc = 0.0;
        for (std::ptrdiff_t t = t0; t < t1; ++t) {
          acc += gr[t] * xr[t + off];
          dxr[t + off] += w * gr[t];
        }
        dk.at(c, j) += acc;
      }
    }
  return {{{"k", std::move(dk)}}, std::move(dx)};
}

struct PointwiseCache {
  Tensor x;
  Tensor W;
};

/// 1x1 channel mixing: y[b,o,t] = sum_c W[c,o] x[b,c,t].
inline std::pair<Tensor, PointwiseCache> conv1d_pointwise_forward(const Tensor& x, const Tensor& W) {
  require_rank(x, 3, "conv1d_pointwise x");
  require_rank(W, 2, "conv1d_pointwise W");
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), O = W.dim(1);
  require(W.dim(0) == C, "conv1d_pointwise: W is " + shape_str(W.shape()) + " for " + std::to_string(C) + " channels");
  Tensor y({B, O, T});
  for (std::size_t b = 0; b < B; ++b)
    kernels::gemm_tn(W.data().data(), x.data().data() + b * C * T, y.data().data() + b * O * T, C, O, T);
  return {std::move(y), PointwiseCache{x, W}};
}

inline LayerGrad conv1d_pointwise_backward(const PointwiseCache& cache, const Tensor& dy) {
  const auto& x = cache.x;
  const auto& W = cache.W;
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), O = W.dim(1);
  require_shape(dy, {B, O, T}, "conv1d_pointwise upstream grad");
  Tensor dW(W.shape()), dx(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    kernels::gemm_nt(x.data().data() + b * C * T, dy.data().data() + b * O * T, dW.data().data(), C, T, O, true);
    kernels::gemm_nn(W.data().data(), dy.data().data() + b * O * T, dx.data().data() + b * C * T, C, O, T);
  }
  return {{{"W", std::move(dW)}}, std::move(dx)};
}

/// y[b,c,t] = x[b,c,t] + bias[c]
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 3, "add_channel_bias x");
  require_shape(bias, {x.dim(1)}, "add_channel_bias bias");
  Tensor y = x;
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t) y[(b * C + c) * T + t] += bias[c];
  return y;
}

inline Tensor channel_bias_grad(const Tensor& dy) {
  const std::size_t B = dy.dim(0), C = dy.dim(1), T = dy.dim(2);
  Tensor db({C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t) db[c] += dy[(b * C + c) * T + t];
  return db;
}

// ---- single-head self-attention over the channel axis ---------------------

struct AttentionCache {
  Tensor x, Wq, Wk, Wv;
  Tensor q, k, v;  // [B,C,D]
  Tensor attn;     // [B,C,C], row-softmaxed
};

/// softmax((x Wq)(x Wk)^T / sqrt(D)) (x Wv) for x[B,C,D]; tokens are channels.
inline std::pair<Tensor, AttentionCache> attention_channels_forward(const Tensor& x, const Tensor& Wq, const Tensor& Wk,
                                                                    const Tensor& Wv) {
  require_rank(x, 3, "attention x");
  const std::size_t B = x.dim(0), C = x.dim(1), D = x.dim(2);
  require_shape(Wq, {D, D}, "attention Wq");
  require_shape(Wk, {D, D}, "attention Wk");
  require_shape(Wv, {D, D}, "attention Wv");
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  AttentionCache cache{x, Wq, Wk, Wv, Tensor({B, C, D}), Tensor({B, C, D}), Tensor({B, C, D}), Tensor({B, C, C})};
  Tensor y({B, C, D});
  for (std::size_t b = 0; b < B; ++b) {
    const double* xb = x.data().data() + b * C * D;
    double* qb = cache.q.data().data() + b * C * D;
    double* kb = cache.k.data().data() + b * C * D;
    double* vb = cache.v.data().data() + b * C * D;
    double* ab = cache.attn.data().data() + b * C * C;
    kernels::gemm_nn(xb, Wq.data().data(), qb, C, D, D);
    kernels::gemm_nn(xb, Wk.data().data(), kb, C, D, D);
    kernels::gemm_nn(xb, Wv.data().data(), vb, C, D, D);
    kernels::gemm_nt(qb, kb, ab, C, D, C);
    for (std::size_t i = 0; i < C; ++i) {
      double* row = ab + i * C;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < C; ++j) mx = std::max(mx, row[j] * scale);
      double sum = 0.0;
      for (std::size_t j = 0; j < C; ++j) sum += (row[j] = std::exp(row[j] * scale - mx));
      for (std::size_t j = 0; j < C; ++j) row[j] /= sum;
    }
    kernels::gemm_nn(ab, vb, y.data().data() + b * C * D, C, C, D);
  }
  return {std::move(y), std::move(cache)};
}

inline LayerGrad attention_channels_backward(const AttentionCache& cache, const Tensor& dy) {
  const std::size_t B = cache.x.dim(0), C = cache.x.dim(1), D = cache.x.dim(2);
  require_shape(dy, {B, C, D}, "attention upstream grad");
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  Tensor dWq({D, D}), dWk({D, D}), dWv({D, D}), dx({B, C, D});
  std::vector<double> dA(C * C), dS(C * C), dq(C * D), dk(C * D), dv(C * D);
  for (std::size_t b = 0; b < B; ++b) {
    const double* xb = cache.x.data().data() + b * C * D;
    const double* qb = cache.q.data().data() + b * C * D;
    const double* kb = cache.k.data().data() + b * C * D;
    const double* vb = cache.v.data().data() + b * C * D;
    const double* ab = cache.attn.data().data() + b * C * C;
    const double* gb = dy.data().data() + b * C * D;
    kernels::gemm_nt(gb, vb, dA.data(), C, D, C);
    kernels::gemm_tn(ab, gb, dv.data(), C, C, D);
    for (std::size_t i = 0; i < C; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < C; ++j) dot += dA[i * C + j] * ab[i * C + j];
      for (std::size_t j = 0; j < C; ++j) dS[i * C + j] = ab[i * C + j] * (dA[i * C + j] - dot) * scale;
    }
    kernels::gemm_nn(dS.data(), kb, dq.data(), C, C, D);
    kernels::gemm_tn(dS.data(), qb, dk.data(), C, C, D);
    kernels::gemm_tn(xb, dq.data(), dWq.data().data(), C, D, D, true);
    kernels::gemm_tn(xb, dk.data(), dWk.data().data(), C, D, D, true);
    kernels::gemm_tn(xb, dv.data(), dWv.data().data(), C, D, D, true);
    double* dxb = dx.data().data() + b * C * D;
    kernels::gemm_nt(dq.data(), cache.Wq.data().data(), dxb, C, D, D);
    kernels::gemm_nt(dk.data(), cache.Wk.data().data(), dxb, C, D, D, true);
    kernels::gemm_nt(dv.data(), cache.Wv.data().data(), dxb, C, D, D, true);
  }
  return {{{"Wq", std::move(dWq)}, {"Wk", std::move(dWk)}, {"Wv", std::move(dWv)}}, std::move(dx)};
}

// ---- elementwise / normalization ------------------------------------------

inline std::pair<Tensor, Tensor> relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.vec()) v = v > 0.0 ? v : 0.0;
  return {std::move(y), x};
}

inline LayerGrad relu_backward(const Tensor& x, const Tensor& dy) {
  require(dy.shape() == x.shape(), "relu: upstream grad shape mismatch");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  return {{}, std::move(dx)};
}

struct LayerNormCache {
  Tensor xhat;
  std::vector<double> inv_std;
  Tensor gamma;
};

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes over the last axis, then applies per-feature gain and shift.
inline std::pair<Tensor, LayerNormCache> layernorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require(x.rank() >= 1, "layernorm: scalar input");
  const std::size_t D = x.shape().back(), R = x.size() / D;
  require_shape(gamma, {D}, "layernorm gamma");
  require_shape(beta, {D}, "layernorm beta");
  LayerNormCache cache{Tensor(x.shape()), std::vector<double>(R), gamma};
  Tensor y(x.shape());
  for (std::size_t r = 0; r < R; ++r) {
    const double* xr = x.data().data() + r * D;
    double mean = 0.0;
    for (std::size_t d = 0; d < D; ++d) mean += xr[d];
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t d = 0; d < D; ++d) var += (xr[d] - mean) * (xr[d] - mean);
    const double inv = 1.0 / std::sqrt(var / static_cast<double>(D) + kLayerNormEps);
    cache.inv_std[r] = inv;
    for (std::size_t d = 0; d < D; ++d) {
      const double h = (xr[d] - mean) * inv;
      cache.xhat[r * D + d] = h;
      y[r * D + d] = gamma[d] * h + beta[d];
    }
  }
  return {std::move(y), std::move(cache)};
}

inline LayerGrad layernorm_backward(const LayerNormCache& cache, const Tensor& dy) {
  require(dy.shape() == cache.xhat.shape(), "layernorm: upstream grad shape mismatch");
  const std::size_t D = cache.gamma.size(), R = dy.size() / D;
  Tensor dgamma({D}), dbeta({D}), dx(dy.shape());
  std::vector<double> dh(D);
  for (std::size_t r = 0; r < R; ++r) {
    const double* g = dy.data().data() + r * D;
    const double* h = cache.xhat.data().data() + r * D;
    double sum_dh = 0.0, sum_dh_h = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      dgamma[d] += g[d] * h[d];
      dbeta[d] += g[d];
      dh[d] = g[d] * cache.gamma[d];
      sum_dh += dh[d];
      sum_dh_h += dh[d] * h[d];
    }
    const double inv_d = 1.0 / static_cast<double>(D);
    for (std::size_t d = 0; d < D; ++d)
      dx[r * D + d] = cache.inv_std[r] * (dh[d] - inv_d * sum_dh - inv_d * h[d] * sum_dh_h);
  }
  return {{{"gamma", std::move(dgamma)}, {"beta", std::move(dbeta)}}, std::move(dx)};
}

// ---- masked reconstruction loss -------------------------------------------

struct MaskedLoss {
  double value = 0.0;
  Tensor grad;  // d value / d pred; zero outside the selected rows
};

/// Mean squared error over the selected channel rows of [C,T] tensors:
/// sum over rows in `rows` and all t of (pred - target)^2, divided by |rows| * T.
inline MaskedLoss mse_masked(const Tensor& pred, const Tensor& target, const std::vector<std::size_t>& rows) {
  require_rank(pred, 2, "mse_masked pred");
  require(pred.shape() == target.shape(), "mse_masked: pred/target shape mismatch");
  require(!rows.empty(), "mse_masked: empty index set");
  const std::size_t C = pred.dim(0), T = pred.dim(1);
  const double norm = 1.0 / static_cast<double>(rows.size() * T);
  MaskedLoss out{0.0, Tensor(pred.shape())};
  for (std::size_t c : rows) {
    require(c < C, "mse_masked: channel index out of range");
    for (std::size_t t = 0; t < T; ++t) {
      const double e = pred.at(c, t) - target.at(c, t);
      out.value += e * e * norm;
      out.grad.at(c, t) += 2.0 * e * norm;
    }
  }
  return out;
}

// ---- finite-difference gradient check -------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// Central differences of the scalar function `f` at `point`, compared against
/// `analytic`. Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
/// When `coords` is given only those coordinates are probed.
inline GradCheckReport grad_check(const std::function<double(const Tensor&)>& f, const Tensor& point,
                                  const Tensor& analytic, double h = 1e-5,
                                  const std::optional<std::vector<std::size_t>>& coords = std::nullopt) {
  require(analytic.shape() == point.shape(), "grad_check: analytic gradient shape mismatch");
  GradCheckReport rep;
  bool first = true;
  Tensor x = point;
  auto probe = [&](std::size_t i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    const double num = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-8});
    if (first || rel > rep.max_rel_error) rep = {rel, i, a, num};
    first = false;
  };
  if (coords) {
    for (std::size_t i : *coords) probe(i);
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) probe(i);
  }
  return rep;
}

}  // namespace cafe
