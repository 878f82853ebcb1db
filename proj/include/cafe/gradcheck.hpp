#pragma once

// Finite-difference battery over every layer primitive and every backbone
// (masked loss composed with the forward pass). Each check evaluates a scalar
// objective sum(y * R) with a fixed random R, or the masked MSE end to end.

#include <functional>
#include <string>
#include <vector>

#include "cafe/numerics.hpp"
#include "cafe/predictor.hpp"
#include "cafe/rng.hpp"
#include "cafe/tensor.hpp"

namespace cafe {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t seeds = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

inline constexpr double kPrimitiveTolerance = 1e-5;
inline constexpr double kEndToEndTolerance = 1e-4;

namespace detail {

inline Tensor random_tensor(Shape shape, CounterRng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = scale * rng.normal();
  return t;
}

/// Values bounded away from zero so relu kinks stay outside the probe width.
inline Tensor random_away_from_zero(Shape shape, CounterRng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return t;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Checks every input of a primitive. `run(inputs)` returns (output, grads of
/// sum(output * R) w.r.t. each input, given R) via the layer's backward.
using PrimitiveFn = std::function<std::pair<Tensor, std::vector<Tensor>>(const std::vector<Tensor>&, const Tensor*)>;

inline double check_primitive(const PrimitiveFn& run, std::vector<Tensor> inputs, CounterRng& rng, double h = 1e-5) {
  const Tensor y = run(inputs, nullptr).first;
  const Tensor R = random_tensor(y.shape(), rng);
  const auto grads = run(inputs, &R).second;
  double worst = 0.0;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    auto f = [&](const Tensor& x) {
      auto in = inputs;
      in[j] = x;
      return dot(run(in, nullptr).first, R);
    };
    worst = std::max(worst, grad_check(f, inputs[j], grads[j], h).max_rel_error);
  }
  return worst;
}

inline double check_backbone(BackboneKind kind, InputMode mode, std::uint64_t seed) {
  const std::size_t B = 2, C = 6, T = 8;
  Hyper hyper;
  hyper.hidden = 5;
  hyper.kernel = 3;
  hyper.model_dim = 4;
  PredictorParams p = init_params(kind, C, T, hyper, seed, mode);
  CounterRng rng(hash_combine(seed, 0x9e11ULL));
  // Perturb every tensor so zero-initialized biases and unit gains are exercised too.
  for (auto& t : p.tensors)
    for (double& v : t.vec()) v += 0.3 * rng.normal();
  Tensor ctx = random_tensor({B, C, T}, rng), masks({B, C});
  const Tensor target = random_tensor({B, C, T}, rng);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const bool vis = (c + b) % 3 == 0;
      masks.at(b, c) = vis ? 1.0 : 0.0;
      if (!vis)
        for (std::size_t t = 0; t < T; ++t) ctx.at(b, c, t) = 0.0;
    }
  const std::vector<std::size_t> rows{1, 2, 4};

  auto loss = [&](const PredictorParams& q, Tensor* upstream) {
    auto out = forward(q, ctx, masks);
    double value = 0.0;
    if (upstream) *upstream = Tensor({B, C, T});
    for (std::size_t b = 0; b < B; ++b) {
      Tensor pred({C, T}), tgt({C, T});
      std::copy_n(out.estimate.data().begin() + static_cast<std::ptrdiff_t>(b * C * T), C * T, pred.vec().begin());
      std::copy_n(target.data().begin() + static_cast<std::ptrdiff_t>(b * C * T), C * T, tgt.vec().begin());
      const auto l = mse_masked(pred, tgt, rows);
      value += l.value / static_cast<double>(B);
      if (upstream)
        for (std::size_t i = 0; i < C * T; ++i) (*upstream)[b * C * T + i] = l.grad[i] / static_cast<double>(B);
    }
    return std::pair{value, std::move(out.cache)};
  };

  Tensor up;
  auto [value, cache] = loss(p, &up);
  const ParamGrads grads = backward(p, cache, up);
  double worst = 0.0;
  for (std::size_t j = 0; j < p.tensors.size(); ++j) {
    auto f = [&](const Tensor& x) {
      PredictorParams q = p;
      q.tensors[j] = x;
      return loss(q, nullptr).first;
    };
    worst = std::max(worst, grad_check(f, p.tensors[j], grads[j], 1e-6).max_rel_error);
  }
  return worst;
}

}  // namespace detail

/// Runs the battery over `n_seeds` seeds starting at `base_seed`; one result per check.
inline std::vector<GradCheckResult> run_gradcheck_battery(std::size_t n_seeds, std::uint64_t base_seed = 1) {
  using detail::check_primitive;
  using detail::random_tensor;
  struct Prim {
    std::string name;
    std::function<std::vector<Tensor>(CounterRng&)> make;
    detail::PrimitiveFn run;
  };
  auto wrap = [](const LayerGrad& g, std::initializer_list<const char*> names) {
    std::vector<Tensor> out{g.input};
    for (const char* n : names) out.push_back(g.params.at(n));
    return out;
  };
  std::vector<Prim> prims;
  prims.push_back({"linear",
                   [](CounterRng& r) {
                     return std::vector{random_tensor({3, 4}, r), random_tensor({4, 5}, r), random_tensor({5}, r)};
                   },
                   [&](const std::vector<Tensor>& in, const Tensor* R) {
                     auto [y, c] = linear_forward(in[0], in[1], in[2]);
                     return std::pair{y, R ? wrap(linear_backward(c, *R), {"W", "b"}) : std::vector<Tensor>{}};
                   }});
  prims.push_back({"conv1d_depthwise",
                   [](CounterRng& r) { return std::vector{random_tensor({2, 3, 9}, r), random_tensor({3, 5}, r)}; },
                   [&](const std::vector<Tensor>& in, const Tensor* R) {
                     auto [y, c] = conv1d_depthwise_forward(in[0], in[1]);
                     return std::pair{y, R ? wrap(conv1d_depthwise_backward(c, *R), {"k"}) : std::vector<Tensor>{}};
                   }});
  prims.push_back({"conv1d_pointwise",
                   [](CounterRng& r) { return std::vector{random_tensor({2, 3, 7}, r), random_tensor({3, 4}, r)}; },
                   [&](const std::vector<Tensor>& in, const Tensor* R) {
                     auto [y, c] = conv1d_pointwise_forward(in[0], in[1]);
                     return std::pair{y, R ? wrap(conv1d_pointwise_backward(c, *R), {"W"}) : std::vector<Tensor>{}};
                   }});
  prims.push_back({"channel_bias",
                   [](CounterRng& r) { return std::vector{random_tensor({2, 3, 5}, r), random_tensor({3}, r)}; },
                   [](const std::vector<Tensor>& in, const Tensor* R) {
                     Tensor y = add_channel_bias(in[0], in[1]);
                     return std::pair{y, R ? std::vector<Tensor>{*R, channel_bias_grad(*R)} : std::vector<Tensor>{}};
                   }});
  prims.push_back({"attention",
                   [](CounterRng& r) {
                     return std::vector{random_tensor({2, 5, 4}, r), random_tensor({4, 4}, r, 0.5),
                                        random_tensor({4, 4}, r, 0.5), random_tensor({4, 4}, r, 0.5)};
                   },
                   [&](const std::vector<Tensor>& in, const Tensor* R) {
                     auto [y, c] = attention_channels_forward(in[0], in[1], in[2], in[3]);
                     return std::pair{y, R ? wrap(attention_channels_backward(c, *R), {"Wq", "Wk", "Wv"})
                                           : std::vector<Tensor>{}};
                   }});
  prims.push_back({"relu", [](CounterRng& r) { return std::vector{detail::random_away_from_zero({3, 7}, r)}; },
                   [](const std::vector<Tensor>& in, const Tensor* R) {
                     auto [y, x] = relu_forward(in[0]);
                     return std::pair{y, R ? std::vector<Tensor>{relu_backward(x, *R).input} : std::vector<Tensor>{}};
                   }});
  prims.push_back({"layernorm",
                   [](CounterRng& r) {
                     return std::vector{random_tensor({3, 6}, r), random_tensor({6}, r), random_tensor({6}, r)};
                   },
                   [&](const std::vector<Tensor>& in, const Tensor* R) {
                     auto [y, c] = layernorm_forward(in[0], in[1], in[2]);
                     return std::pair{y, R ? wrap(layernorm_backward(c, *R), {"gamma", "beta"}) : std::vector<Tensor>{}};
                   }});
  prims.push_back({"mse_masked",
                   [](CounterRng& r) { return std::vector{random_tensor({4, 6}, r), random_tensor({4, 6}, r)}; },
                   [](const std::vector<Tensor>& in, const Tensor* R) {
                     // Output is the scalar loss; R scales it.
                     const auto l = mse_masked(in[0], in[1], {0, 2});
                     Tensor y({1}, l.value);
                     if (!R) return std::pair{y, std::vector<Tensor>{}};
                     Tensor dp = l.grad, dt = l.grad;
                     for (double& v : dp.vec()) v *= (*R)[0];
                     for (double& v : dt.vec()) v *= -(*R)[0];
                     return std::pair{y, std::vector<Tensor>{dp, dt}};
                   }});

  std::vector<GradCheckResult> out;
  for (const auto& prim : prims) {
    GradCheckResult res{prim.name, 0.0, kPrimitiveTolerance, n_seeds};
    for (std::size_t s = 0; s < n_seeds; ++s) {
      CounterRng rng(hash_combine(base_seed + s, fnv1a(prim.name.data(), prim.name.size())));
      res.max_rel_error = std::max(res.max_rel_error, check_primitive(prim.run, prim.make(rng), rng));
    }
    out.push_back(res);
  }
  for (auto kind : {BackboneKind::Mlp, BackboneKind::Conv, BackboneKind::Attn})
    for (auto mode : {InputMode::MaskAppended, InputMode::MaskedOnly}) {
      GradCheckResult res{std::string(backbone_name(kind)) + "/" + input_mode_name(mode), 0.0, kEndToEndTolerance,
                          n_seeds};
      for (std::size_t s = 0; s < n_seeds; ++s)
        res.max_rel_error = std::max(res.max_rel_error, detail::check_backbone(kind, mode, base_seed + s));
      out.push_back(res);
    }
  return out;
}

}  // namespace cafe
