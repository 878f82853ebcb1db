#pragma once

// The shared predictor: maps a masked full-montage context [C_H, T] (plus the
// visibility mask) to a full-montage estimate [C_H, T]. Three backbone families
// share one interface: init_params / forward / backward / save_model / load_model.
//
// Parameter counts (C_in = 2*C_H with the mask appended, C_H otherwise):
//   Mlp : C_in*T + C_in*H + H + H*C_H + C_H
//   Conv: C_in*K + C_in*H + H + H*K + H*C_H + C_H
//   Attn: T*D + D + C_H*D + 2*D + 3*D*D + D*T + T   (+ D with the mask appended)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "cafe/error.hpp"
#include "cafe/montage.hpp"
#include "cafe/numerics.hpp"
#include "cafe/rng.hpp"
#include "cafe/signal.hpp"
#include "cafe/tensor.hpp"

namespace cafe {

enum class BackboneKind { Mlp, Conv, Attn };
enum class InputMode { MaskedOnly, MaskAppended };

inline const char* backbone_name(BackboneKind k) {
  switch (k) {
    case BackboneKind::Mlp: return "mlp";
    case BackboneKind::Conv: return "conv";
    case BackboneKind::Attn: return "attn";
  }
  return "?";
}

inline BackboneKind parse_backbone(std::string_view s) {
  if (s == "mlp") return BackboneKind::Mlp;
  if (s == "conv") return BackboneKind::Conv;
  if (s == "attn" || s == "transformer") return BackboneKind::Attn;
  throw Error(ErrorKind::Config, "unknown backbone '" + std::string(s) + "'");
}

inline const char* input_mode_name(InputMode m) { return m == InputMode::MaskAppended ? "mask_appended" : "masked_only"; }

inline InputMode parse_input_mode(std::string_view s) {
  if (s == "mask_appended" || s == "appended") return InputMode::MaskAppended;
  if (s == "masked_only" || s == "masked") return InputMode::MaskedOnly;
  throw Error(ErrorKind::Config, "unknown input mode '" + std::string(s) + "'");
}

struct Hyper {
  std::size_t hidden = 64;     // Mlp hidden width / Conv feature channels
  std::size_t kernel = 5;      // Conv depthwise kernel length (odd)
  std::size_t model_dim = 0;   // Attn token width; 0 selects T
  friend bool operator==(const Hyper&, const Hyper&) = default;
};

struct PredictorParams {
  BackboneKind kind = BackboneKind::Mlp;
  InputMode input_mode = InputMode::MaskAppended;
  Hyper hyper;
  std::size_t channels = 0;  // C_H
  std::size_t samples = 0;   // T
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
  /// Bumped on every in-place update; forward caches remember it.
  std::uint64_t version = 0;

  std::size_t input_channels() const noexcept {
    return input_mode == InputMode::MaskAppended ? 2 * channels : channels;
  }
  std::size_t model_dim() const noexcept { return hyper.model_dim ? hyper.model_dim : samples; }

  std::size_t index(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw Error(ErrorKind::InvalidArgument, "predictor: no parameter named '" + std::string(name) + "'");
  }
  const Tensor& get(std::string_view name) const { return tensors[index(name)]; }
  Tensor& get(std::string_view name) { return tensors[index(name)]; }

  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  friend bool operator==(const PredictorParams& a, const PredictorParams& b) {
    return a.kind == b.kind && a.input_mode == b.input_mode && a.hyper == b.hyper && a.channels == b.channels &&
           a.samples == b.samples && a.names == b.names && a.tensors == b.tensors;
  }
};

/// One gradient tensor per parameter tensor, same order and shapes.
using ParamGrads = std::vector<Tensor>;

inline ParamGrads zero_grads(const PredictorParams& p) {
  ParamGrads g;
  for (const auto& t : p.tensors) g.emplace_back(t.shape());
  return g;
}

inline std::size_t closed_form_param_count(BackboneKind kind, InputMode mode, std::size_t C, std::size_t T,
                                           const Hyper& h) {
  const std::size_t Cin = mode == InputMode::MaskAppended ? 2 * C : C;
  const std::size_t H = h.hidden, K = h.kernel, D = h.model_dim ? h.model_dim : T;
  switch (kind) {
    case BackboneKind::Mlp: return Cin * T + Cin * H + H + H * C + C;
    case BackboneKind::Conv: return Cin * K + Cin * H + H + H * K + H * C + C;
    case BackboneKind::Attn:
      return T * D + D + C * D + 2 * D + 3 * D * D + D * T + T + (mode == InputMode::MaskAppended ? D : 0);
  }
  return 0;
}

namespace detail {

struct ParamSpec {
  std::string name;
  Shape shape;
  enum Init { FanIn, Zero, One, Small } init;
  std::size_t fan_in = 1;
};

inline std::vector<ParamSpec> param_layout(BackboneKind kind, InputMode mode, std::size_t C, std::size_t T,
                                           const Hyper& h) {
  const std::size_t Cin = mode == InputMode::MaskAppended ? 2 * C : C;
  const std::size_t H = h.hidden, K = h.kernel, D = h.model_dim ? h.model_dim : T;
  switch (kind) {
    case BackboneKind::Mlp:
      return {{"pe", {Cin, T}, ParamSpec::Small},
              {"W1", {Cin, H}, ParamSpec::FanIn, Cin},
              {"b1", {H}, ParamSpec::Zero},
              {"W2", {H, C}, ParamSpec::FanIn, H},
              {"b2", {C}, ParamSpec::Zero}};
    case BackboneKind::Conv:
      return {{"dw1", {Cin, K}, ParamSpec::FanIn, K},
              {"pw1", {Cin, H}, ParamSpec::FanIn, Cin},
              {"pb1", {H}, ParamSpec::Zero},
              {"dw2", {H, K}, ParamSpec::FanIn, K},
              {"pw2", {H, C}, ParamSpec::FanIn, H},
              {"pb2", {C}, ParamSpec::Zero}};
    case BackboneKind::Attn: {
      std::vector<ParamSpec> out{{"We", {T, D}, ParamSpec::FanIn, T}, {"be", {D}, ParamSpec::Zero}};
      if (mode == InputMode::MaskAppended) out.push_back({"wm", {D}, ParamSpec::Small});
      out.insert(out.end(), {{"pe", {C, D}, ParamSpec::Small},
                             {"ln_g", {D}, ParamSpec::One},
                             {"ln_b", {D}, ParamSpec::Zero},
                             {"Wq", {D, D}, ParamSpec::FanIn, D},
                             {"Wk", {D, D}, ParamSpec::FanIn, D},
                             {"Wv", {D, D}, ParamSpec::FanIn, D},
                             {"Wo", {D, T}, ParamSpec::FanIn, D},
                             {"bo", {T}, ParamSpec::Zero}});
      return out;
    }
  }
  return {};
}

}  // namespace detail

inline constexpr double kSmallInitScale = 0.02;

/// Deterministic initialization: fan-in scaled uniform U(-sqrt(3/fan_in), +sqrt(3/fan_in))
/// for weights, zeros for biases, small uniform for positional/mask embeddings.
inline PredictorParams init_params(BackboneKind kind, std::size_t channels, std::size_t samples, const Hyper& hyper,
                                   std::uint64_t seed, InputMode mode = InputMode::MaskAppended) {
  require(channels >= 2 && samples >= 1, "init_params: need C_H >= 2 and T >= 1", ErrorKind::Config);
  require(hyper.hidden >= 1, "init_params: hidden width must be >= 1", ErrorKind::Config);
  if (kind == BackboneKind::Conv)
    require(hyper.kernel >= 1 && hyper.kernel % 2 == 1, "init_params: conv kernel length must be odd",
            ErrorKind::Config);
  PredictorParams p;
  p.kind = kind;
  p.input_mode = mode;
  p.hyper = hyper;
  p.channels = channels;
  p.samples = samples;
  const auto specs = detail::param_layout(kind, mode, channels, samples, hyper);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    Tensor t(s.shape);
    CounterRng rng(hash_combine(seed, 0x9a7aULL, i));
    switch (s.init) {
      case detail::ParamSpec::FanIn: {
        const double a = std::sqrt(3.0 / static_cast<double>(s.fan_in));
        for (double& v : t.vec()) v = rng.uniform(-a, a);
        break;
      }
      case detail::ParamSpec::Small:
        for (double& v : t.vec()) v = rng.uniform(-kSmallInitScale, kSmallInitScale);
        break;
      case detail::ParamSpec::One: t.fill(1.0); break;
      case detail::ParamSpec::Zero: break;
    }
    p.names.push_back(s.name);
    p.tensors.push_back(std::move(t));
  }
  return p;
}

// ---- forward / backward ---------------------------------------------------

struct MlpCache {
  LinearCache l1, l2;
  Tensor pre_relu;
  std::size_t batch = 0;
};

struct ConvCache {
  DepthwiseCache d1, d2;
  PointwiseCache p1, p2;
  Tensor pre_relu;
};

struct AttnCache {
  LinearCache embed, out;
  LayerNormCache ln;
  AttentionCache attn;
  Tensor masks;
};

struct ForwardCache {
  BackboneKind kind = BackboneKind::Mlp;
  std::uint64_t version = 0;
  Shape param_signature;
  std::size_t batch = 0;
  std::variant<MlpCache, ConvCache, AttnCache> state;
};

struct PredictorOutput {
  Tensor estimate;  // [B, C_H, T]
  ForwardCache cache;

  /// Estimate of batch item `i` as a signal block.
  SignalBlock block(std::size_t i, double sample_rate = 1.0) const {
    const std::size_t C = estimate.dim(1), T = estimate.dim(2);
    std::vector<double> d(estimate.data().begin() + static_cast<std::ptrdiff_t>(i * C * T),
                          estimate.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * C * T));
    return SignalBlock(Tensor({C, T}, std::move(d)), sample_rate);
  }
};

namespace detail {

inline Shape signature(const PredictorParams& p) {
  return {static_cast<std::size_t>(p.kind), p.channels, p.samples, p.count()};
}

/// Context rows followed (for MaskAppended) by C_H constant mask rows.
inline Tensor assemble_input(const PredictorParams& p, const Tensor& contexts, const Tensor& masks) {
  const std::size_t B = contexts.dim(0), C = p.channels, T = p.samples;
  if (p.input_mode == InputMode::MaskedOnly) return contexts;
  Tensor x({B, 2 * C, T});
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(contexts.data().begin() + static_cast<std::ptrdiff_t>(b * C * T), C * T,
                x.data().begin() + static_cast<std::ptrdiff_t>(b * 2 * C * T));
    for (std::size_t c = 0; c < C; ++c)
      std::fill_n(x.data().begin() + static_cast<std::ptrdiff_t>((b * 2 * C + C + c) * T), T, masks.at(b, c));
  }
  return x;
}

inline PredictorOutput forward_mlp(const PredictorParams& p, Tensor x) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), T = x.dim(2), C = p.channels;
  const Tensor& pe = p.get("pe");
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < Cin * T; ++i) x[b * Cin * T + i] += pe[i];
  Tensor flat = transpose_last2(x).reshaped({B * T, Cin});
  auto [h, l1] = linear_forward(flat, p.get("W1"), p.get("b1"));
  Tensor pre = h;
  for (double& v : h.vec()) v = v > 0.0 ? v : 0.0;
  auto [o, l2] = linear_forward(h, p.get("W2"), p.get("b2"));
  PredictorOutput out;
  out.estimate = transpose_last2(o.reshaped({B, T, C}));
  out.cache.state = MlpCache{std::move(l1), std::move(l2), std::move(pre), B};
  return out;
}

inline ParamGrads backward_mlp(const PredictorParams& p, const MlpCache& c, const Tensor& dy) {
  const std::size_t B = c.batch, C = p.channels, T = p.samples, Cin = p.input_channels();
  Tensor d_out = transpose_last2(dy).reshaped({B * T, C});
  auto g2 = linear_backward(c.l2, d_out);
  auto g_relu = relu_backward(c.pre_relu, g2.input);
  auto g1 = linear_backward(c.l1, g_relu.input);
  Tensor dx = transpose_last2(g1.input.reshaped({B, T, Cin}));
  Tensor dpe({Cin, T});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < Cin * T; ++i) dpe[i] += dx[b * Cin * T + i];
  return {std::move(dpe), std::move(g1.params.at("W")), std::move(g1.params.at("b")), std::move(g2.params.at("W")),
          std::move(g2.params.at("b"))};
}

inline PredictorOutput forward_conv(const PredictorParams& p, const Tensor& x) {
  auto [h1, d1] = conv1d_depthwise_forward(x, p.get("dw1"));
  auto [h2, p1] = conv1d_pointwise_forward(h1, p.get("pw1"));
  Tensor pre = add_channel_bias(h2, p.get("pb1"));
  Tensor a = pre;
  for (double& v : a.vec()) v = v > 0.0 ? v : 0.0;
  auto [h4, d2] = conv1d_depthwise_forward(a, p.get("dw2"));
  auto [h5, p2] = conv1d_pointwise_forward(h4, p.get("pw2"));
  PredictorOutput out;
  out.estimate = add_channel_bias(h5, p.get("pb2"));
  out.cache.state = ConvCache{std::move(d1), std::move(d2), std::move(p1), std::move(p2), std::move(pre)};
  return out;
}

inline ParamGrads backward_conv(const PredictorParams&, const ConvCache& c, const Tensor& dy) {
  Tensor dpb2 = channel_bias_grad(dy);
  auto gp2 = conv1d_pointwise_backward(c.p2, dy);
  auto gd2 = conv1d_depthwise_backward(c.d2, gp2.input);
  auto gr = relu_backward(c.pre_relu, gd2.input);
  Tensor dpb1 = channel_bias_grad(gr.input);
  auto gp1 = conv1d_pointwise_backward(c.p1, gr.input);
  auto gd1 = conv1d_depthwise_backward(c.d1, gp1.input);
  return {std::move(gd1.params.at("k")), std::move(gp1.params.at("W")), std::move(dpb1),
          std::move(gd2.params.at("k")), std::move(gp2.params.at("W")), std::move(dpb2)};
}

inline PredictorOutput forward_attn(const PredictorParams& p, const Tensor& contexts, const Tensor& masks) {
  const std::size_t B = contexts.dim(0), C = p.channels, T = p.samples, D = p.model_dim();
  auto [e, embed] = linear_forward(contexts.reshaped({B * C, T}), p.get("We"), p.get("be"));
  const Tensor& pe = p.get("pe");
  const bool with_mask = p.input_mode == InputMode::MaskAppended;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      double* row = e.data().data() + (b * C + c) * D;
      for (std::size_t d = 0; d < D; ++d) row[d] += pe[c * D + d];
      if (with_mask) {
        const Tensor& wm = p.get("wm");
        const double m = masks.at(b, c);
        for (std::size_t d = 0; d < D; ++d) row[d] += m * wm[d];
      }
    }
  Tensor tokens = e.reshaped({B, C, D});
  auto [a, ln] = layernorm_forward(tokens, p.get("ln_g"), p.get("ln_b"));
  auto [att, attn] = attention_channels_forward(a, p.get("Wq"), p.get("Wk"), p.get("Wv"));
  add_inplace(att, tokens);
  auto [o, outc] = linear_forward(att.reshaped({B * C, D}), p.get("Wo"), p.get("bo"));
  PredictorOutput out;
  out.estimate = o.reshaped({B, C, T});
  out.cache.state = AttnCache{std::move(embed), std::move(outc), std::move(ln), std::move(attn), masks};
  return out;
}

inline ParamGrads backward_attn(const PredictorParams& p, const AttnCache& c, const Tensor& dy) {
  const std::size_t B = dy.dim(0), C = p.channels, T = p.samples, D = p.model_dim();
  auto go = linear_backward(c.out, dy.reshaped({B * C, T}));
  Tensor dh = go.input.reshaped({B, C, D});
  auto ga = attention_channels_backward(c.attn, dh);
  auto gl = layernorm_backward(c.ln, ga.input);
  Tensor de = dh;
  add_inplace(de, gl.input);
  Tensor dpe({C, D}), dwm({D});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t cc = 0; cc < C; ++cc) {
      const double m = c.masks.at(b, cc);
      for (std::size_t d = 0; d < D; ++d) {
        const double g = de[(b * C + cc) * D + d];
        dpe[cc * D + d] += g;
        dwm[d] += m * g;
      }
    }
  auto ge = linear_backward(c.embed, de.reshaped({B * C, D}));
  ParamGrads out{std::move(ge.params.at("W")), std::move(ge.params.at("b"))};
  if (p.input_mode == InputMode::MaskAppended) out.push_back(std::move(dwm));
  out.push_back(std::move(dpe));
  out.push_back(std::move(gl.params.at("gamma")));
  out.push_back(std::move(gl.params.at("beta")));
  out.push_back(std::move(ga.params.at("Wq")));
  out.push_back(std::move(ga.params.at("Wk")));
  out.push_back(std::move(ga.params.at("Wv")));
  out.push_back(std::move(go.params.at("W")));
  out.push_back(std::move(go.params.at("b")));
  return out;
}

}  // namespace detail

/// Batched forward. `contexts` is [B, C_H, T] (already zero outside the mask),
/// `masks` is [B, C_H] with 0/1 entries.
inline PredictorOutput forward(const PredictorParams& p, const Tensor& contexts, const Tensor& masks) {
  require_rank(contexts, 3, "forward contexts");
  require(contexts.dim(1) == p.channels && contexts.dim(2) == p.samples,
          "forward: context shape " + shape_str(contexts.shape()) + " does not match predictor [" +
              std::to_string(p.channels) + "," + std::to_string(p.samples) + "]");
  require_shape(masks, {contexts.dim(0), p.channels}, "forward masks");
  PredictorOutput out;
  switch (p.kind) {
    case BackboneKind::Mlp: out = detail::forward_mlp(p, detail::assemble_input(p, contexts, masks)); break;
    case BackboneKind::Conv: out = detail::forward_conv(p, detail::assemble_input(p, contexts, masks)); break;
    case BackboneKind::Attn: out = detail::forward_attn(p, contexts, masks); break;
  }
  out.cache.kind = p.kind;
  out.cache.version = p.version;
  out.cache.param_signature = detail::signature(p);
  out.cache.batch = contexts.dim(0);
  require(out.estimate.all_finite(), "forward: non-finite estimate", ErrorKind::Numeric);
  return out;
}

/// Single-context convenience overload.
inline PredictorOutput forward(const PredictorParams& p, const SignalBlock& context, const std::vector<double>& mask) {
  require(mask.size() == p.channels, "forward: mask length does not match C_H");
  Tensor ctx = context.tensor().reshaped({1, context.channels(), context.samples()});
  return forward(p, ctx, Tensor({1, p.channels}, mask));
}

/// Parameter gradients of sum(upstream * estimate).
inline ParamGrads backward(const PredictorParams& p, const ForwardCache& cache, const Tensor& upstream) {
  require(cache.kind == p.kind && cache.version == p.version && cache.param_signature == detail::signature(p),
          "backward: cache was produced by different or since-updated parameters", ErrorKind::Mismatch);
  require_shape(upstream, {cache.batch, p.channels, p.samples}, "backward upstream grad");
  ParamGrads g;
  switch (p.kind) {
    case BackboneKind::Mlp: g = detail::backward_mlp(p, std::get<MlpCache>(cache.state), upstream); break;
    case BackboneKind::Conv: g = detail::backward_conv(p, std::get<ConvCache>(cache.state), upstream); break;
    case BackboneKind::Attn: g = detail::backward_attn(p, std::get<AttnCache>(cache.state), upstream); break;
  }
  return g;
}

// ---- model artifact -------------------------------------------------------
//
// Text manifest of `key = value` lines, a `---` separator line, then a binary
// blob: every parameter tensor as little-endian f64 in manifest order, followed
// by the normalization means and stds (C_H f64 each).

inline constexpr int kModelFormatVersion = 1;

struct ModelArtifact {
  PredictorParams params;
  ChannelStats stats;
  std::vector<std::size_t> observed;
  GroupSchedule schedule;
  std::uint64_t montage_hash = 0;
  std::vector<std::pair<std::string, std::string>> config;  // resolved config echo

  friend bool operator==(const ModelArtifact&, const ModelArtifact&) = default;
};

namespace detail {

inline std::string join_indices(const std::vector<std::size_t>& v, char sep = ',') {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> split_indices(std::string_view s, char sep = ',') {
  std::vector<std::size_t> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    const auto tok = trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    require(ec == std::errc() && p == tok.data() + tok.size() && !tok.empty(), "bad index list '" + std::string(s) + "'",
            ErrorKind::Format);
    out.push_back(v);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

}  // namespace detail

inline void save_model(const ModelArtifact& m, const std::string& path) {
  const auto& p = m.params;
  std::ostringstream os;
  os << "CAFE-MODEL " << kModelFormatVersion << '\n';
  os << "backbone = " << backbone_name(p.kind) << '\n';
  os << "input_mode = " << input_mode_name(p.input_mode) << '\n';
  os << "channels = " << p.channels << '\n';
  os << "samples = " << p.samples << '\n';
  os << "hidden = " << p.hyper.hidden << '\n';
  os << "kernel = " << p.hyper.kernel << '\n';
  os << "model_dim = " << p.hyper.model_dim << '\n';
  os << "montage_hash = " << detail::hex64(m.montage_hash) << '\n';
  os << "observed = " << detail::join_indices(m.observed) << '\n';
  os << "order = " << order_kind_name(m.schedule.order) << '\n';
  os << "order_seed = " << m.schedule.random_seed << '\n';
  os << "splits = ";
  for (std::size_t i = 0; i < m.schedule.split_fractions.size(); ++i)
    os << (i ? "," : "") << m.schedule.split_fractions[i].str();
  os << '\n';
  os << "groups = ";
  for (std::size_t g = 0; g < m.schedule.groups.size(); ++g)
    os << (g ? ";" : "") << detail::join_indices(m.schedule.groups[g]);
  os << '\n';
  for (std::size_t i = 0; i < p.names.size(); ++i) {
    os << "param." << p.names[i] << " = ";
    for (std::size_t d = 0; d < p.tensors[i].rank(); ++d) os << (d ? "x" : "") << p.tensors[i].dim(d);
    os << '\n';
  }
  for (const auto& [k, v] : m.config) os << "config." << k << " = " << v << '\n';
  os << "---\n";
  std::string text = os.str();
  std::vector<unsigned char> bytes(text.begin(), text.end());
  for (const auto& t : p.tensors)
    for (double v : t.data()) detail::put_le<double>(bytes, v);
  require(m.stats.channels() == p.channels, "save_model: stats do not match channel count");
  for (double v : m.stats.mean) detail::put_le<double>(bytes, v);
  for (double v : m.stats.std) detail::put_le<double>(bytes, v);
  detail::write_file(path, bytes);
}

/// Loads an artifact. When `expected_montage_hash` or `expected_kind` is given,
/// a mismatch raises ErrorKind::Mismatch.
inline ModelArtifact load_model(const std::string& path, std::optional<std::uint64_t> expected_montage_hash = {},
                                std::optional<BackboneKind> expected_kind = {}) {
  const auto bytes = detail::read_file(path);
  const std::string_view all(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const auto sep = all.find("\n---\n");
  require(sep != std::string_view::npos, path + ": missing manifest separator", ErrorKind::Format);
  std::istringstream in{std::string(all.substr(0, sep + 1))};
  std::string line;
  std::getline(in, line);
  require(line == "CAFE-MODEL " + std::to_string(kModelFormatVersion),
          path + ": unsupported model header '" + line + "'", ErrorKind::Mismatch);

  std::map<std::string, std::string> kv;
  std::vector<std::pair<std::string, Shape>> param_shapes;
  ModelArtifact m;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    require(eq != std::string::npos, path + ": bad manifest line '" + line + "'", ErrorKind::Format);
    const auto key = trim(std::string_view(line).substr(0, eq));
    const auto val = trim(std::string_view(line).substr(eq + 1));
    if (key.rfind("param.", 0) == 0) {
      Shape s;
      for (auto d : detail::split_indices(val, 'x')) s.push_back(d);
      param_shapes.emplace_back(key.substr(6), s);
    } else if (key.rfind("config.", 0) == 0) {
      m.config.emplace_back(key.substr(7), val);
    } else {
      kv[key] = val;
    }
  }
  auto field = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    require(it != kv.end(), path + ": manifest lacks '" + k + "'", ErrorKind::Format);
    return it->second;
  };
  auto to_size = [&](const std::string& k) {
    const auto v = detail::split_indices(field(k));
    require(v.size() == 1, path + ": bad value for " + k, ErrorKind::Format);
    return v[0];
  };

  m.montage_hash = std::stoull(field("montage_hash"), nullptr, 16);
  if (expected_montage_hash && *expected_montage_hash != m.montage_hash)
    throw Error(ErrorKind::Mismatch, path + ": model was trained on montage " + detail::hex64(m.montage_hash) +
                                         " but data uses montage " + detail::hex64(*expected_montage_hash));
  const auto kind = parse_backbone(field("backbone"));
  if (expected_kind && *expected_kind != kind)
    throw Error(ErrorKind::Mismatch, path + ": artifact holds a '" + backbone_name(kind) + "' backbone, expected '" +
                                         backbone_name(*expected_kind) + "'");

  Hyper hyper{to_size("hidden"), to_size("kernel"), to_size("model_dim")};
  m.params = init_params(kind, to_size("channels"), to_size("samples"), hyper, 0, parse_input_mode(field("input_mode")));
  require(param_shapes.size() == m.params.names.size(), path + ": parameter list does not match backbone",
          ErrorKind::Mismatch);
  for (std::size_t i = 0; i < param_shapes.size(); ++i)
    require(param_shapes[i].first == m.params.names[i] && param_shapes[i].second == m.params.tensors[i].shape(),
            path + ": parameter '" + param_shapes[i].first + "' does not match backbone layout", ErrorKind::Mismatch);

  const std::size_t C = m.params.channels;
  const std::size_t expect = m.params.count() * 8 + 2 * C * 8;
  const std::size_t offset = sep + 5;
  require(bytes.size() - offset == expect, path + ": parameter blob has wrong size", ErrorKind::Format);
  const unsigned char* ptr = bytes.data() + offset;
  for (auto& t : m.params.tensors)
    for (double& v : t.vec()) {
      v = detail::get_le<double>(ptr);
      ptr += 8;
    }
  m.stats.mean.resize(C);
  m.stats.std.resize(C);
  for (double& v : m.stats.mean) v = detail::get_le<double>(ptr), ptr += 8;
  for (double& v : m.stats.std) v = detail::get_le<double>(ptr), ptr += 8;

  m.observed = detail::split_indices(field("observed"));
  m.schedule.order = parse_order_kind(field("order"));
  m.schedule.random_seed = std::stoull(field("order_seed"));
  const auto& splits = field("splits");
  if (!splits.empty()) {
    std::size_t start = 0;
    while (true) {
      const auto pos = splits.find(',', start);
      m.schedule.split_fractions.push_back(Fraction::parse(splits.substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
  }
  const auto& groups = field("groups");
  std::size_t start = 0;
  while (true) {
    const auto pos = groups.find(';', start);
    m.schedule.groups.push_back(detail::split_indices(groups.substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return m;
}

}  // namespace cafe
