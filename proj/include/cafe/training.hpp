#pragma once

// Next-group supervised training: teacher forcing, epoch-cached scheduled
// sampling and pure-rollout contexts, SGD/Adam, and the epoch loop.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cafe/error.hpp"
#include "cafe/metrics.hpp"
#include "cafe/montage.hpp"
#include "cafe/predictor.hpp"
#include "cafe/rng.hpp"
#include "cafe/rollout.hpp"
#include "cafe/signal.hpp"

namespace cafe {

enum class Scheme { TeacherForcing, ScheduledSampling, PureRollout };
enum class OptimizerKind { Sgd, Adam };

inline const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::TeacherForcing: return "tf";
    case Scheme::ScheduledSampling: return "ss";
    case Scheme::PureRollout: return "rollout";
  }
  return "?";
}

inline Scheme parse_scheme(std::string_view s) {
  if (s == "tf" || s == "teacher_forcing") return Scheme::TeacherForcing;
  if (s == "ss" || s == "scheduled_sampling") return Scheme::ScheduledSampling;
  if (s == "rollout" || s == "pure_rollout") return Scheme::PureRollout;
  throw Error(ErrorKind::Config, "unknown scheme '" + std::string(s) + "'");
}

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw Error(ErrorKind::Config, "unknown optimizer '" + std::string(s) + "'");
}

struct TrainConfig {
  std::size_t G = 3;
  std::vector<Fraction> split_fractions{{1, 6}, {1, 2}};
  OrderKind order = OrderKind::ProximalToDistal;
  double pi = 0.95;
  /// Linear per-epoch decrease of pi (0 keeps it constant).
  double pi_decay = 0.0;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  Scheme scheme = Scheme::ScheduledSampling;
  InputMode input_mode = InputMode::MaskAppended;
  BackboneKind backbone = BackboneKind::Conv;
  Hyper hyper;

  void validate() const {
    require(G >= 1, "train: G must be >= 1", ErrorKind::Config);
    require(split_fractions.size() + 1 == G, "train: need G-1 split fractions", ErrorKind::Config);
    validate_fractions(split_fractions);
    require(pi >= 0.0 && pi <= 1.0, "train: pi must lie in [0,1]", ErrorKind::Config);
    require(pi_decay >= 0.0, "train: pi_decay must be >= 0", ErrorKind::Config);
    require(epochs >= 1 && batch_size >= 1, "train: epochs and batch size must be positive", ErrorKind::Config);
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "train: learning rate must be positive",
            ErrorKind::Config);
  }

  double pi_at(std::size_t epoch) const { return std::max(0.0, pi - pi_decay * static_cast<double>(epoch)); }

  std::vector<std::pair<std::string, std::string>> echo() const {
    std::string splits;
    for (std::size_t i = 0; i < split_fractions.size(); ++i) splits += (i ? "," : "") + split_fractions[i].str();
    return {{"G", std::to_string(G)},
            {"splits", splits},
            {"order", order_kind_name(order)},
            {"pi", format_double(pi)},
            {"pi_decay", format_double(pi_decay)},
            {"epochs", std::to_string(epochs)},
            {"batch_size", std::to_string(batch_size)},
            {"learning_rate", format_double(learning_rate)},
            {"optimizer", optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
            {"seed", std::to_string(seed)},
            {"scheme", scheme_name(scheme)},
            {"input_mode", input_mode_name(input_mode)},
            {"backbone", backbone_name(backbone)},
            {"hidden", std::to_string(hyper.hidden)},
            {"kernel", std::to_string(hyper.kernel)},
            {"model_dim", std::to_string(hyper.model_dim)}};
  }
};

// ---- optimizers -----------------------------------------------------------

inline void check_grads(const PredictorParams& p, const ParamGrads& g) {
  require(g.size() == p.tensors.size(), "optimizer: gradient count does not match parameters");
  for (std::size_t i = 0; i < g.size(); ++i)
    require(g[i].shape() == p.tensors[i].shape(), "optimizer: gradient shape mismatch for '" + p.names[i] + "'");
}

inline void sgd_step(PredictorParams& p, const ParamGrads& g, double lr) {
  check_grads(p, g);
  for (std::size_t i = 0; i < g.size(); ++i) add_inplace(p.tensors[i], g[i], -lr);
  ++p.version;
}

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t t = 0;
  std::vector<Tensor> m, v;
};

inline void adam_step(PredictorParams& p, const ParamGrads& g, AdamState& s, double lr) {
  check_grads(p, g);
  if (s.m.empty()) {
    s.m = zero_grads(p);
    s.v = zero_grads(p);
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto& w = p.tensors[i];
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * g[i][j];
      v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * g[i][j] * g[i][j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + s.eps);
    }
  }
  ++p.version;
}

// ---- contexts ---------------------------------------------------------------

/// Predicted missing-group rows from a pi=0 rollout of a frozen snapshot:
/// entries[sample][k] is |U_k| x T.
struct EpochCache {
  std::vector<std::vector<Tensor>> entries;
  std::int64_t epoch_tag = -1;
  std::uint64_t snapshot_hash = 0;

  bool empty() const noexcept { return entries.empty(); }
};

inline std::uint64_t params_hash(const PredictorParams& p) {
  std::uint64_t h = fnv1a("params", 6);
  for (const auto& t : p.tensors) h = fnv1a(t.data().data(), t.size() * sizeof(double), h);
  return h;
}

/// Context for step g (1-based) whose history group k is ground truth when
/// use_truth[k] is set and the cached prediction otherwise. Rows outside the
/// visible set are zero. `sample` is the full HD tensor [C_H, T].
inline Tensor build_mixed_context(const Tensor& sample, const LayoutSpec& layout, const GroupSchedule& schedule,
                                  std::size_t g, const std::vector<Tensor>* cached,
                                  const std::vector<bool>& use_truth) {
  require(g >= 1 && g <= schedule.depth(), "context: step out of range");
  require(use_truth.size() + 1 >= g, "context: need one draw per history group");
  const std::size_t T = sample.dim(1);
  Tensor ctx(sample.shape());
  for (std::size_t c : layout.observed())
    std::copy_n(sample.data().begin() + static_cast<std::ptrdiff_t>(c * T), T,
                ctx.data().begin() + static_cast<std::ptrdiff_t>(c * T));
  for (std::size_t k = 0; k + 1 < g; ++k) {
    const auto& group = schedule.groups[k];
    if (use_truth[k]) {
      detail::copy_rows(ctx.data(), sample.data(), group, T);
    } else {
      require(cached != nullptr && cached->size() > k, "context: missing cache entry for group " + std::to_string(k + 1));
      const Tensor& rows = (*cached)[k];
      require(rows.dim(0) == group.size() && rows.dim(1) == T, "context: cache entry shape does not match its group");
      for (std::size_t i = 0; i < group.size(); ++i)
        std::copy_n(rows.data().begin() + static_cast<std::ptrdiff_t>(i * T), T,
                    ctx.data().begin() + static_cast<std::ptrdiff_t>(group[i] * T));
    }
  }
  return ctx;
}

/// Teacher-forcing context: anchors plus ground-truth groups 1..g-1.
inline Tensor build_tf_context(const Tensor& sample, const LayoutSpec& layout, const GroupSchedule& schedule,
                               std::size_t g) {
  return build_mixed_context(sample, layout, schedule, g, nullptr, std::vector<bool>(g > 0 ? g - 1 : 0, true));
}

/// Scheduled-sampling context with explicit draws z_k (true = ground truth).
inline Tensor build_ss_context(const Tensor& sample, const LayoutSpec& layout, const GroupSchedule& schedule,
                               std::size_t g, const std::vector<Tensor>& cached, const std::vector<bool>& z) {
  return build_mixed_context(sample, layout, schedule, g, &cached, z);
}

/// Bernoulli(pi) draw for (sample, epoch, history group), independent of batching.
inline bool draw_truth(std::uint64_t seed, std::size_t sample, std::size_t epoch, std::size_t group, double pi) {
  if (pi >= 1.0) return true;
  if (pi <= 0.0) return false;
  CounterRng rng(hash_combine(seed, 0x55ULL, sample, epoch, group));
  return rng.bernoulli(pi);
}

/// pi=0 rollout of the frozen snapshot on every sample; stores predicted group rows.
inline EpochCache refresh_cache(const PredictorParams& snapshot, const std::vector<Tensor>& samples,
                                const LayoutSpec& layout, const GroupSchedule& schedule, std::int64_t epoch_tag,
                                std::size_t chunk = 64) {
  EpochCache cache;
  cache.epoch_tag = epoch_tag;
  cache.snapshot_hash = params_hash(snapshot);
  if (samples.empty()) return cache;
  const std::size_t C = samples[0].dim(0), T = samples[0].dim(1);
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t n = std::min(chunk, samples.size() - start);
    Tensor init({n, C, T});
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c : layout.observed())
        std::copy_n(samples[start + b].data().begin() + static_cast<std::ptrdiff_t>(c * T), T,
                    init.data().begin() + static_cast<std::ptrdiff_t>((b * C + c) * T));
    const Tensor out = rollout_batch(snapshot, std::move(init), layout, schedule);
    for (std::size_t b = 0; b < n; ++b) {
      std::vector<Tensor> groups;
      for (const auto& group : schedule.groups) {
        Tensor rows({group.size(), T});
        for (std::size_t i = 0; i < group.size(); ++i)
          std::copy_n(out.data().begin() + static_cast<std::ptrdiff_t>((b * C + group[i]) * T), T,
                      rows.data().begin() + static_cast<std::ptrdiff_t>(i * T));
        groups.push_back(std::move(rows));
      }
      cache.entries.push_back(std::move(groups));
    }
  }
  return cache;
}

// ---- loss over stacked step contexts ------------------------------------------

/// All per-step contexts of a batch stacked along the batch axis.
struct StepBatch {
  Tensor contexts;                  // [B*G, C_H, T]
  Tensor masks;                     // [B*G, C_H]
  std::vector<std::size_t> sample;  // index into the sample list, per stacked item
  std::vector<std::size_t> step;    // 1-based step, per stacked item
  std::size_t n_samples = 0;        // B
};

/// Builds the stacked contexts for `indices`. `truth(sample, k)` decides whether
/// history group k (0-based) comes from ground truth or from `cache`.
inline StepBatch build_step_batch(const std::vector<Tensor>& samples, const std::vector<std::size_t>& indices,
                                  const LayoutSpec& layout, const GroupSchedule& schedule, const EpochCache* cache,
                                  const std::function<bool(std::size_t, std::size_t)>& truth) {
  const std::size_t G = schedule.depth(), C = layout.channels(), T = samples.at(indices.at(0)).dim(1);
  StepBatch sb;
  sb.n_samples = indices.size();
  sb.contexts = Tensor({indices.size() * G, C, T});
  sb.masks = Tensor({indices.size() * G, C});
  std::size_t item = 0;
  for (std::size_t idx : indices) {
    std::vector<bool> z(G > 0 ? G - 1 : 0);
    for (std::size_t k = 0; k + 1 < G; ++k) z[k] = truth(idx, k);
    const std::vector<Tensor>* cached = cache && !cache->empty() ? &cache->entries.at(idx) : nullptr;
    for (std::size_t g = 1; g <= G; ++g, ++item) {
      const Tensor ctx = build_mixed_context(samples[idx], layout, schedule, g, cached, z);
      std::copy(ctx.data().begin(), ctx.data().end(), sb.contexts.data().begin() + static_cast<std::ptrdiff_t>(item * C * T));
      const auto mask = visible_mask(layout, schedule, g);
      std::copy(mask.begin(), mask.end(), sb.masks.data().begin() + static_cast<std::ptrdiff_t>(item * C));
      sb.sample.push_back(idx);
      sb.step.push_back(g);
    }
  }
  return sb;
}

struct BatchLoss {
  double total = 0.0;               // mean over samples of the summed per-step losses
  std::vector<double> per_step;     // mean over samples, per step
};

/// Per-step masked MSE on the target group only, summed over steps and averaged
/// over samples. When `grads` is non-null it receives d total / d params.
inline BatchLoss step_batch_loss(const PredictorParams& params, const StepBatch& sb, const std::vector<Tensor>& samples,
                                 const GroupSchedule& schedule, ParamGrads* grads = nullptr) {
  const std::size_t C = sb.contexts.dim(1), T = sb.contexts.dim(2), items = sb.contexts.dim(0);
  auto out = forward(params, sb.contexts, sb.masks);
  BatchLoss loss;
  loss.per_step.assign(schedule.depth(), 0.0);
  Tensor upstream({items, C, T});
  const double inv_b = 1.0 / static_cast<double>(sb.n_samples);
  for (std::size_t i = 0; i < items; ++i) {
    const auto& group = schedule.groups[sb.step[i] - 1];
    const double norm = 1.0 / static_cast<double>(group.size() * T);
    const Tensor& target = samples[sb.sample[i]];
    double l = 0.0;
    for (std::size_t c : group)
      for (std::size_t t = 0; t < T; ++t) {
        const double e = out.estimate[(i * C + c) * T + t] - target[c * T + t];
        l += e * e * norm;
        upstream[(i * C + c) * T + t] = 2.0 * e * norm * inv_b;
      }
    loss.per_step[sb.step[i] - 1] += l * inv_b;
  }
  for (double l : loss.per_step) loss.total += l;
  if (grads) *grads = backward(params, out.cache, upstream);
  return loss;
}

// ---- epoch loop -----------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::vector<double> step_loss;
  std::optional<double> val_nmse;
};

struct Trainer {
  PredictorParams params;
  AdamState adam;
  TrainConfig config;
  LayoutSpec layout;
  GroupSchedule schedule;
  std::vector<Tensor> samples;  // normalized HD training samples [C_H, T]
  EpochCache cache;
  std::size_t epoch = 0;

  Trainer(PredictorParams p, TrainConfig cfg, LayoutSpec lay, GroupSchedule sched, std::vector<Tensor> data)
      : params(std::move(p)), config(std::move(cfg)), layout(std::move(lay)), schedule(std::move(sched)),
        samples(std::move(data)) {
    validate_schedule(layout, schedule);
    require(!samples.empty(), "train: empty training set", ErrorKind::Config);
  }

  /// Whether history group k of `sample` uses ground truth in the current epoch.
  bool truth(std::size_t sample, std::size_t k) const {
    if (epoch == 0 || config.scheme == Scheme::TeacherForcing || cache.empty()) return true;
    if (config.scheme == Scheme::PureRollout) return false;
    return draw_truth(config.seed, sample, epoch, k, config.pi_at(epoch));
  }

  /// One pass over the data: contexts for all steps are built up front from the
  /// fixed cache, one forward/backward per batch, one optimizer update per batch.
  EpochLog train_epoch() {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    CounterRng rng(hash_combine(config.seed, 0xba7cULL, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    EpochLog log;
    log.epoch = epoch;
    log.step_loss.assign(schedule.depth(), 0.0);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + config.batch_size)));
      const auto sb = build_step_batch(samples, idx, layout, schedule, &cache,
                                       [this](std::size_t s, std::size_t k) { return truth(s, k); });
      ParamGrads grads;
      const auto loss = step_batch_loss(params, sb, samples, schedule, &grads);
      if (!std::isfinite(loss.total))
        throw Error(ErrorKind::Numeric, "training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                                            ", batch " + std::to_string(batches) + " (lr " +
                                            format_double(config.learning_rate) + ")");
      if (config.optimizer == OptimizerKind::Adam)
        adam_step(params, grads, adam, config.learning_rate);
      else
        sgd_step(params, grads, config.learning_rate);
      for (std::size_t g = 0; g < loss.per_step.size(); ++g) log.step_loss[g] += loss.per_step[g];
      log.loss += loss.total;
      ++batches;
    }
    for (double& l : log.step_loss) l /= static_cast<double>(batches);
    log.loss /= static_cast<double>(batches);

    if (config.scheme != Scheme::TeacherForcing)
      cache = refresh_cache(params, samples, layout, schedule, static_cast<std::int64_t>(epoch));
    ++epoch;
    return log;
  }
};

inline std::vector<Tensor> to_tensors(const std::vector<SignalBlock>& blocks, const ChannelStats& stats) {
  std::vector<Tensor> out;
  for (const auto& b : blocks) out.push_back(apply_normalize(b, stats).tensor());
  return out;
}

/// Reconstruction in original units. Anchors are normalized with their own
/// channel stats, rolled out, denormalized, and the raw anchor rows are copied
/// back so they match the input bit-for-bit.
inline SignalBlock reconstruct(const ModelArtifact& model, const LayoutSpec& layout, const SignalBlock& anchors,
                               bool oneshot = false) {
  const auto anchor_stats = model.stats.select(layout.observed());
  const SignalBlock norm = apply_normalize(anchors, anchor_stats);
  const SignalBlock est = oneshot ? run_oneshot(model.params, norm, layout)
                                  : run_inference(model.params, norm, layout, model.schedule);
  SignalBlock out = apply_denormalize(est, model.stats);
  for (std::size_t i = 0; i < layout.observed().size(); ++i)
    std::copy_n(anchors.row(i).begin(), anchors.samples(), out.row(layout.observed()[i]).begin());
  return out;
}

/// Batched variant of `reconstruct` over many anchor blocks.
inline std::vector<SignalBlock> reconstruct_many(const ModelArtifact& model, const LayoutSpec& layout,
                                                 const std::vector<SignalBlock>& anchors, bool oneshot = false,
                                                 std::size_t chunk = 64) {
  std::vector<SignalBlock> out;
  if (anchors.empty()) return out;
  const auto anchor_stats = model.stats.select(layout.observed());
  const GroupSchedule sched = oneshot ? oneshot_schedule(layout) : model.schedule;
  const std::size_t C = layout.channels(), T = anchors[0].samples();
  for (std::size_t start = 0; start < anchors.size(); start += chunk) {
    const std::size_t n = std::min(chunk, anchors.size() - start);
    Tensor init({n, C, T});
    for (std::size_t b = 0; b < n; ++b) {
      const SignalBlock full = assemble_anchors(apply_normalize(anchors[start + b], anchor_stats), layout);
      std::copy(full.tensor().data().begin(), full.tensor().data().end(),
                init.data().begin() + static_cast<std::ptrdiff_t>(b * C * T));
    }
    const Tensor est = rollout_batch(model.params, std::move(init), layout, sched);
    for (std::size_t b = 0; b < n; ++b) {
      std::vector<double> d(est.data().begin() + static_cast<std::ptrdiff_t>(b * C * T),
                            est.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * C * T));
      SignalBlock blk = apply_denormalize(SignalBlock(Tensor({C, T}, std::move(d)), anchors[start + b].sample_rate()),
                                          model.stats);
      for (std::size_t i = 0; i < layout.observed().size(); ++i)
        std::copy_n(anchors[start + b].row(i).begin(), T, blk.row(layout.observed()[i]).begin());
      out.push_back(std::move(blk));
    }
  }
  return out;
}

inline std::vector<SignalBlock> anchors_of(const std::vector<SignalBlock>& blocks, const LayoutSpec& layout) {
  std::vector<SignalBlock> out;
  for (const auto& b : blocks) out.push_back(b.select_rows(layout.observed()));
  return out;
}

struct FitResult {
  ModelArtifact model;
  std::vector<EpochLog> log;
};

/// Full training run. Epoch 0 is pure teacher forcing (no cache exists yet);
/// afterwards the configured scheme applies and the cache is refreshed after
/// every epoch for scheduled sampling and pure rollout.
inline FitResult fit(const std::vector<SignalBlock>& train, const std::vector<SignalBlock>& val, const Montage& montage,
                     const LayoutSpec& layout, const TrainConfig& cfg,
                     const std::optional<GroupSchedule>& schedule_override = std::nullopt) {
  cfg.validate();
  require(!train.empty(), "fit: empty training set", ErrorKind::Config);
  const GroupSchedule schedule =
      schedule_override ? *schedule_override
                        : build_schedule(montage, layout, cfg.G, cfg.split_fractions, cfg.order, cfg.seed);
  const ChannelStats stats = fit_stats(train);
  auto params = init_params(cfg.backbone, montage.size(), train.front().samples(), cfg.hyper, cfg.seed, cfg.input_mode);
  Trainer trainer(std::move(params), cfg, layout, schedule, to_tensors(train, stats));

  FitResult result;
  result.model.stats = stats;
  result.model.observed = layout.observed();
  result.model.schedule = schedule;
  result.model.montage_hash = montage.hash();
  result.model.config = cfg.echo();
  const auto val_anchors = anchors_of(val, layout);
  const auto missing = layout.missing();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    auto log = trainer.train_epoch();
    if (!val.empty()) {
      result.model.params = trainer.params;
      log.val_nmse = evaluate(reconstruct_many(result.model, layout, val_anchors), val, missing).nmse;
    }
    result.log.push_back(std::move(log));
  }
  result.model.params = std::move(trainer.params);
  return result;
}

/// CSV: one row per epoch, `epoch,loss,loss_g1..loss_gG,val_nmse`.
inline std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  const std::size_t G = log.empty() ? 0 : log.front().step_loss.size();
  os << "epoch,loss";
  for (std::size_t g = 1; g <= G; ++g) os << ",loss_g" << g;
  os << ",val_nmse\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << fmt_metric(e.loss);
    for (double l : e.step_loss) os << ',' << fmt_metric(l);
    os << ',' << (e.val_nmse ? fmt_metric(*e.val_nmse) : std::string()) << '\n';
  }
  return os.str();
}

}  // namespace cafe
