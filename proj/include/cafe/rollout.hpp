#pragma once

// Group-wise autoregressive rollout over a canonical montage.
//
// The assembled tensor starts with the anchors in canonical rows and zeros
// elsewhere. Step g feeds the predictor the assembled tensor masked to the
// visible set (anchors plus groups 1..g-1) and writes its estimate back into
// the rows of group g only.

#include <algorithm>
#include <memory>
#include <span>
#include <vector>

#include "cafe/error.hpp"
#include "cafe/montage.hpp"
#include "cafe/predictor.hpp"
#include "cafe/signal.hpp"

namespace cafe {

/// Throws unless the schedule groups form a disjoint cover of the layout's missing channels.
inline void validate_schedule(const LayoutSpec& layout, const GroupSchedule& schedule) {
  require(schedule.depth() >= 1, "schedule has no groups");
  std::vector<int> seen(layout.channels(), 0);
  for (const auto& g : schedule.groups) {
    require(!g.empty(), "schedule contains an empty group");
    for (std::size_t c : g) {
      require(c < layout.channels(), "schedule channel out of range");
      require(!layout.is_observed(c), "schedule targets observed channel " + std::to_string(c));
      require(++seen[c] == 1, "schedule groups overlap at channel " + std::to_string(c));
    }
  }
  for (std::size_t c : layout.missing()) require(seen[c] == 1, "schedule misses channel " + std::to_string(c));
}

/// Visibility mask for step `g` (1-based): anchors plus groups 1..g-1.
inline std::vector<double> visible_mask(const LayoutSpec& layout, const GroupSchedule& schedule, std::size_t g) {
  require(g >= 1 && g <= schedule.depth() + 1, "visible_mask: step out of range");
  std::vector<double> m(layout.channels(), 0.0);
  for (std::size_t c : layout.observed()) m[c] = 1.0;
  for (std::size_t k = 0; k + 1 < g; ++k)
    for (std::size_t c : schedule.groups[k]) m[c] = 1.0;
  return m;
}

/// Single-group schedule containing every missing channel (the one-shot baseline).
inline GroupSchedule oneshot_schedule(const LayoutSpec& layout) {
  GroupSchedule s;
  s.groups.push_back(layout.missing());
  return s;
}

namespace detail {

inline void mask_rows(std::span<double> block, std::span<const double> mask, std::size_t T) {
  for (std::size_t c = 0; c < mask.size(); ++c)
    if (mask[c] == 0.0) std::fill_n(block.begin() + static_cast<std::ptrdiff_t>(c * T), T, 0.0);
}

inline void copy_rows(std::span<double> dst, std::span<const double> src, std::span<const std::size_t> rows,
                      std::size_t T) {
  for (std::size_t c : rows)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(c * T), T, dst.begin() + static_cast<std::ptrdiff_t>(c * T));
}

}  // namespace detail

struct RolloutState {
  SignalBlock assembled;            // current full-montage tensor
  std::size_t step = 0;             // groups merged so far
  std::vector<double> visible;      // mask for the next step
  std::shared_ptr<const GroupSchedule> schedule;
  std::vector<std::size_t> observed;
  SignalBlock anchors;              // C_L x T, rows in `observed` order
};

/// Places the anchor rows into canonical order and zero-fills the rest.
inline SignalBlock assemble_anchors(const SignalBlock& anchors, const LayoutSpec& layout) {
  require(anchors.channels() == layout.observed().size(),
          "anchor block has " + std::to_string(anchors.channels()) + " rows but layout observes " +
              std::to_string(layout.observed().size()));
  SignalBlock full(layout.channels(), anchors.samples(), anchors.sample_rate());
  for (std::size_t i = 0; i < layout.observed().size(); ++i)
    std::copy_n(anchors.row(i).begin(), anchors.samples(), full.row(layout.observed()[i]).begin());
  return full;
}

inline RolloutState init_state(const SignalBlock& anchors, const LayoutSpec& layout, const GroupSchedule& schedule) {
  validate_schedule(layout, schedule);
  RolloutState s;
  s.assembled = assemble_anchors(anchors, layout);
  s.schedule = std::make_shared<const GroupSchedule>(schedule);
  s.observed = layout.observed();
  s.anchors = anchors;
  s.visible = std::vector<double>(layout.channels(), 0.0);
  for (std::size_t c : layout.observed()) s.visible[c] = 1.0;
  return s;
}

/// Assembled tensor with every invisible row zeroed.
inline SignalBlock make_context(const RolloutState& s) {
  require(s.step < s.schedule->depth(), "make_context: rollout already complete");
  SignalBlock ctx = s.assembled;
  detail::mask_rows(ctx.tensor().data(), s.visible, ctx.samples());
  return ctx;
}

/// Writes the estimate into the rows of the next group; anchors and all other rows are kept.
inline RolloutState merge_step(const RolloutState& s, const SignalBlock& estimate) {
  require(s.step < s.schedule->depth(), "merge_step: rollout already complete");
  require(estimate.channels() == s.assembled.channels() && estimate.samples() == s.assembled.samples(),
          "merge_step: estimate shape does not match the montage");
  RolloutState next = s;
  const auto& group = s.schedule->groups[s.step];
  detail::copy_rows(next.assembled.tensor().data(), estimate.tensor().data(), group, estimate.samples());
  for (std::size_t i = 0; i < s.observed.size(); ++i)
    std::copy_n(s.anchors.row(i).begin(), s.anchors.samples(), next.assembled.row(s.observed[i]).begin());
  for (std::size_t c : group) next.visible[c] = 1.0;
  ++next.step;
  return next;
}

/// Batched rollout on assembled tensors [B, C_H, T]; returns the final assembled tensors.
/// When `step_estimates` is non-null it receives the raw predictor output of every step.
inline Tensor rollout_batch(const PredictorParams& params, Tensor assembled, const LayoutSpec& layout,
                            const GroupSchedule& schedule, std::vector<Tensor>* step_estimates = nullptr) {
  validate_schedule(layout, schedule);
  require_rank(assembled, 3, "rollout_batch");
  const std::size_t B = assembled.dim(0), C = assembled.dim(1), T = assembled.dim(2);
  require(C == layout.channels(), "rollout_batch: channel count does not match layout");
  for (std::size_t g = 1; g <= schedule.depth(); ++g) {
    const auto mask = visible_mask(layout, schedule, g);
    Tensor ctx = assembled;
    Tensor masks({B, C});
    for (std::size_t b = 0; b < B; ++b) {
      detail::mask_rows(ctx.data().subspan(b * C * T, C * T), mask, T);
      std::copy(mask.begin(), mask.end(), masks.data().begin() + static_cast<std::ptrdiff_t>(b * C));
    }
    auto out = forward(params, ctx, masks);
    for (std::size_t b = 0; b < B; ++b)
      detail::copy_rows(assembled.data().subspan(b * C * T, C * T), out.estimate.data().subspan(b * C * T, C * T),
                        schedule.groups[g - 1], T);
    if (step_estimates) step_estimates->push_back(std::move(out.estimate));
  }
  return assembled;
}

/// Full G-step inference rollout from the anchors alone. Anchor rows of the
/// result are bit-identical to the input.
inline SignalBlock run_inference(const PredictorParams& params, const SignalBlock& anchors, const LayoutSpec& layout,
                                 const GroupSchedule& schedule) {
  const SignalBlock init = assemble_anchors(anchors, layout);
  Tensor batch = init.tensor().reshaped({1, init.channels(), init.samples()});
  Tensor out = rollout_batch(params, std::move(batch), layout, schedule);
  return SignalBlock(out.reshaped({init.channels(), init.samples()}), anchors.sample_rate());
}

/// One forward on the anchor-only context, all missing channels merged at once.
inline SignalBlock run_oneshot(const PredictorParams& params, const SignalBlock& anchors, const LayoutSpec& layout) {
  return run_inference(params, anchors, layout, oneshot_schedule(layout));
}

}  // namespace cafe
