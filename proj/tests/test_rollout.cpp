#include <random>

#include <gtest/gtest.h>

#include "cafe/rollout.hpp"
#include "test_util.hpp"

using namespace cafe;

namespace {

Hyper small_hyper() {
  Hyper h;
  h.hidden = 8;
  h.kernel = 3;
  h.model_dim = 5;
  return h;
}

// Layout with anchors {0, 3} over 7 channels and groups {1}, {2, 4}, {5, 6}.
struct Fixture {
  LayoutSpec layout{{0, 3}, 7};
  GroupSchedule schedule;
  Fixture() { schedule.groups = {{1}, {2, 4}, {5, 6}}; }
};

}  // namespace

TEST(Rollout, InitStatePlacesAnchorsAndZeros) {
  Fixture f;
  SignalBlock anchors(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), 10.0);
  const auto s = init_state(anchors, f.layout, f.schedule);
  EXPECT_EQ(s.step, 0u);
  EXPECT_EQ(s.visible, (std::vector<double>{1, 0, 0, 1, 0, 0, 0}));
  for (std::size_t c = 0; c < 7; ++c)
    for (std::size_t t = 0; t < 3; ++t) {
      const double want = c == 0 ? 1.0 + t : c == 3 ? 4.0 + t : 0.0;
      EXPECT_EQ(s.assembled.tensor().at(c, t), want);
    }
  EXPECT_THROW(init_state(SignalBlock(Tensor({3, 3}), 10.0), f.layout, f.schedule), Error);
}

TEST(Rollout, ContextHidesInvisibleRowsAndMergeWritesOnlyTheGroup) {
  Fixture f;
  std::mt19937_64 gen(1);
  const auto anchors = test::random_block(2, 4, gen);
  auto s = init_state(anchors, f.layout, f.schedule);
  // Garbage in a not-yet-visible row must not leak into the context.
  s.assembled.tensor().at(5, 2) = 99.0;
  EXPECT_EQ(make_context(s).tensor().at(5, 2), 0.0);

  const SignalBlock sevens(Tensor({7, 4}, 7.0), anchors.sample_rate());
  const auto s1 = merge_step(s, sevens);
  EXPECT_EQ(s1.step, 1u);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(s1.assembled.tensor().at(1, t), 7.0);
    EXPECT_EQ(s1.assembled.tensor().at(2, t), 0.0);
    EXPECT_EQ(s1.assembled.tensor().at(0, t), anchors.tensor().at(0, t));
    EXPECT_EQ(s1.assembled.tensor().at(3, t), anchors.tensor().at(1, t));
  }
  EXPECT_EQ(s1.visible, (std::vector<double>{1, 1, 0, 1, 0, 0, 0}));
  auto s3 = merge_step(merge_step(s1, sevens), sevens);
  EXPECT_THROW(make_context(s3), Error);
  EXPECT_THROW(merge_step(s3, sevens), Error);
}

TEST(Rollout, ScheduleValidation) {
  Fixture f;
  GroupSchedule overlap;
  overlap.groups = {{1, 2}, {2, 4, 5, 6}};
  GroupSchedule miss;
  miss.groups = {{1, 2}, {4, 5}};
  GroupSchedule anchor;
  anchor.groups = {{0, 1, 2, 4, 5, 6}};
  for (const auto* s : {&overlap, &miss, &anchor}) EXPECT_THROW(validate_schedule(f.layout, *s), Error);
  EXPECT_NO_THROW(validate_schedule(f.layout, f.schedule));
}

TEST(Rollout, VisibleMaskIsMonotone) {
  Fixture f;
  for (std::size_t g = 1; g <= f.schedule.depth(); ++g) {
    const auto a = visible_mask(f.layout, f.schedule, g), b = visible_mask(f.layout, f.schedule, g + 1);
    for (std::size_t c = 0; c < 7; ++c) EXPECT_LE(a[c], b[c]);
  }
  EXPECT_EQ(visible_mask(f.layout, f.schedule, 4), std::vector<double>(7, 1.0));
}

TEST(Rollout, BatchedRolloutMatchesStepwiseOracle) {
  Fixture f;
  std::mt19937_64 gen(2);
  for (auto kind : {BackboneKind::Mlp, BackboneKind::Conv, BackboneKind::Attn}) {
    const auto p = init_params(kind, 7, 6, small_hyper(), 3);
    const auto anchors = test::random_block(2, 6, gen);
    auto s = init_state(anchors, f.layout, f.schedule);
    while (s.step < f.schedule.depth()) {
      const auto ctx = make_context(s);
      s = merge_step(s, forward(p, ctx, s.visible).block(0, anchors.sample_rate()));
    }
    const auto out = run_inference(p, anchors, f.layout, f.schedule);
    EXPECT_EQ(out, s.assembled) << backbone_name(kind);
  }
}

TEST(Rollout, AnchorsSurviveBitExactly) {
  std::mt19937_64 gen(3);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t C = 6 + rep % 5;
    const auto layout = test::random_layout(C, 2 + rep % 3, gen);
    const auto montage = test::random_montage(C, gen);
    const auto sched =
        build_schedule(montage, layout, 2, {Fraction{1, 2}}, OrderKind::ProximalToDistal);
    const auto p = init_params(BackboneKind::Mlp, C, 8, small_hyper(), rep);
    const auto anchors = test::random_block(layout.observed().size(), 8, gen);
    const auto out = run_inference(p, anchors, layout, sched);
    for (std::size_t i = 0; i < layout.observed().size(); ++i)
      for (std::size_t t = 0; t < 8; ++t) EXPECT_EQ(out.tensor().at(layout.observed()[i], t), anchors.tensor().at(i, t));
  }
}

TEST(Rollout, OneshotEqualsSingleGroupRollout) {
  Fixture f;
  std::mt19937_64 gen(4);
  const auto p = init_params(BackboneKind::Conv, 7, 6, small_hyper(), 5);
  const auto anchors = test::random_block(2, 6, gen);
  EXPECT_EQ(run_oneshot(p, anchors, f.layout), run_inference(p, anchors, f.layout, oneshot_schedule(f.layout)));
  EXPECT_EQ(oneshot_schedule(f.layout).groups.front(), f.layout.missing());
}

TEST(Rollout, StepEstimateDependsOnlyOnVisibleRows) {
  // Rows of later groups, whatever they hold beforehand, never influence earlier steps.
  Fixture f;
  std::mt19937_64 gen(5);
  const auto p = init_params(BackboneKind::Attn, 7, 6, small_hyper(), 6);
  Tensor clean({1, 7, 6});
  const auto anchors = test::random_block(2, 6, gen);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t t = 0; t < 6; ++t) clean.at(0, f.layout.observed()[i], t) = anchors.tensor().at(i, t);
  Tensor dirty = clean;
  for (std::size_t c : f.layout.missing())
    for (std::size_t t = 0; t < 6; ++t) dirty.at(0, c, t) = 1e3 * (1.0 + static_cast<double>(c + t));
  std::vector<Tensor> est_clean, est_dirty;
  const Tensor a = rollout_batch(p, clean, f.layout, f.schedule, &est_clean);
  const Tensor b = rollout_batch(p, dirty, f.layout, f.schedule, &est_dirty);
  EXPECT_EQ(a, b);
  ASSERT_EQ(est_clean.size(), 3u);
  for (std::size_t g = 0; g < 3; ++g) EXPECT_EQ(est_clean[g], est_dirty[g]);
}

TEST(Rollout, BatchMatchesSingleSampleRollouts) {
  Fixture f;
  std::mt19937_64 gen(6);
  const auto p = init_params(BackboneKind::Mlp, 7, 5, small_hyper(), 7);
  std::vector<SignalBlock> anchors;
  Tensor batch({3, 7, 5});
  for (std::size_t b = 0; b < 3; ++b) {
    anchors.push_back(test::random_block(2, 5, gen));
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t t = 0; t < 5; ++t) batch.at(b, f.layout.observed()[i], t) = anchors[b].tensor().at(i, t);
  }
  const Tensor out = rollout_batch(p, batch, f.layout, f.schedule);
  for (std::size_t b = 0; b < 3; ++b) {
    const auto one = run_inference(p, anchors[b], f.layout, f.schedule);
    for (std::size_t i = 0; i < 35; ++i) EXPECT_NEAR(out[b * 35 + i], one.tensor()[i], 1e-12);
  }
}
