#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "cafe/metrics.hpp"
#include "test_util.hpp"

using namespace cafe;

namespace {

SignalBlock row_block(std::vector<double> v) {
  const std::size_t T = v.size();
  return SignalBlock(Tensor({1, T}, std::move(v)), 1.0);
}

// Direct O(n^2) one-sided power spectrogram with the periodic Hann window.
std::vector<std::vector<double>> naive_spectrogram(const std::vector<double>& x, std::size_t win, std::size_t hop) {
  std::vector<std::vector<double>> out;
  for (std::size_t start = 0; start + win <= x.size(); start += hop) {
    std::vector<double> frame(win / 2 + 1);
    for (std::size_t k = 0; k <= win / 2; ++k) {
      std::complex<double> s = 0.0;
      for (std::size_t n = 0; n < win; ++n) {
        const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * double(n) / double(win)));
        s += x[start + n] * w * std::exp(std::complex<double>(0.0, -2.0 * std::numbers::pi * double(k * n) / double(win)));
      }
      frame[k] = std::norm(s);
    }
    out.push_back(frame);
  }
  return out;
}

}  // namespace

TEST(Nmse, HandExampleAndPooling) {
  EXPECT_DOUBLE_EQ(nmse(row_block({1, 0}), row_block({1, 1}), {0}), 0.5);
  EXPECT_EQ(nmse(row_block({1, 1}), row_block({1, 1}), {0}), 0.0);
  // Pooled energies: channel 0 error 1 / energy 1, channel 1 error 0 / energy 9.
  SignalBlock p(Tensor({2, 1}, {0.0, 3.0}), 1.0), t(Tensor({2, 1}, {1.0, 3.0}), 1.0);
  EXPECT_DOUBLE_EQ(nmse(p, t, {0, 1}), 0.1);
  EXPECT_DOUBLE_EQ(nmse_per_channel_mean(p, t, {0, 1}), 0.5);
  EXPECT_THROW(nmse(row_block({1}), row_block({0}), {0}), Error);
  EXPECT_THROW(nmse(row_block({1}), row_block({1}), {}), Error);
}

TEST(Snr, HandValuesAndCap) {
  EXPECT_NEAR(snr_db(row_block({1, 0}), row_block({1, 1}), {0}), 10.0 * std::log10(2.0), 1e-12);
  EXPECT_NEAR(snr_db(row_block({1, 0}), row_block({1, 1}), {0}), 3.0103, 1e-4);
  EXPECT_EQ(snr_db(row_block({1, 1}), row_block({1, 1}), {0}), kSnrCapDb);
  EXPECT_EQ(snr_db(row_block({1, 1 + 1e-15}), row_block({1, 1}), {0}), kSnrCapDb);
  std::mt19937_64 gen(1);
  for (int rep = 0; rep < 50; ++rep) {
    const auto a = test::random_block(3, 20, gen), b = test::random_block(3, 20, gen);
    EXPECT_NEAR(snr_db(a, b, {0, 1, 2}), -10.0 * std::log10(nmse(a, b, {0, 1, 2})), 1e-9);
  }
}

TEST(Pcc, SignsOffsetsAndDegenerateChannels) {
  const std::vector<double> x{1, 2, 4, 3, 5};
  std::vector<double> y, z, w;
  for (double v : x) y.push_back(3.0 * v + 10.0), z.push_back(-0.5 * v), w.push_back(2.0);
  EXPECT_NEAR(pcc(row_block(y), row_block(x), {0}), 1.0, 1e-12);
  EXPECT_NEAR(pcc(row_block(z), row_block(x), {0}), -1.0, 1e-12);
  std::size_t degenerate = 0;
  EXPECT_EQ(pcc(row_block(w), row_block(x), {0}, &degenerate), 0.0);
  EXPECT_EQ(degenerate, 1u);
  // Per-channel average: one perfect channel and one anti-correlated channel.
  SignalBlock p(Tensor({2, 3}, {1, 2, 3, 3, 2, 1}), 1.0), t(Tensor({2, 3}, {1, 2, 3, 1, 2, 3}), 1.0);
  EXPECT_NEAR(pcc(p, t, {0, 1}), 0.0, 1e-12);
  EXPECT_NEAR(pcc(p, t, {0}), 1.0, 1e-12);
}

TEST(Spectrogram, MatchesDirectDft) {
  std::mt19937_64 gen(2);
  for (std::size_t win : {8, 64}) {
    const auto b = test::random_block(1, 200, gen);
    const std::vector<double> x(b.row(0).begin(), b.row(0).end());
    const auto fast = power_spectrogram(b.row(0), {win, win / 2});
    const auto slow = naive_spectrogram(x, win, win / 2);
    ASSERT_EQ(fast.size(), slow.size());
    for (std::size_t f = 0; f < fast.size(); ++f)
      for (std::size_t k = 0; k < fast[f].size(); ++k) EXPECT_NEAR(fast[f][k], slow[f][k], 1e-9 * (1.0 + slow[f][k]));
  }
  // Non power-of-two window takes the direct path.
  const auto b = test::random_block(1, 40, gen);
  const std::vector<double> x(b.row(0).begin(), b.row(0).end());
  const auto fast = power_spectrogram(b.row(0), {12, 5});
  const auto slow = naive_spectrogram(x, 12, 5);
  for (std::size_t f = 0; f < fast.size(); ++f)
    for (std::size_t k = 0; k < fast[f].size(); ++k) EXPECT_NEAR(fast[f][k], slow[f][k], 1e-9);
}

TEST(SpecMae, ScalingQuadruplesPower) {
  std::vector<double> s(256), s2(256);
  for (std::size_t t = 0; t < 256; ++t) {
    s[t] = std::sin(2.0 * std::numbers::pi * 8.0 * double(t) / 256.0);
    s2[t] = 2.0 * s[t];
  }
  const auto P = power_spectrogram(row_block(s).row(0), {});
  const auto P2 = power_spectrogram(row_block(s2).row(0), {});
  double mean = 0.0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < P.size(); ++f)
    for (std::size_t k = 0; k < P[f].size(); ++k, ++n) {
      EXPECT_NEAR(P2[f][k], 4.0 * P[f][k], 1e-9 * (1.0 + P[f][k]));
      mean += P[f][k];
    }
  mean /= double(n);
  EXPECT_NEAR(spec_mae(row_block(s2), row_block(s), {0}), 3.0 * mean, 1e-9 * mean);
  EXPECT_EQ(spec_mae(row_block(s), row_block(s), {0}), 0.0);
  // The peak sits in bin 2 (8 cycles per 256 samples = 2 cycles per 64-sample window).
  const auto& frame = P[1];
  EXPECT_EQ(std::max_element(frame.begin(), frame.end()) - frame.begin(), 2);
  EXPECT_THROW(spec_mae(row_block({1, 2}), row_block({1, 2}), {0}), Error);
}

TEST(Gain, Orientation) {
  EXPECT_NEAR(gain(0.3, 0.2, true), 100.0 / 3.0, 1e-12);
  EXPECT_NEAR(gain(0.5, 0.65, false), 30.0, 1e-12);
  EXPECT_EQ(gain(0.4, 0.4, true), 0.0);
  EXPECT_EQ(gain(0.4, 0.4, false), 0.0);
  EXPECT_LT(gain(0.2, 0.3, true), 0.0);
  EXPECT_THROW(gain(0.0, 1.0, true), Error);
}

TEST(Evaluate, PoolsAcrossSamplesAndBuildsCumulativeCurve) {
  std::mt19937_64 gen(3);
  std::vector<SignalBlock> preds, targets;
  for (int i = 0; i < 4; ++i) preds.push_back(test::random_block(5, 64, gen)), targets.push_back(test::random_block(5, 64, gen));
  GroupSchedule sched;
  sched.groups = {{1}, {2, 4}};
  const std::vector<std::size_t> ch{1, 2, 4};
  const auto r = evaluate(preds, targets, ch, &sched);
  double err = 0.0, energy = 0.0, p = 0.0, s = 0.0;
  for (int i = 0; i < 4; ++i) {
    const auto e = energies(preds[i], targets[i], ch);
    err += e.error, energy += e.target;
    p += pcc(preds[i], targets[i], ch) / 4.0;
    s += spec_mae(preds[i], targets[i], ch) / 4.0;
  }
  EXPECT_NEAR(r.nmse, err / energy, 1e-12);
  EXPECT_NEAR(r.snr_db, 10.0 * std::log10(energy / err), 1e-9);
  EXPECT_NEAR(r.pcc, p, 1e-12);
  EXPECT_NEAR(r.spec_mae, s, 1e-9 * s);
  ASSERT_EQ(r.per_group_nmse.size(), 2u);
  EXPECT_NEAR(r.cumulative_nmse[1], r.per_group_nmse[0] + r.per_group_nmse[1], 1e-15);
  EXPECT_EQ(r.samples, 4u);
  EXPECT_THROW(evaluate({}, {}, ch), Error);
}
