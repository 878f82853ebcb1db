#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <gtest/gtest.h>

#include "cafe/metrics.hpp"
#include "cafe/synthdata.hpp"
#include "test_util.hpp"

using namespace cafe;
namespace fs = std::filesystem;

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * double(i + j);
    i = j + 1;
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = double(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    sab += (a[i] - ma) * (b[i] - mb), saa += (a[i] - ma) * (a[i] - ma), sbb += (b[i] - mb) * (b[i] - mb);
  return sab / std::sqrt(saa * sbb);
}

bool same_files(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a)) if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b)) if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb) return false;
  for (const auto& f : fa)
    if (detail::read_file((a / f).string()) != detail::read_file((b / f).string())) return false;
  return true;
}

DatasetSpec tiny_spec(GenKind g = GenKind::Block) {
  DatasetSpec s;
  s.channels = 12;
  s.factor = 3;
  s.generator = g;
  s.n_train = 3;
  s.n_val = 2;
  s.n_test = 2;
  s.gen.samples = 32;
  s.gen.seed = 9;
  return s;
}

}  // namespace

TEST(GenMontage, GridCornersAndRingGeometry) {
  const auto grid = gen_montage(MontageKind::Grid2D, 4, 0);
  const std::vector<Vec3> corners{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
  EXPECT_EQ(grid.positions(), corners);
  const auto ring = gen_montage(MontageKind::Ring, 8, 0);
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& p = ring.position(i);
    EXPECT_NEAR(std::hypot(p[0], p[1]), 1.0, 1e-12);
    EXPECT_NEAR(distance(p, ring.position((i + 1) % 8)), 2.0 * std::sin(std::numbers::pi / 8.0), 1e-12);
  }
  const auto scalp = gen_montage(MontageKind::ScalpLike, 32, 3);
  for (const auto& p : scalp.positions()) {
    EXPECT_GE(p[2], 0.0);
    EXPECT_NEAR(std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]), 1.0, 1e-9);
  }
  EXPECT_EQ(scalp.hash(), gen_montage(MontageKind::ScalpLike, 32, 3).hash());
  EXPECT_THROW(gen_montage(MontageKind::Ring, 2, 0), Error);
}

TEST(GenBlock, CorrelationDecaysWithDistance) {
  const auto m = gen_montage(MontageKind::Grid2D, 16, 0);
  std::vector<double> dist, corr;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GenConfig cfg;
    cfg.samples = 256;
    cfg.spatial_sigma = 0.3;
    cfg.seed = seed;
    const auto b = gen_block(m, cfg);
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = i + 1; j < 16; ++j) {
        dist.push_back(distance(m.position(i), m.position(j)));
        const std::vector<double> a(b.row(i).begin(), b.row(i).end()), c(b.row(j).begin(), b.row(j).end());
        corr.push_back(pearson(a, c));
      }
  }
  EXPECT_LT(pearson(ranks(dist), ranks(corr)), -0.5);
}

TEST(GenBlock, SingleWideSourceGivesIdenticalChannels) {
  const auto m = gen_montage(MontageKind::Grid2D, 9, 0);
  GenConfig cfg;
  cfg.n_sources = 1;
  cfg.spatial_sigma = 1e9;
  cfg.noise_std = 0.0;
  cfg.seed = 4;
  const auto b = gen_block(m, cfg);
  for (std::size_t c = 1; c < 9; ++c)
    for (std::size_t t = 0; t < cfg.samples; ++t) EXPECT_NEAR(b.tensor().at(c, t), b.tensor().at(0, t), 1e-12);
  EXPECT_EQ(gen_block(m, cfg), b);
  cfg.band_high_hz = 100.0;
  EXPECT_THROW(gen_block(m, cfg), Error);
}

TEST(GenLinear, MissingChannelsAreExactMixtures) {
  const auto m = gen_montage(MontageKind::Grid2D, 16, 0);
  const auto layout = select_ld_layout(m, 4, 0);
  GenConfig cfg;
  cfg.noise_std = 0.0;
  cfg.seed = 2;
  const auto b = gen_linear_block(m, layout, cfg);
  const auto A = linear_mixing_matrix(m, layout, cfg.spatial_sigma);
  const auto missing = layout.missing();
  for (std::size_t i = 0; i < missing.size(); ++i) {
    double rowsum = 0.0;
    for (std::size_t j = 0; j < 4; ++j) rowsum += A.at(i, j);
    EXPECT_NEAR(rowsum, 1.0, 1e-12);
    for (std::size_t t = 0; t < cfg.samples; ++t) {
      double s = 0.0;
      for (std::size_t j = 0; j < 4; ++j) s += A.at(i, j) * b.tensor().at(layout.observed()[j], t);
      EXPECT_NEAR(b.tensor().at(missing[i], t), s, 1e-12);
    }
  }
}

TEST(AnchorNoise, HitsTargetSnr) {
  const auto m = gen_montage(MontageKind::Ring, 8, 0);
  GenConfig cfg;
  cfg.samples = 4096;
  cfg.sample_rate_hz = 512.0;
  cfg.seed = 1;
  const auto anchors = gen_block(m, cfg).select_rows(std::vector<std::size_t>{0, 2, 4, 6});
  std::vector<std::size_t> all{0, 1, 2, 3};
  for (double level : {0.0, 10.0, 20.0, 40.0}) {
    const auto noisy = inject_anchor_noise(anchors, level, 3);
    EXPECT_NEAR(snr_db(noisy, anchors, all), level, 0.5);
    EXPECT_EQ(noisy, inject_anchor_noise(anchors, level, 3));
  }
  EXPECT_EQ(inject_anchor_noise(anchors, std::numeric_limits<double>::infinity(), 3), anchors);
  EXPECT_THROW(inject_anchor_noise(anchors, std::nan(""), 3), Error);
}

TEST(Dataset, WrittenDatasetLoadsBack) {
  const auto dir = test::scratch_dir();
  for (auto g : {GenKind::Block, GenKind::Linear}) {
    const auto path = dir / gen_kind_name(g);
    const auto ds = make_dataset(path.string(), tiny_spec(g));
    const auto back = load_dataset(path.string());
    EXPECT_EQ(back.montage.hash(), ds.montage.hash());
    EXPECT_EQ(back.layout.observed(), ds.layout.observed());
    EXPECT_EQ(back.train, ds.train);
    EXPECT_EQ(back.val, ds.val);
    EXPECT_EQ(back.test, ds.test);
    EXPECT_EQ(manifest_entries(back.spec), manifest_entries(ds.spec));
    EXPECT_EQ(fs::exists(path / "mixing.txt"), g == GenKind::Linear);
  }
}

TEST(Dataset, RegenerationIsByteIdentical) {
  const auto dir = test::scratch_dir();
  make_dataset((dir / "a").string(), tiny_spec());
  make_dataset((dir / "b").string(), tiny_spec());
  EXPECT_TRUE(same_files(dir / "a", dir / "b"));
  auto other = tiny_spec();
  other.gen.seed = 10;
  make_dataset((dir / "c").string(), other);
  EXPECT_FALSE(same_files(dir / "a", dir / "c"));
}

TEST(Dataset, SplitsUseDisjointSeeds) {
  const auto ds = generate_dataset(tiny_spec());
  for (const auto& a : ds.train)
    for (const auto* split : {&ds.val, &ds.test})
      for (const auto& b : *split) EXPECT_FALSE(a == b);
  EXPECT_EQ(ds.layout.observed().size(), 4u);
}

TEST(Dataset, RejectsBadSpecsAndRefusesToClobber) {
  auto s = tiny_spec();
  s.n_train = 0;
  EXPECT_THROW(generate_dataset(s), Error);
  s = tiny_spec();
  s.factor = 1;
  EXPECT_THROW(generate_dataset(s), Error);
  const auto dir = test::scratch_dir();
  make_dataset(dir.string(), tiny_spec());
  EXPECT_THROW(make_dataset(dir.string(), tiny_spec()), Error);
  EXPECT_NO_THROW(make_dataset(dir.string(), tiny_spec(), true));
}
