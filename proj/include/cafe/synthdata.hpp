#pragma once

// Synthetic montages and spatially correlated multichannel signals.
//
// gen_block: K band-limited latent sources at random positions, mixed into the
// sensors by a Gaussian radial kernel of width sigma plus white sensor noise, so
// cross-channel coupling decays with sensor distance.
// gen_linear_block: missing channels are a fixed linear map of the anchors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "cafe/error.hpp"
#include "cafe/montage.hpp"
#include "cafe/rng.hpp"
#include "cafe/signal.hpp"

namespace cafe {

enum class MontageKind { Grid2D, Ring, ScalpLike };

inline const char* montage_kind_name(MontageKind k) {
  switch (k) {
    case MontageKind::Grid2D: return "grid";
    case MontageKind::Ring: return "ring";
    case MontageKind::ScalpLike: return "scalp";
  }
  return "?";
}

inline MontageKind parse_montage_kind(std::string_view s) {
  if (s == "grid" || s == "grid2d") return MontageKind::Grid2D;
  if (s == "ring") return MontageKind::Ring;
  if (s == "scalp" || s == "scalplike") return MontageKind::ScalpLike;
  throw Error(ErrorKind::Config, "unknown montage kind '" + std::string(s) + "'");
}

inline std::string channel_label(std::size_t i) {
  std::ostringstream os;
  os << "E" << std::setw(3) << std::setfill('0') << i;
  return os.str();
}

/// Grid2D: near-square lattice spanning the unit square. Ring: unit circle.
/// ScalpLike: Fibonacci points on the upper unit hemisphere with seeded jitter.
inline Montage gen_montage(MontageKind kind, std::size_t channels, std::uint64_t seed) {
  std::vector<std::string> labels;
  std::vector<Vec3> pos;
  for (std::size_t i = 0; i < channels; ++i) labels.push_back(channel_label(i));
  switch (kind) {
    case MontageKind::Grid2D: {
      require(channels >= 4, "grid montage needs at least 4 channels", ErrorKind::Config);
      std::size_t rows = 1;
      for (std::size_t r = 1; r * r <= channels; ++r)
        if (channels % r == 0) rows = r;
      std::size_t cols = channels / rows;
      if (rows == 1) {
        cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(channels))));
        rows = (channels + cols - 1) / cols;
      }
      for (std::size_t i = 0; i < channels; ++i) {
        const double x = static_cast<double>(i % cols) / static_cast<double>(cols - 1);
        const double y = static_cast<double>(i / cols) / static_cast<double>(rows - 1);
        pos.push_back({x, y, 0.0});
      }
      break;
    }
    case MontageKind::Ring:
      require(channels >= 3, "ring montage needs at least 3 channels", ErrorKind::Config);
      for (std::size_t i = 0; i < channels; ++i) {
        const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(channels);
        pos.push_back({std::cos(a), std::sin(a), 0.0});
      }
      break;
    case MontageKind::ScalpLike: {
      require(channels >= 4, "scalp montage needs at least 4 channels", ErrorKind::Config);
      CounterRng rng(hash_combine(seed, 0x5ca1ULL));
      const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
      for (std::size_t i = 0; i < channels; ++i) {
        const double z0 = 1.0 - (static_cast<double>(i) + 0.5) / static_cast<double>(channels);
        const double z = std::clamp(z0 + rng.uniform(-0.02, 0.02), 0.0, 1.0);
        const double theta = golden * static_cast<double>(i) + rng.uniform(-0.05, 0.05);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        pos.push_back({r * std::cos(theta), r * std::sin(theta), z});
      }
      break;
    }
  }
  return Montage(std::move(labels), std::move(pos));
}

struct GenConfig {
  std::size_t samples = 64;          // T
  double sample_rate_hz = 128.0;
  std::size_t n_sources = 6;         // K
  double spatial_sigma = 0.3;        // mixing-kernel width in montage units
  double band_low_hz = 2.0;
  double band_high_hz = 16.0;
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    require(samples >= 1, "gen: T must be >= 1", ErrorKind::Config);
    require(sample_rate_hz > 0, "gen: sample rate must be positive", ErrorKind::Config);
    require(n_sources >= 1, "gen: need at least one source", ErrorKind::Config);
    require(spatial_sigma > 0, "gen: spatial sigma must be positive", ErrorKind::Config);
    require(band_low_hz >= 0 && band_low_hz < band_high_hz && band_high_hz <= sample_rate_hz / 2,
            "gen: source band must satisfy 0 <= low < high <= Nyquist", ErrorKind::Config);
    require(noise_std >= 0, "gen: noise std must be >= 0", ErrorKind::Config);
  }
};

inline constexpr std::size_t kSinusoidsPerSource = 16;

/// Unit-variance band-limited source: sum of random-phase sinusoids with frequencies in the band.
inline std::vector<double> band_limited_source(CounterRng& rng, const GenConfig& cfg) {
  std::vector<double> s(cfg.samples, 0.0);
  const double amp = std::sqrt(2.0 / static_cast<double>(kSinusoidsPerSource));
  for (std::size_t j = 0; j < kSinusoidsPerSource; ++j) {
    const double f = rng.uniform(cfg.band_low_hz, cfg.band_high_hz);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double w = 2.0 * std::numbers::pi * f / cfg.sample_rate_hz;
    for (std::size_t t = 0; t < cfg.samples; ++t) s[t] += amp * std::sin(w * static_cast<double>(t) + phase);
  }
  return s;
}

/// HD ground truth: channel_i(t) = sum_k exp(-|p_i - q_k|^2 / (2 sigma^2)) s_k(t) + noise.
inline SignalBlock gen_block(const Montage& montage, const GenConfig& cfg) {
  cfg.validate();
  CounterRng rng(hash_combine(cfg.seed, 0xb10cULL));
  Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  Vec3 hi{-lo[0], -lo[1], -lo[2]};
  for (const auto& p : montage.positions())
    for (int k = 0; k < 3; ++k) lo[k] = std::min(lo[k], p[k]), hi[k] = std::max(hi[k], p[k]);

  const std::size_t C = montage.size(), T = cfg.samples;
  SignalBlock block(C, T, cfg.sample_rate_hz);
  const double inv2s2 = 1.0 / (2.0 * cfg.spatial_sigma * cfg.spatial_sigma);
  for (std::size_t k = 0; k < cfg.n_sources; ++k) {
    Vec3 q;
    for (int d = 0; d < 3; ++d) q[d] = rng.uniform(lo[d], hi[d]);
    const auto s = band_limited_source(rng, cfg);
    for (std::size_t c = 0; c < C; ++c) {
      const double dist = distance(montage.position(c), q);
      const double w = std::exp(-dist * dist * inv2s2);
      auto row = block.row(c);
      for (std::size_t t = 0; t < T; ++t) row[t] += w * s[t];
    }
  }
  if (cfg.noise_std > 0)
    for (double& v : block.tensor().vec()) v += cfg.noise_std * rng.normal();
  return block;
}

/// Row-normalized Gaussian-kernel weights [N missing, C_L anchors], rows in
/// `layout.missing()` order, columns in `layout.observed()` order.
inline Tensor linear_mixing_matrix(const Montage& montage, const LayoutSpec& layout, double sigma) {
  const auto missing = layout.missing();
  const auto& obs = layout.observed();
  Tensor A({missing.size(), obs.size()});
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < missing.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < obs.size(); ++j) {
      const double d = distance(montage.position(missing[i]), montage.position(obs[j]));
      sum += (A.at(i, j) = std::exp(-d * d * inv2s2));
    }
    for (std::size_t j = 0; j < obs.size(); ++j) A.at(i, j) = sum > 0 ? A.at(i, j) / sum : 1.0 / static_cast<double>(obs.size());
  }
  return A;
}

/// Anchors are independent band-limited sources; every missing channel is the
/// fixed mixing of the anchors plus `noise_std` white noise.
inline SignalBlock gen_linear_block(const Montage& montage, const LayoutSpec& layout, const GenConfig& cfg) {
  cfg.validate();
  CounterRng rng(hash_combine(cfg.seed, 0x11eaULL));
  const auto A = linear_mixing_matrix(montage, layout, cfg.spatial_sigma);
  const auto missing = layout.missing();
  const auto& obs = layout.observed();
  SignalBlock block(montage.size(), cfg.samples, cfg.sample_rate_hz);
  for (std::size_t c : obs) {
    const auto s = band_limited_source(rng, cfg);
    std::copy(s.begin(), s.end(), block.row(c).begin());
  }
  for (std::size_t i = 0; i < missing.size(); ++i) {
    auto row = block.row(missing[i]);
    for (std::size_t j = 0; j < obs.size(); ++j) {
      const auto a = block.row(obs[j]);
      for (std::size_t t = 0; t < cfg.samples; ++t) row[t] += A.at(i, j) * a[t];
    }
    if (cfg.noise_std > 0)
      for (double& v : row) v += cfg.noise_std * rng.normal();
  }
  return block;
}

/// Adds white Gaussian noise so that the anchor-set SNR equals `snr_db_level`.
/// An infinite level returns the input unchanged.
inline SignalBlock inject_anchor_noise(const SignalBlock& anchors, double snr_db_level, std::uint64_t seed) {
  require(anchors.tensor().all_finite(), "inject_anchor_noise: non-finite input", ErrorKind::Numeric);
  if (std::isinf(snr_db_level) && snr_db_level > 0) return anchors;
  require(std::isfinite(snr_db_level), "inject_anchor_noise: SNR must be finite or +inf");
  double power = 0.0;
  for (double v : anchors.tensor().data()) power += v * v;
  power /= static_cast<double>(anchors.tensor().size());
  const double sd = std::sqrt(power / std::pow(10.0, snr_db_level / 10.0));
  CounterRng rng(hash_combine(seed, 0x4015eULL));
  SignalBlock out = anchors;
  for (double& v : out.tensor().vec()) v += sd * rng.normal();
  return out;
}

// ---- datasets -------------------------------------------------------------

enum class GenKind { Block, Linear };

inline const char* gen_kind_name(GenKind k) { return k == GenKind::Block ? "block" : "linear"; }

inline GenKind parse_gen_kind(std::string_view s) {
  if (s == "block") return GenKind::Block;
  if (s == "linear") return GenKind::Linear;
  throw Error(ErrorKind::Config, "unknown generator '" + std::string(s) + "'");
}

struct DatasetSpec {
  MontageKind montage_kind = MontageKind::Grid2D;
  std::size_t channels = 32;
  std::size_t factor = 4;  // observed channels = channels / factor
  GenKind generator = GenKind::Block;
  double sigma_fraction = 0.3;  // spatial sigma as a fraction of the montage diameter
  std::size_t n_train = 200, n_val = 20, n_test = 50;
  GenConfig gen;  // gen.seed is the dataset base seed; gen.spatial_sigma is derived

  std::size_t observed_count() const { return channels / factor; }
};

struct Dataset {
  Montage montage;
  LayoutSpec layout;
  DatasetSpec spec;
  std::vector<SignalBlock> train, val, test;
};

enum class Split : std::uint64_t { Train = 0, Val = 1, Test = 2 };

/// Per-sample seeds come from disjoint ranges: split s, index i -> base + s * 1e6 + i.
inline std::uint64_t sample_seed(std::uint64_t base, Split split, std::size_t index) {
  return base + static_cast<std::uint64_t>(split) * 1000000ULL + index;
}

inline Dataset generate_dataset(const DatasetSpec& spec) {
  require(spec.n_train >= 1, "dataset: n_train must be >= 1", ErrorKind::Config);
  require(spec.factor >= 1 && spec.channels / spec.factor >= 1 && spec.channels / spec.factor < spec.channels,
          "dataset: factor must leave between 1 and C_H-1 observed channels", ErrorKind::Config);
  require(spec.sigma_fraction > 0, "dataset: sigma fraction must be positive", ErrorKind::Config);
  Montage montage = gen_montage(spec.montage_kind, spec.channels, spec.gen.seed);
  LayoutSpec layout = select_ld_layout(montage, spec.observed_count(), spec.gen.seed);
  Dataset ds{montage, layout, spec, {}, {}, {}};
  ds.spec.gen.spatial_sigma = spec.sigma_fraction * montage.diameter();
  auto fill = [&](std::vector<SignalBlock>& out, Split split, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      GenConfig g = ds.spec.gen;
      g.seed = sample_seed(spec.gen.seed, split, i);
      out.push_back(quantize_f32(spec.generator == GenKind::Block ? gen_block(montage, g)
                                                                 : gen_linear_block(montage, layout, g)));
    }
  };
  fill(ds.train, Split::Train, spec.n_train);
  fill(ds.val, Split::Val, spec.n_val);
  fill(ds.test, Split::Test, spec.n_test);
  return ds;
}

inline std::vector<std::pair<std::string, std::string>> manifest_entries(const DatasetSpec& s) {
  return {{"format", "cafe-dataset 1"},
          {"generator", gen_kind_name(s.generator)},
          {"montage_kind", montage_kind_name(s.montage_kind)},
          {"channels", std::to_string(s.channels)},
          {"factor", std::to_string(s.factor)},
          {"samples", std::to_string(s.gen.samples)},
          {"sample_rate_hz", format_double(s.gen.sample_rate_hz)},
          {"sources", std::to_string(s.gen.n_sources)},
          {"sigma_fraction", format_double(s.sigma_fraction)},
          {"spatial_sigma", format_double(s.gen.spatial_sigma)},
          {"band_low_hz", format_double(s.gen.band_low_hz)},
          {"band_high_hz", format_double(s.gen.band_high_hz)},
          {"noise_std", format_double(s.gen.noise_std)},
          {"seed", std::to_string(s.gen.seed)},
          {"n_train", std::to_string(s.n_train)},
          {"n_val", std::to_string(s.n_val)},
          {"n_test", std::to_string(s.n_test)}};
}

inline DatasetSpec parse_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot read manifest " + path, ErrorKind::Io);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, path + ": bad line '" + line + "'", ErrorKind::Format);
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto get = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    require(it != kv.end(), path + ": missing key '" + k + "'", ErrorKind::Format);
    return it->second;
  };
  require(get("format") == "cafe-dataset 1", path + ": unsupported dataset format", ErrorKind::Format);
  auto num = [&](const char* k) { return parse_double(get(k), path); };
  auto uint = [&](const char* k) { return static_cast<std::size_t>(std::stoull(get(k))); };
  DatasetSpec s;
  s.generator = parse_gen_kind(get("generator"));
  s.montage_kind = parse_montage_kind(get("montage_kind"));
  s.channels = uint("channels");
  s.factor = uint("factor");
  s.gen.samples = uint("samples");
  s.gen.sample_rate_hz = num("sample_rate_hz");
  s.gen.n_sources = uint("sources");
  s.sigma_fraction = num("sigma_fraction");
  s.gen.spatial_sigma = num("spatial_sigma");
  s.gen.band_low_hz = num("band_low_hz");
  s.gen.band_high_hz = num("band_high_hz");
  s.gen.noise_std = num("noise_std");
  s.gen.seed = std::stoull(get("seed"));
  s.n_train = uint("n_train");
  s.n_val = uint("n_val");
  s.n_test = uint("n_test");
  return s;
}

inline std::string block_filename(std::size_t i) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << i << ".cafesig";
  return os.str();
}

/// Writes montage.csv, layout.txt, manifest.txt, mixing.txt (linear generator)
/// and train/ val/ test/ directories of `.cafesig` blocks.
inline Dataset make_dataset(const std::string& dir, const DatasetSpec& spec, bool force = false) {
  namespace fs = std::filesystem;
  if (fs::exists(dir)) {
    require(fs::is_directory(dir), dir + " exists and is not a directory", ErrorKind::Io);
    require(force || fs::is_empty(dir), dir + " is not empty (use --force to overwrite)", ErrorKind::Io);
    if (force)
      for (const char* sub : {"train", "val", "test"}) fs::remove_all(fs::path(dir) / sub);
  }
  Dataset ds = generate_dataset(spec);
  fs::create_directories(dir);
  save_montage_csv(ds.montage, (fs::path(dir) / "montage.csv").string());
  save_layout(ds.montage, ds.layout, (fs::path(dir) / "layout.txt").string());
  {
    std::ofstream out(fs::path(dir) / "manifest.txt", std::ios::binary);
    for (const auto& [k, v] : manifest_entries(ds.spec)) out << k << " = " << v << '\n';
  }
  if (spec.generator == GenKind::Linear) {
    const auto A = linear_mixing_matrix(ds.montage, ds.layout, ds.spec.gen.spatial_sigma);
    std::ofstream out(fs::path(dir) / "mixing.txt", std::ios::binary);
    out << "# rows: missing channels, cols: observed channels\n";
    for (std::size_t i = 0; i < A.dim(0); ++i) {
      for (std::size_t j = 0; j < A.dim(1); ++j) out << (j ? "," : "") << format_double(A.at(i, j));
      out << '\n';
    }
  }
  auto write = [&](const char* sub, const std::vector<SignalBlock>& blocks) {
    fs::create_directories(fs::path(dir) / sub);
    for (std::size_t i = 0; i < blocks.size(); ++i) save_block(blocks[i], (fs::path(dir) / sub / block_filename(i)).string());
  };
  write("train", ds.train);
  write("val", ds.val);
  write("test", ds.test);
  return ds;
}

inline std::vector<SignalBlock> load_split(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (!fs::exists(dir)) return {};
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".cafesig") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  std::vector<SignalBlock> out;
  for (const auto& f : files) out.push_back(load_block(f));
  return out;
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Montage montage = load_montage_csv((fs::path(dir) / "montage.csv").string());
  LayoutSpec layout = load_layout(montage, (fs::path(dir) / "layout.txt").string());
  DatasetSpec spec = parse_manifest((fs::path(dir) / "manifest.txt").string());
  Dataset ds{montage, layout, spec, load_split((fs::path(dir) / "train").string()),
             load_split((fs::path(dir) / "val").string()), load_split((fs::path(dir) / "test").string())};
  for (const auto* split : {&ds.train, &ds.val, &ds.test})
    for (const auto& b : *split)
      require(b.channels() == montage.size(), dir + ": block channel count does not match montage", ErrorKind::Format);
  return ds;
}

}  // namespace cafe
