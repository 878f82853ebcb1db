#pragma once

// Multichannel signal blocks, the `.cafesig` container and per-channel normalization.
//
// `.cafesig` layout (all little-endian):
//   offset 0   char[4]  "CAFE"
//   offset 4   u16      format version (1)
//   offset 6   u32      C (channels)
//   offset 10  u32      T (samples per channel)
//   offset 14  f64      sample rate in Hz
//   offset 22  f32[C*T] samples, row-major (channel-major)

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "cafe/error.hpp"
#include "cafe/tensor.hpp"

namespace cafe {

inline constexpr std::uint16_t kSignalFormatVersion = 1;
inline constexpr std::size_t kSignalHeaderBytes = 22;

class SignalBlock {
 public:
  SignalBlock() = default;
  SignalBlock(std::size_t channels, std::size_t samples, double sample_rate_hz = 1.0)
      : data_({channels, samples}), rate_(sample_rate_hz) {
    validate_dims();
  }
  SignalBlock(Tensor data, double sample_rate_hz) : data_(std::move(data)), rate_(sample_rate_hz) {
    require_rank(data_, 2, "SignalBlock");
    validate_dims();
    require(data_.all_finite(), "SignalBlock: non-finite sample", ErrorKind::Numeric);
  }

  std::size_t channels() const noexcept { return data_.rank() ? data_.dim(0) : 0; }
  std::size_t samples() const noexcept { return data_.rank() ? data_.dim(1) : 0; }
  double sample_rate() const noexcept { return rate_; }

  const Tensor& tensor() const noexcept { return data_; }
  Tensor& tensor() noexcept { return data_; }

  std::span<double> row(std::size_t c) { return data_.data().subspan(c * samples(), samples()); }
  std::span<const double> row(std::size_t c) const { return data_.data().subspan(c * samples(), samples()); }
  double& at(std::size_t c, std::size_t t) { return data_.at(c, t); }
  double at(std::size_t c, std::size_t t) const { return data_.at(c, t); }

  /// New block holding the listed rows, in the listed order.
  SignalBlock select_rows(std::span<const std::size_t> rows) const {
    SignalBlock out(rows.size(), samples(), rate_);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require(rows[i] < channels(), "select_rows: row index out of range");
      std::copy_n(row(rows[i]).begin(), samples(), out.row(i).begin());
    }
    return out;
  }

  friend bool operator==(const SignalBlock& a, const SignalBlock& b) {
    return a.data_ == b.data_ && a.rate_ == b.rate_;
  }

 private:
  void validate_dims() const {
    require(channels() >= 1 && samples() >= 1, "SignalBlock: C and T must be >= 1");
    require(rate_ > 0 && std::isfinite(rate_), "SignalBlock: sample rate must be positive");
  }

  Tensor data_;
  double rate_ = 1.0;
};

namespace detail {

template <typename T>
void put_le(std::vector<unsigned char>& buf, T v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.insert(buf.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open " + path, ErrorKind::Io);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), "cannot write " + path, ErrorKind::Io);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), "write failed for " + path, ErrorKind::Io);
}

}  // namespace detail

inline std::vector<unsigned char> encode_block(const SignalBlock& block) {
  std::vector<unsigned char> buf{'C', 'A', 'F', 'E'};
  buf.reserve(kSignalHeaderBytes + 4 * block.tensor().size());
  detail::put_le<std::uint16_t>(buf, kSignalFormatVersion);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(block.channels()));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(block.samples()));
  detail::put_le<double>(buf, block.sample_rate());
  for (double v : block.tensor().data()) detail::put_le<float>(buf, static_cast<float>(v));
  return buf;
}

inline SignalBlock decode_block(std::span<const unsigned char> bytes, const std::string& name = "<memory>") {
  require(bytes.size() >= kSignalHeaderBytes, name + ": truncated header", ErrorKind::Format);
  require(std::memcmp(bytes.data(), "CAFE", 4) == 0, name + ": bad magic", ErrorKind::Format);
  const auto version = detail::get_le<std::uint16_t>(bytes.data() + 4);
  require(version == kSignalFormatVersion, name + ": unsupported version " + std::to_string(version),
          ErrorKind::Format);
  const std::size_t C = detail::get_le<std::uint32_t>(bytes.data() + 6);
  const std::size_t T = detail::get_le<std::uint32_t>(bytes.data() + 10);
  const double rate = detail::get_le<double>(bytes.data() + 14);
  require(C >= 1 && T >= 1, name + ": zero dimension", ErrorKind::Format);
  require(std::isfinite(rate) && rate > 0, name + ": invalid sample rate", ErrorKind::Format);
  require(bytes.size() == kSignalHeaderBytes + 4 * C * T,
          name + ": payload size " + std::to_string(bytes.size() - kSignalHeaderBytes) + " does not match " +
              std::to_string(C) + "x" + std::to_string(T),
          ErrorKind::Format);
  Tensor data({C, T});
  const unsigned char* p = bytes.data() + kSignalHeaderBytes;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t, p += 4) {
      const float v = detail::get_le<float>(p);
      require(std::isfinite(v),
              name + ": non-finite sample at channel " + std::to_string(c) + ", index " + std::to_string(t),
              ErrorKind::Numeric);
      data.at(c, t) = v;
    }
  return SignalBlock(std::move(data), rate);
}

inline void save_block(const SignalBlock& block, const std::string& path) {
  require(block.tensor().all_finite(), "save_block: non-finite sample", ErrorKind::Numeric);
  detail::write_file(path, encode_block(block));
}

inline SignalBlock load_block(const std::string& path) { return decode_block(detail::read_file(path), path); }

/// Rounds every sample to the nearest float32, i.e. the value a save/load cycle yields.
inline SignalBlock quantize_f32(SignalBlock block) {
  for (double& v : block.tensor().vec()) v = static_cast<float>(v);
  return block;
}

// ---- normalization --------------------------------------------------------

inline constexpr double kStdFloor = 1e-8;

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t channels() const noexcept { return mean.size(); }

  ChannelStats select(std::span<const std::size_t> rows) const {
    ChannelStats s;
    for (auto r : rows) {
      s.mean.push_back(mean.at(r));
      s.std.push_back(std.at(r));
    }
    return s;
  }
  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

/// Per-channel mean and population std pooled over all blocks and samples.
inline ChannelStats fit_stats(std::span<const SignalBlock> blocks) {
  require(!blocks.empty(), "fit_stats: no blocks");
  const std::size_t C = blocks.front().channels();
  ChannelStats s{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  double count = 0;
  for (const auto& b : blocks) {
    require(b.channels() == C, "fit_stats: channel-count mismatch");
    count += static_cast<double>(b.samples());
    for (std::size_t c = 0; c < C; ++c)
      for (double v : b.row(c)) s.mean[c] += v;
  }
  for (auto& m : s.mean) m /= count;
  for (const auto& b : blocks)
    for (std::size_t c = 0; c < C; ++c)
      for (double v : b.row(c)) s.std[c] += (v - s.mean[c]) * (v - s.mean[c]);
  for (auto& v : s.std) v = std::max(std::sqrt(v / count), kStdFloor);
  return s;
}

inline SignalBlock apply_normalize(const SignalBlock& block, const ChannelStats& stats) {
  require(block.channels() == stats.channels(), "apply_normalize: channel-count mismatch");
  SignalBlock out = block;
  for (std::size_t c = 0; c < block.channels(); ++c)
    for (double& v : out.row(c)) v = (v - stats.mean[c]) / stats.std[c];
  return out;
}

inline SignalBlock apply_denormalize(const SignalBlock& block, const ChannelStats& stats) {
  require(block.channels() == stats.channels(), "apply_denormalize: channel-count mismatch");
  SignalBlock out = block;
  for (std::size_t c = 0; c < block.channels(); ++c)
    for (double& v : out.row(c)) v = v * stats.std[c] + stats.mean[c];
  return out;
}

}  // namespace cafe
