#pragma once

// Sensor geometry, low-density layouts and the distance-ordered group schedule.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cafe/error.hpp"
#include "cafe/rng.hpp"

namespace cafe {

using Vec3 = std::array<double, 3>;

inline double distance(const Vec3& a, const Vec3& b) noexcept {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

class Montage {
 public:
  Montage(std::vector<std::string> labels, std::vector<Vec3> positions)
      : labels_(std::move(labels)), positions_(std::move(positions)) {
    require(labels_.size() == positions_.size(), "montage: label and position counts differ");
    require(labels_.size() >= 2, "montage: need at least 2 channels");
    std::set<std::string> seen;
    for (const auto& l : labels_) {
      require(!l.empty(), "montage: empty channel label");
      require(seen.insert(l).second, "montage: duplicate channel label '" + l + "'");
    }
    for (const auto& p : positions_)
      for (double v : p) require(std::isfinite(v), "montage: non-finite coordinate");
  }

  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<Vec3>& positions() const noexcept { return positions_; }
  const Vec3& position(std::size_t i) const { return positions_.at(i); }

  std::size_t index_of(std::string_view label) const {
    for (std::size_t i = 0; i < labels_.size(); ++i)
      if (labels_[i] == label) return i;
    throw Error(ErrorKind::InvalidArgument, "montage: unknown channel label '" + std::string(label) + "'");
  }

  /// Largest pairwise sensor distance.
  double diameter() const noexcept {
    double d = 0.0;
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = i + 1; j < size(); ++j) d = std::max(d, distance(positions_[i], positions_[j]));
    return d;
  }

  /// Fingerprint of labels and exact coordinates; stored in model artifacts.
  std::uint64_t hash() const noexcept {
    std::uint64_t h = fnv1a("montage", 7);
    for (std::size_t i = 0; i < size(); ++i) {
      h = fnv1a(labels_[i].data(), labels_[i].size(), h);
      h = fnv1a("\0", 1, h);
      h = fnv1a(positions_[i].data(), sizeof(Vec3), h);
    }
    return h;
  }

 private:
  std::vector<std::string> labels_;
  std::vector<Vec3> positions_;
};

/// Observed (anchor) channels of a montage, kept sorted.
class LayoutSpec {
 public:
  LayoutSpec(std::vector<std::size_t> observed, std::size_t montage_channels, std::uint64_t montage_hash = 0)
      : observed_(std::move(observed)), channels_(montage_channels), montage_hash_(montage_hash) {
    std::sort(observed_.begin(), observed_.end());
    require(!observed_.empty(), "layout: observed set is empty");
    require(std::adjacent_find(observed_.begin(), observed_.end()) == observed_.end(),
            "layout: duplicate observed channel");
    require(observed_.back() < channels_, "layout: observed channel index out of range");
    require(observed_.size() < channels_, "layout: observed set must be a strict subset of the montage");
  }

  const std::vector<std::size_t>& observed() const noexcept { return observed_; }
  std::size_t channels() const noexcept { return channels_; }
  std::uint64_t montage_hash() const noexcept { return montage_hash_; }

  bool is_observed(std::size_t i) const { return std::binary_search(observed_.begin(), observed_.end(), i); }

  /// Complement of the observed set, ascending.
  std::vector<std::size_t> missing() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < channels_; ++i)
      if (!is_observed(i)) out.push_back(i);
    return out;
  }

 private:
  std::vector<std::size_t> observed_;
  std::size_t channels_;
  std::uint64_t montage_hash_;
};

/// Exact rational in (0, 1); boundary indices are computed in integer arithmetic.
struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
  /// floor(num / den * n)
  std::size_t floor_times(std::size_t n) const noexcept {
    return static_cast<std::size_t>((num * static_cast<std::int64_t>(n)) / den);
  }
  friend bool operator<(const Fraction& a, const Fraction& b) noexcept { return a.num * b.den < b.num * a.den; }
  friend bool operator==(const Fraction& a, const Fraction& b) noexcept { return a.num * b.den == b.num * a.den; }

  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }

  /// Accepts "p/q" or a plain decimal such as "0.25".
  static Fraction parse(std::string_view s) {
    auto to_int = [&](std::string_view t) {
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      require(ec == std::errc() && p == t.data() + t.size() && !t.empty(),
              "invalid fraction '" + std::string(s) + "'", ErrorKind::Config);
      return v;
    };
    Fraction f;
    if (auto slash = s.find('/'); slash != std::string_view::npos) {
      f = {to_int(s.substr(0, slash)), to_int(s.substr(slash + 1))};
    } else if (auto dot = s.find('.'); dot != std::string_view::npos) {
      const auto whole = s.substr(0, dot), frac = s.substr(dot + 1);
      std::int64_t den = 1;
      for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
      f = {(whole.empty() ? 0 : to_int(whole)) * den + (frac.empty() ? 0 : to_int(frac)), den};
    } else {
      f = {to_int(s), 1};
    }
    require(f.den > 0, "fraction denominator must be positive: '" + std::string(s) + "'", ErrorKind::Config);
    const auto g = std::gcd(f.num, f.den);
    if (g > 1) f = {f.num / g, f.den / g};
    return f;
  }
};

enum class OrderKind { ProximalToDistal, DistalToProximal, Random };

inline const char* order_kind_name(OrderKind k) {
  switch (k) {
    case OrderKind::ProximalToDistal: return "proximal";
    case OrderKind::DistalToProximal: return "distal";
    case OrderKind::Random: return "random";
  }
  return "?";
}

inline OrderKind parse_order_kind(std::string_view s) {
  if (s == "proximal" || s == "proximal-to-distal") return OrderKind::ProximalToDistal;
  if (s == "distal" || s == "distal-to-proximal") return OrderKind::DistalToProximal;
  if (s == "random") return OrderKind::Random;
  throw Error(ErrorKind::Config, "unknown order kind '" + std::string(s) + "'");
}

struct GroupSchedule {
  std::vector<std::vector<std::size_t>> groups;
  OrderKind order = OrderKind::ProximalToDistal;
  std::uint64_t random_seed = 0;
  std::vector<Fraction> split_fractions;

  std::size_t depth() const noexcept { return groups.size(); }

  std::vector<std::size_t> flattened() const {
    std::vector<std::size_t> out;
    for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
    return out;
  }
  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out;
    for (const auto& g : groups) out.push_back(g.size());
    return out;
  }
  friend bool operator==(const GroupSchedule&, const GroupSchedule&) = default;
};

/// Mean Euclidean distance from channel `u` to the observed channels.
inline double anchor_distance(const Montage& montage, const LayoutSpec& layout, std::size_t u) {
  require(u < montage.size(), "anchor_distance: channel index out of range");
  require(layout.channels() == montage.size(), "anchor_distance: layout does not index this montage");
  require(!layout.is_observed(u), "anchor_distance: channel " + std::to_string(u) + " is observed");
  double sum = 0.0;
  for (std::size_t l : layout.observed()) sum += distance(montage.position(u), montage.position(l));
  return sum / static_cast<double>(layout.observed().size());
}

/// Missing channels sorted by ascending anchor distance, ties by ascending index.
inline std::vector<std::size_t> proximity_order(const Montage& montage, const LayoutSpec& layout) {
  auto order = layout.missing();
  std::vector<double> dist(montage.size(), 0.0);
  for (std::size_t u : order) dist[u] = anchor_distance(montage, layout, u);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return order;
}

/// Boundary indices b_1..b_{G-1} = floor(beta_g * n), nudged right (then clamped) so no group is empty.
inline std::vector<std::size_t> group_boundaries(std::size_t n, const std::vector<Fraction>& fractions) {
  const std::size_t G = fractions.size() + 1;
  require(n >= G, "schedule: " + std::to_string(n) + " missing channels cannot fill " + std::to_string(G) + " groups");
  std::vector<std::size_t> b(G + 1, 0);
  b[G] = n;
  for (std::size_t g = 1; g < G; ++g) {
    b[g] = std::max(fractions[g - 1].floor_times(n), b[g - 1] + 1);
    b[g] = std::min(b[g], n - (G - g));
  }
  return b;
}

inline void validate_fractions(const std::vector<Fraction>& fractions) {
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const auto& f = fractions[i];
    require(f.den > 0 && f.num > 0 && f.num < f.den, "schedule: split fraction " + f.str() + " not in (0,1)",
            ErrorKind::Config);
    if (i > 0)
      require(fractions[i - 1] < f, "schedule: split fractions must be strictly increasing", ErrorKind::Config);
  }
}

inline GroupSchedule build_schedule(const Montage& montage, const LayoutSpec& layout, std::size_t G,
                                    const std::vector<Fraction>& fractions, OrderKind order,
                                    std::uint64_t random_seed = 0) {
  require(G >= 1, "schedule: G must be >= 1");
  require(fractions.size() + 1 == G, "schedule: need exactly G-1 split fractions");
  validate_fractions(fractions);

  std::vector<std::size_t> seq;
  switch (order) {
    case OrderKind::ProximalToDistal:
      seq = proximity_order(montage, layout);
      break;
    case OrderKind::DistalToProximal:
      seq = proximity_order(montage, layout);
      std::reverse(seq.begin(), seq.end());
      break;
    case OrderKind::Random: {
      seq = layout.missing();
      CounterRng rng(hash_combine(random_seed, 0x5eedULL));
      for (std::size_t i = seq.size(); i > 1; --i) std::swap(seq[i - 1], seq[rng.below(i)]);
      break;
    }
  }

  const auto b = group_boundaries(seq.size(), fractions);
  GroupSchedule s;
  s.order = order;
  s.random_seed = order == OrderKind::Random ? random_seed : 0;
  s.split_fractions = fractions;
  for (std::size_t g = 0; g < G; ++g) {
    s.groups.emplace_back(seq.begin() + static_cast<std::ptrdiff_t>(b[g]), seq.begin() + static_cast<std::ptrdiff_t>(b[g + 1]));
    require(!s.groups.back().empty(), "schedule: group " + std::to_string(g + 1) + " is empty");
  }
  return s;
}

/// Split fractions reproducing explicit group sizes, e.g. {5,10,15} -> (5/30, 15/30).
inline std::vector<Fraction> fractions_from_sizes(const std::vector<std::size_t>& sizes) {
  require(!sizes.empty(), "schedule: empty size list", ErrorKind::Config);
  const auto total = static_cast<std::int64_t>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  std::vector<Fraction> out;
  std::int64_t cum = 0;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    require(sizes[i] > 0, "schedule: zero-size group", ErrorKind::Config);
    cum += static_cast<std::int64_t>(sizes[i]);
    out.push_back(Fraction{cum, total});
  }
  return out;
}

/// Parses "5-10-15" (explicit sizes) or "5x6" (5 channels per step, 6 steps).
inline std::vector<std::size_t> parse_group_sizes(std::string_view spec) {
  auto to_size = [&](std::string_view t) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    require(ec == std::errc() && p == t.data() + t.size() && v > 0,
            "invalid schedule spec '" + std::string(spec) + "'", ErrorKind::Config);
    return v;
  };
  if (auto x = spec.find('x'); x != std::string_view::npos)
    return std::vector<std::size_t>(to_size(spec.substr(x + 1)), to_size(spec.substr(0, x)));
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (true) {
    auto dash = spec.find('-', start);
    out.push_back(to_size(spec.substr(start, dash == std::string_view::npos ? spec.npos : dash - start)));
    if (dash == std::string_view::npos) break;
    start = dash + 1;
  }
  return out;
}

/// Greedy farthest-point selection of `n_observed` anchors, seeded at the channel
/// nearest the centroid. The seed is only consulted to break exact ties.
inline LayoutSpec select_ld_layout(const Montage& montage, std::size_t n_observed, std::uint64_t seed) {
  const std::size_t C = montage.size();
  require(n_observed >= 1 && n_observed < C, "select_ld_layout: need 1 <= C_L < C_H");
  CounterRng rng(hash_combine(seed, 0x1a70ULL));
  auto pick = [&](const std::vector<double>& score, const std::vector<bool>& taken, bool maximize) {
    double best = maximize ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < C; ++i)
      if (!taken[i] && (maximize ? score[i] > best : score[i] < best)) best = score[i];
    const double tol = 1e-12 * std::max(1.0, std::abs(best));
    std::vector<std::size_t> tied;
    for (std::size_t i = 0; i < C; ++i)
      if (!taken[i] && std::abs(score[i] - best) <= tol) tied.push_back(i);
    return tied.size() == 1 ? tied[0] : tied[rng.below(tied.size())];
  };

  Vec3 centroid{0, 0, 0};
  for (const auto& p : montage.positions())
    for (int k = 0; k < 3; ++k) centroid[k] += p[k] / static_cast<double>(C);
  std::vector<double> score(C);
  for (std::size_t i = 0; i < C; ++i) score[i] = distance(montage.position(i), centroid);
  std::vector<bool> taken(C, false);
  std::vector<std::size_t> chosen{pick(score, taken, false)};
  taken[chosen[0]] = true;

  std::vector<double> min_dist(C, std::numeric_limits<double>::infinity());
  while (chosen.size() < n_observed) {
    for (std::size_t i = 0; i < C; ++i)
      min_dist[i] = std::min(min_dist[i], distance(montage.position(i), montage.position(chosen.back())));
    const auto next = pick(min_dist, taken, true);
    taken[next] = true;
    chosen.push_back(next);
  }
  return LayoutSpec(std::move(chosen), C, montage.hash());
}

// ---- text formats ---------------------------------------------------------

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(std::string_view s, const std::string& ctx) {
  const auto t = trim(s);
  double v = 0.0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  require(ec == std::errc() && p == t.data() + t.size() && !t.empty(), ctx + ": cannot parse number '" + t + "'",
          ErrorKind::Format);
  return v;
}

inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), p);
}

/// CSV `label,x,y,z` with a header row. Shortest round-trip formatting keeps coordinates exact.
inline void save_montage_csv(const Montage& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write montage file " + path, ErrorKind::Io);
  out << "label,x,y,z\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& p = m.position(i);
    out << m.labels()[i] << ',' << format_double(p[0]) << ',' << format_double(p[1]) << ',' << format_double(p[2])
        << '\n';
  }
}

inline Montage load_montage_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot read montage file " + path, ErrorKind::Io);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), path + ": missing header", ErrorKind::Format);
  require(trim(line) == "label,x,y,z", path + ": header must be 'label,x,y,z'", ErrorKind::Format);
  std::vector<std::string> labels;
  std::vector<Vec3> pos;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    const auto ctx = path + ":" + std::to_string(lineno);
    require(cols.size() == 4, ctx + ": expected 4 columns", ErrorKind::Format);
    labels.push_back(trim(cols[0]));
    pos.push_back({parse_double(cols[1], ctx), parse_double(cols[2], ctx), parse_double(cols[3], ctx)});
  }
  return Montage(std::move(labels), std::move(pos));
}

inline void save_layout(const Montage& m, const LayoutSpec& layout, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write layout file " + path, ErrorKind::Io);
  for (std::size_t i : layout.observed()) out << m.labels().at(i) << '\n';
}

inline LayoutSpec load_layout(const Montage& m, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot read layout file " + path, ErrorKind::Io);
  std::vector<std::size_t> idx;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (!t.empty()) idx.push_back(m.index_of(t));
  }
  return LayoutSpec(std::move(idx), m.size(), m.hash());
}

}  // namespace cafe
