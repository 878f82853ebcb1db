#pragma once

// Run configuration: a flat `key = value` file split into [data], [train],
// [eval] and [ablate] sections. Every key has a default; unknown keys are
// rejected. Command-line flags are applied after the file and win.

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cafe/error.hpp"
#include "cafe/montage.hpp"
#include "cafe/rng.hpp"
#include "cafe/synthdata.hpp"
#include "cafe/training.hpp"

namespace cafe {

struct EvalOptions {
  bool oneshot_baseline = false;
  double noise_snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t noise_seed = 0;
  std::size_t stft_window = 64;
  std::size_t stft_hop = 32;
};

struct AblateOptions {
  std::size_t seeds = 5;
  std::string schedules = "1x30,5x6,5-10-15,10x3,30x1";
};

struct RunConfig {
  DatasetSpec data;
  TrainConfig train;
  EvalOptions eval;
  AblateOptions ablate;
};

namespace detail {

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    require(!v.empty() && v[0] != '-', "", ErrorKind::Config);
    x = std::stoull(v, &pos);
  } catch (...) {
    pos = 0;
  }
  require(pos == v.size() && !v.empty(), key + ": expected a non-negative integer, got '" + v + "'", ErrorKind::Config);
  return static_cast<std::size_t>(x);
}

inline double parse_real(const std::string& key, const std::string& v) {
  if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
  try {
    return parse_double(v, key);
  } catch (const Error&) {
    throw Error(ErrorKind::Config, key + ": expected a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorKind::Config, key + ": expected true/false, got '" + v + "'");
}

inline std::string fmt_real(double v) { return std::isinf(v) ? (v > 0 ? "inf" : "-inf") : format_double(v); }

template <class F>
auto as_config_error(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw;
    throw Error(ErrorKind::Config, key + ": " + e.what());
  }
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline std::vector<std::pair<std::string, Field>> build_fields() {
  using K = std::string;
  std::vector<std::pair<std::string, Field>> f;
  auto size_field = [&](K key, auto member) {
    f.push_back({key, {[key, member](RunConfig& c, const K& v) { member(c) = parse_size(key, v); },
                       [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }}});
  };
  auto real_field = [&](K key, auto member) {
    f.push_back({key, {[key, member](RunConfig& c, const K& v) { member(c) = parse_real(key, v); },
                       [member](const RunConfig& c) { return fmt_real(member(const_cast<RunConfig&>(c))); }}});
  };

  f.push_back({"data.kind",
               {[](RunConfig& c, const K& v) {
                  c.data.montage_kind = as_config_error("data.kind", [&] { return parse_montage_kind(v); });
                },
                [](const RunConfig& c) { return std::string(montage_kind_name(c.data.montage_kind)); }}});
  f.push_back({"data.generator",
               {[](RunConfig& c, const K& v) {
                  c.data.generator = as_config_error("data.generator", [&] { return parse_gen_kind(v); });
                },
                [](const RunConfig& c) { return std::string(gen_kind_name(c.data.generator)); }}});
  size_field("data.channels", [](RunConfig& c) -> std::size_t& { return c.data.channels; });
  size_field("data.factor", [](RunConfig& c) -> std::size_t& { return c.data.factor; });
  size_field("data.samples", [](RunConfig& c) -> std::size_t& { return c.data.gen.samples; });
  real_field("data.sample_rate_hz", [](RunConfig& c) -> double& { return c.data.gen.sample_rate_hz; });
  size_field("data.sources", [](RunConfig& c) -> std::size_t& { return c.data.gen.n_sources; });
  real_field("data.sigma_fraction", [](RunConfig& c) -> double& { return c.data.sigma_fraction; });
  real_field("data.band_low_hz", [](RunConfig& c) -> double& { return c.data.gen.band_low_hz; });
  real_field("data.band_high_hz", [](RunConfig& c) -> double& { return c.data.gen.band_high_hz; });
  real_field("data.noise_std", [](RunConfig& c) -> double& { return c.data.gen.noise_std; });
  size_field("data.seed", [](RunConfig& c) -> std::size_t& { return c.data.gen.seed; });
  size_field("data.n_train", [](RunConfig& c) -> std::size_t& { return c.data.n_train; });
  size_field("data.n_val", [](RunConfig& c) -> std::size_t& { return c.data.n_val; });
  size_field("data.n_test", [](RunConfig& c) -> std::size_t& { return c.data.n_test; });

  f.push_back({"train.backbone",
               {[](RunConfig& c, const K& v) {
                  c.train.backbone = as_config_error("train.backbone", [&] { return parse_backbone(v); });
                },
                [](const RunConfig& c) { return std::string(backbone_name(c.train.backbone)); }}});
  f.push_back({"train.scheme",
               {[](RunConfig& c, const K& v) {
                  c.train.scheme = as_config_error("train.scheme", [&] { return parse_scheme(v); });
                },
                [](const RunConfig& c) { return std::string(scheme_name(c.train.scheme)); }}});
  f.push_back({"train.order",
               {[](RunConfig& c, const K& v) {
                  c.train.order = as_config_error("train.order", [&] { return parse_order_kind(v); });
                },
                [](const RunConfig& c) { return std::string(order_kind_name(c.train.order)); }}});
  f.push_back({"train.input_mode",
               {[](RunConfig& c, const K& v) {
                  c.train.input_mode = as_config_error("train.input_mode", [&] { return parse_input_mode(v); });
                },
                [](const RunConfig& c) { return std::string(input_mode_name(c.train.input_mode)); }}});
  f.push_back({"train.optimizer",
               {[](RunConfig& c, const K& v) {
                  c.train.optimizer = as_config_error("train.optimizer", [&] { return parse_optimizer(v); });
                },
                [](const RunConfig& c) {
                  return std::string(c.train.optimizer == OptimizerKind::Adam ? "adam" : "sgd");
                }}});
  size_field("train.G", [](RunConfig& c) -> std::size_t& { return c.train.G; });
  f.push_back({"train.splits",
               {[](RunConfig& c, const K& v) {
                  std::vector<Fraction> fr;
                  std::stringstream ss(v);
                  std::string item;
                  while (std::getline(ss, item, ','))
                    if (!trim(item).empty())
                      fr.push_back(as_config_error("train.splits", [&] { return Fraction::parse(trim(item)); }));
                  as_config_error("train.splits", [&] { validate_fractions(fr); });
                  c.train.split_fractions = std::move(fr);
                },
                [](const RunConfig& c) {
                  std::string s;
                  for (std::size_t i = 0; i < c.train.split_fractions.size(); ++i)
                    s += (i ? "," : "") + c.train.split_fractions[i].str();
                  return s;
                }}});
  real_field("train.pi", [](RunConfig& c) -> double& { return c.train.pi; });
  real_field("train.pi_decay", [](RunConfig& c) -> double& { return c.train.pi_decay; });
  size_field("train.epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; });
  size_field("train.batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
  real_field("train.lr", [](RunConfig& c) -> double& { return c.train.learning_rate; });
  size_field("train.seed", [](RunConfig& c) -> std::size_t& { return c.train.seed; });
  size_field("train.hidden", [](RunConfig& c) -> std::size_t& { return c.train.hyper.hidden; });
  size_field("train.kernel", [](RunConfig& c) -> std::size_t& { return c.train.hyper.kernel; });
  size_field("train.model_dim", [](RunConfig& c) -> std::size_t& { return c.train.hyper.model_dim; });

  f.push_back({"eval.oneshot_baseline",
               {[](RunConfig& c, const K& v) { c.eval.oneshot_baseline = parse_bool("eval.oneshot_baseline", v); },
                [](const RunConfig& c) { return std::string(c.eval.oneshot_baseline ? "true" : "false"); }}});
  real_field("eval.noise_snr_db", [](RunConfig& c) -> double& { return c.eval.noise_snr_db; });
  size_field("eval.noise_seed", [](RunConfig& c) -> std::size_t& { return c.eval.noise_seed; });
  size_field("eval.stft_window", [](RunConfig& c) -> std::size_t& { return c.eval.stft_window; });
  size_field("eval.stft_hop", [](RunConfig& c) -> std::size_t& { return c.eval.stft_hop; });

  size_field("ablate.seeds", [](RunConfig& c) -> std::size_t& { return c.ablate.seeds; });
  f.push_back({"ablate.schedules", {[](RunConfig& c, const K& v) { c.ablate.schedules = v; },
                                    [](const RunConfig& c) { return c.ablate.schedules; }}});
  return f;
}

inline const std::vector<std::pair<std::string, Field>>& fields() {
  static const auto f = build_fields();
  return f;
}

}  // namespace detail

/// Sets `section.key`; throws a Config error on unknown keys or bad values.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : detail::fields())
    if (name == key) return field.set(cfg, value);
  throw Error(ErrorKind::Config, "unknown config key '" + key + "'");
}

inline bool is_config_key(const std::string& key) {
  for (const auto& [name, field] : detail::fields())
    if (name == key) return true;
  return false;
}

/// Parses config text into ordered (section.key, value) pairs.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                         const std::string& origin = "config") {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line, section;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    const std::string where = origin + ":" + std::to_string(lineno);
    if (body.empty()) continue;
    if (body.front() == '[') {
      require(body.back() == ']' && body.size() > 2, where + ": malformed section header", ErrorKind::Config);
      section = trim(body.substr(1, body.size() - 2));
      require(section == "data" || section == "train" || section == "eval" || section == "ablate",
              where + ": unknown section [" + section + "]", ErrorKind::Config);
      continue;
    }
    const auto eq = body.find('=');
    require(eq != std::string::npos, where + ": expected key = value", ErrorKind::Config);
    require(!section.empty(), where + ": key outside of a section", ErrorKind::Config);
    const std::string key = section + "." + trim(body.substr(0, eq));
    require(is_config_key(key), where + ": unknown config key '" + key + "'", ErrorKind::Config);
    out.emplace_back(key, trim(body.substr(eq + 1)));
  }
  return out;
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot read config " + path, ErrorKind::Config);
  std::ostringstream ss;
  ss << in.rdbuf();
  for (const auto& [k, v] : parse_config_text(ss.str(), path)) set_config_value(cfg, k, v);
}

/// Fully resolved configuration, one `key = value` per line under section headers.
inline std::string config_echo(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& [name, field] : detail::fields()) {
    const auto dot = name.find('.');
    const std::string sec = name.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    os << name.substr(dot + 1) << " = " << field.get(cfg) << '\n';
  }
  return os.str();
}

inline std::uint64_t config_hash(const RunConfig& cfg) {
  const auto s = config_echo(cfg);
  return fnv1a(s.data(), s.size());
}

}  // namespace cafe
