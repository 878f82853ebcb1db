#pragma once

// Ablation runners: schedule order, group granularity and training scheme,
// plus the one-shot versus rollout comparison. Every condition is trained
// from scratch once per seed on the same data; medians are taken over seeds.

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cafe/error.hpp"
#include "cafe/metrics.hpp"
#include "cafe/montage.hpp"
#include "cafe/rollout.hpp"
#include "cafe/synthdata.hpp"
#include "cafe/training.hpp"

namespace cafe {

enum class AblationAxis { Order, Granularity, Scheme };

inline AblationAxis parse_axis(std::string_view s) {
  if (s == "order") return AblationAxis::Order;
  if (s == "granularity") return AblationAxis::Granularity;
  if (s == "scheme") return AblationAxis::Scheme;
  throw Error(ErrorKind::Config, "unknown ablation axis '" + std::string(s) + "'");
}

inline const char* axis_name(AblationAxis a) {
  switch (a) {
    case AblationAxis::Order: return "order";
    case AblationAxis::Granularity: return "granularity";
    case AblationAxis::Scheme: return "scheme";
  }
  return "?";
}

struct AblationCondition {
  std::string label;
  TrainConfig config;
  std::optional<GroupSchedule> schedule;  // explicit schedule instead of G/splits
};

struct ConditionRun {
  std::string label;
  std::uint64_t seed = 0;
  MetricsReport report;
};

inline double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Trains one model and evaluates it on the test split (rollout inference).
inline MetricsReport train_and_evaluate(const Dataset& ds, const TrainConfig& cfg,
                                        const std::optional<GroupSchedule>& schedule = std::nullopt,
                                        const StftConfig& stft = {}) {
  const auto fitted = fit(ds.train, {}, ds.montage, ds.layout, cfg, schedule);
  const auto preds = reconstruct_many(fitted.model, ds.layout, anchors_of(ds.test, ds.layout));
  return evaluate(preds, ds.test, ds.layout.missing(), &fitted.model.schedule, stft);
}

/// Configuration for an explicit list of group sizes, ordered proximal-to-distal.
inline AblationCondition sized_condition(const std::string& label, const std::vector<std::size_t>& sizes,
                                         TrainConfig cfg) {
  cfg.G = sizes.size();
  cfg.split_fractions = fractions_from_sizes(sizes);
  cfg.order = OrderKind::ProximalToDistal;
  if (cfg.G == 1) cfg.scheme = Scheme::TeacherForcing;  // no history to sample
  return {label, cfg, std::nullopt};
}

inline std::vector<AblationCondition> order_conditions(const TrainConfig& base) {
  std::vector<AblationCondition> out;
  for (auto k : {OrderKind::ProximalToDistal, OrderKind::Random, OrderKind::DistalToProximal}) {
    TrainConfig c = base;
    c.order = k;
    out.push_back({order_kind_name(k), c, std::nullopt});
  }
  return out;
}

/// One condition per comma-separated schedule spec ("1x30", "5-10-15", ...).
/// Every spec must cover exactly `missing` channels.
inline std::vector<AblationCondition> granularity_conditions(const TrainConfig& base, const std::string& specs,
                                                             std::size_t missing) {
  std::vector<AblationCondition> out;
  std::stringstream ss(specs);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto sizes = parse_group_sizes(item);
    std::size_t total = 0;
    for (auto s : sizes) total += s;
    require(total == missing,
            "schedule '" + item + "' covers " + std::to_string(total) + " channels but " + std::to_string(missing) +
                " are missing",
            ErrorKind::Config);
    out.push_back(sized_condition(item, sizes, base));
  }
  require(!out.empty(), "granularity ablation needs at least one schedule", ErrorKind::Config);
  return out;
}

inline std::vector<AblationCondition> scheme_conditions(const TrainConfig& base) {
  std::vector<AblationCondition> out;
  for (auto s : {Scheme::TeacherForcing, Scheme::ScheduledSampling, Scheme::PureRollout}) {
    TrainConfig c = base;
    c.scheme = s;
    out.push_back({scheme_name(s), c, std::nullopt});
  }
  return out;
}

/// Runs every condition for seeds base_seed .. base_seed + n_seeds - 1.
/// Rows are ordered by condition, then seed.
inline std::vector<ConditionRun> run_conditions(const Dataset& ds, const std::vector<AblationCondition>& conditions,
                                                std::uint64_t base_seed, std::size_t n_seeds,
                                                const StftConfig& stft = {}) {
  require(n_seeds >= 1, "ablation needs at least one seed", ErrorKind::Config);
  std::vector<ConditionRun> rows;
  for (const auto& cond : conditions)
    for (std::size_t i = 0; i < n_seeds; ++i) {
      TrainConfig cfg = cond.config;
      cfg.seed = base_seed + i;
      rows.push_back({cond.label, cfg.seed, train_and_evaluate(ds, cfg, cond.schedule, stft)});
    }
  return rows;
}

inline std::vector<AblationCondition> axis_conditions(AblationAxis axis, const TrainConfig& base,
                                                      const std::string& schedules, std::size_t missing) {
  switch (axis) {
    case AblationAxis::Order: return order_conditions(base);
    case AblationAxis::Granularity: return granularity_conditions(base, schedules, missing);
    case AblationAxis::Scheme: return scheme_conditions(base);
  }
  return {};
}

/// Median of a metric over the seeds of one condition.
template <class F>
double condition_median(const std::vector<ConditionRun>& rows, const std::string& label, F metric) {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.label == label) v.push_back(metric(r.report));
  return median(v);
}

inline std::string join_values(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + fmt_metric(v[i]);
  return s;
}

/// CSV with one row per (condition, seed), then one `median` row per condition.
/// The cumulative column lists the per-step cumulative NMSE separated by ';'.
inline std::string ablation_csv(AblationAxis axis, const std::vector<ConditionRun>& rows) {
  std::ostringstream os;
  os << "axis,condition,seed,nmse,pcc,snr_db,spec_mae,cumulative_nmse\n";
  std::vector<std::string> labels;
  for (const auto& r : rows) {
    if (std::find(labels.begin(), labels.end(), r.label) == labels.end()) labels.push_back(r.label);
    os << axis_name(axis) << ',' << r.label << ',' << r.seed << ',' << fmt_metric(r.report.nmse) << ','
       << fmt_metric(r.report.pcc) << ',' << fmt_metric(r.report.snr_db) << ',' << fmt_metric(r.report.spec_mae) << ','
       << join_values(r.report.cumulative_nmse) << '\n';
  }
  for (const auto& label : labels) {
    std::vector<std::vector<double>> curves;
    for (const auto& r : rows)
      if (r.label == label) curves.push_back(r.report.cumulative_nmse);
    std::vector<double> curve(curves.front().size());
    for (std::size_t k = 0; k < curve.size(); ++k) {
      std::vector<double> at;
      for (const auto& c : curves) at.push_back(c[k]);
      curve[k] = median(at);
    }
    os << axis_name(axis) << ',' << label << ",median,"
       << fmt_metric(condition_median(rows, label, [](const MetricsReport& m) { return m.nmse; })) << ','
       << fmt_metric(condition_median(rows, label, [](const MetricsReport& m) { return m.pcc; })) << ','
       << fmt_metric(condition_median(rows, label, [](const MetricsReport& m) { return m.snr_db; })) << ','
       << fmt_metric(condition_median(rows, label, [](const MetricsReport& m) { return m.spec_mae; })) << ','
       << join_values(curve) << '\n';
  }
  return os.str();
}

// ---- one-shot versus rollout ----------------------------------------------

struct OneshotComparison {
  MetricsReport orig;  // separately trained single-group model
  MetricsReport ar;    // grouped model with rollout inference
};

/// The baseline is the same backbone trained as a single group with teacher
/// forcing and evaluated in one shot.
inline OneshotComparison compare_oneshot(const Dataset& ds, const TrainConfig& cfg, const StftConfig& stft = {}) {
  TrainConfig base = cfg;
  base.G = 1;
  base.split_fractions.clear();
  base.scheme = Scheme::TeacherForcing;
  return {train_and_evaluate(ds, base, std::nullopt, stft), train_and_evaluate(ds, cfg, std::nullopt, stft)};
}

struct GainRow {
  std::string metric;
  double orig = 0.0, ar = 0.0, gain = 0.0;
};

/// Orig / +AR / Gain per metric. NMSE and Spec-MAE are lower-is-better.
inline std::vector<GainRow> gain_rows(const MetricsReport& orig, const MetricsReport& ar) {
  auto row = [](const char* name, double o, double a, bool lower) { return GainRow{name, o, a, gain(o, a, lower)}; };
  return {row("nmse", orig.nmse, ar.nmse, true), row("pcc", orig.pcc, ar.pcc, false),
          row("snr_db", orig.snr_db, ar.snr_db, false), row("spec_mae", orig.spec_mae, ar.spec_mae, true)};
}

}  // namespace cafe
