// cafe: dataset generation, training, evaluation and ablations.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "cafe/cafe.hpp"

namespace fs = std::filesystem;
using namespace cafe;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Flags that map onto config keys; applied after the config file in command-line order.
struct Overrides {
  std::vector<std::pair<std::string, std::string>> values;

  void bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { values.emplace_back(key, v); }, help + " [" + key + "]");
  }
};

struct Common {
  std::string config_path;
  std::optional<std::string> out;
  Overrides overrides;
};

void bind_data_keys(CLI::App* app, Overrides& o) {
  o.bind(app, "--kind", "data.kind", "montage kind: grid, ring, scalp");
  o.bind(app, "--generator", "data.generator", "block or linear");
  o.bind(app, "--ch", "data.channels", "high-density channel count");
  o.bind(app, "--factor", "data.factor", "upsampling factor (observed = ch / factor)");
  o.bind(app, "--samples", "data.samples", "samples per block");
  o.bind(app, "--rate", "data.sample_rate_hz", "sample rate in Hz");
  o.bind(app, "--sources", "data.sources", "latent source count");
  o.bind(app, "--sigma-fraction", "data.sigma_fraction", "mixing width as a fraction of the montage diameter");
  o.bind(app, "--band-low", "data.band_low_hz", "source band lower edge");
  o.bind(app, "--band-high", "data.band_high_hz", "source band upper edge");
  o.bind(app, "--noise-std", "data.noise_std", "white sensor noise std");
  o.bind(app, "--n-train", "data.n_train", "training blocks");
  o.bind(app, "--n-val", "data.n_val", "validation blocks");
  o.bind(app, "--n-test", "data.n_test", "test blocks");
}

void bind_train_keys(CLI::App* app, Overrides& o) {
  o.bind(app, "--backbone", "train.backbone", "mlp, conv or attn");
  o.bind(app, "--scheme", "train.scheme", "tf, ss or rollout");
  o.bind(app, "--pi", "train.pi", "teacher-forcing probability for scheduled sampling");
  o.bind(app, "--pi-decay", "train.pi_decay", "per-epoch linear decrease of pi");
  o.bind(app, "--G", "train.G", "number of groups");
  o.bind(app, "--splits", "train.splits", "G-1 comma-separated split fractions, e.g. 1/6,1/2");
  o.bind(app, "--order", "train.order", "proximal, distal or random");
  o.bind(app, "--epochs", "train.epochs", "training epochs");
  o.bind(app, "--batch-size", "train.batch_size", "samples per optimizer step");
  o.bind(app, "--lr", "train.lr", "learning rate");
  o.bind(app, "--optimizer", "train.optimizer", "adam or sgd");
  o.bind(app, "--input-mode", "train.input_mode", "mask_appended or masked_only");
  o.bind(app, "--hidden", "train.hidden", "hidden width");
  o.bind(app, "--kernel", "train.kernel", "depthwise kernel size (odd)");
  o.bind(app, "--model-dim", "train.model_dim", "attention model width (0 = T)");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (const char* env = std::getenv("CAFE_SEED")) {
    const std::string s = env;
    for (const char* key : {"data.seed", "train.seed", "eval.noise_seed"}) {
      try {
        set_config_value(cfg, key, s);
      } catch (const Error&) {
        throw Error(ErrorKind::Config, "CAFE_SEED must be a non-negative integer, got '" + s + "'");
      }
    }
  }
  if (!c.config_path.empty()) apply_config_file(cfg, c.config_path);
  for (const auto& [k, v] : c.overrides.values) set_config_value(cfg, k, v);
  return cfg;
}

/// Writes `body` plus the provenance trailer to --out, or to stdout.
void emit_csv(const std::optional<std::string>& out, const std::string& body, const RunConfig& cfg) {
  const std::string text = body + "# config_hash=" + detail::hex64(config_hash(cfg)) + "\n";
  if (!out) {
    std::cout << text;
    return;
  }
  std::ofstream f(*out, std::ios::binary);
  require(static_cast<bool>(f), "cannot write " + *out, ErrorKind::Io);
  f << text;
  require(static_cast<bool>(f), "write failed: " + *out, ErrorKind::Io);
}

void echo_config(const RunConfig& cfg) { std::cerr << config_echo(cfg); }

// ---- commands --------------------------------------------------------------

int cmd_gen(const Common& c, const std::string& dir, bool force) {
  const RunConfig cfg = resolve(c);
  echo_config(cfg);
  cfg.data.gen.validate();
  const Dataset ds = make_dataset(dir, cfg.data, force);
  std::cerr << "wrote " << ds.train.size() << "/" << ds.val.size() << "/" << ds.test.size() << " blocks, "
            << ds.layout.observed().size() << " anchors of " << ds.montage.size() << " channels to " << dir << '\n';
  return 0;
}

int cmd_train(const Common& c, const std::string& data, const std::string& model_out,
              const std::optional<std::string>& log_out) {
  const RunConfig cfg = resolve(c);
  echo_config(cfg);
  cfg.train.validate();
  const Dataset ds = load_dataset(data);
  require(!ds.train.empty(), data + ": no training blocks", ErrorKind::Io);
  const FitResult res = fit(ds.train, ds.val, ds.montage, ds.layout, cfg.train);
  save_model(res.model, model_out);
  emit_csv(log_out ? log_out : std::optional<std::string>(model_out + ".log.csv"), training_log_csv(res.log), cfg);
  const auto& last = res.log.back();
  std::cerr << "final loss " << fmt_metric(last.loss);
  if (last.val_nmse) std::cerr << ", val nmse " << fmt_metric(*last.val_nmse);
  std::cerr << '\n';
  return 0;
}

/// `path` may be a dataset root or one of its split directories.
std::pair<Dataset, std::vector<SignalBlock>> load_eval_data(const std::string& path) {
  fs::path p(path);
  if (fs::exists(p / "manifest.txt")) {
    Dataset ds = load_dataset(p.string());
    auto test = ds.test;
    return {std::move(ds), std::move(test)};
  }
  fs::path root = p.lexically_normal();
  if (root.filename().empty()) root = root.parent_path();
  root = root.parent_path();
  require(fs::exists(root / "manifest.txt"), path + ": not a dataset or split directory", ErrorKind::Io);
  Dataset ds = load_dataset(root.string());
  return {std::move(ds), load_split(p.string())};
}

int cmd_eval(const Common& c, const std::string& model_path, const std::string& data,
             const std::optional<std::string>& baseline_path) {
  const RunConfig cfg = resolve(c);
  echo_config(cfg);
  auto [ds, blocks] = load_eval_data(data);
  require(!blocks.empty(), data + ": no blocks to evaluate", ErrorKind::Io);
  const ModelArtifact model = load_model(model_path, ds.montage.hash());
  require(model.observed == ds.layout.observed(), "model anchors do not match the dataset layout",
          ErrorKind::Mismatch);

  auto anchors = anchors_of(blocks, ds.layout);
  if (!std::isinf(cfg.eval.noise_snr_db))
    for (std::size_t i = 0; i < anchors.size(); ++i)
      anchors[i] = inject_anchor_noise(anchors[i], cfg.eval.noise_snr_db, hash_combine(cfg.eval.noise_seed, i));

  const StftConfig stft{cfg.eval.stft_window, cfg.eval.stft_hop};
  const auto missing = ds.layout.missing();
  const auto ar =
      evaluate(reconstruct_many(model, ds.layout, anchors), blocks, missing, &model.schedule, stft);

  std::ostringstream os;
  os << "row,nmse,pcc,snr_db,spec_mae,per_group_nmse\n";
  auto row = [&](const char* name, const MetricsReport& r) {
    os << name << ',' << fmt_metric(r.nmse) << ',' << fmt_metric(r.pcc) << ',' << fmt_metric(r.snr_db) << ','
       << fmt_metric(r.spec_mae) << ',' << join_values(r.per_group_nmse) << '\n';
  };
  if (cfg.eval.oneshot_baseline || baseline_path) {
    std::optional<ModelArtifact> other;
    if (baseline_path) {
      other = load_model(*baseline_path, ds.montage.hash());
      require(other->observed == ds.layout.observed(), "baseline anchors do not match the dataset layout",
              ErrorKind::Mismatch);
    }
    const ModelArtifact& base = other ? *other : model;
    // The one-shot output is scored on the rollout model's groups so the per-group columns line up.
    const auto orig = evaluate(reconstruct_many(base, ds.layout, anchors, true), blocks, missing, &model.schedule, stft);
    row("Orig", orig);
    row("+AR", ar);
    const auto g = gain_rows(orig, ar);
    os << "Gain," << fmt_metric(g[0].gain) << ',' << fmt_metric(g[1].gain) << ',' << fmt_metric(g[2].gain) << ','
       << fmt_metric(g[3].gain) << ",\n";
  } else {
    row("+AR", ar);
  }
  emit_csv(c.out, os.str(), cfg);
  return 0;
}

int cmd_ablate(const Common& c, const std::string& axis_name_, const std::string& data) {
  const RunConfig cfg = resolve(c);
  echo_config(cfg);
  cfg.train.validate();
  const AblationAxis axis = parse_axis(axis_name_);
  const Dataset ds = load_dataset(data);
  require(!ds.train.empty() && !ds.test.empty(), data + ": ablation needs train and test blocks", ErrorKind::Io);
  const auto conditions = axis_conditions(axis, cfg.train, cfg.ablate.schedules, ds.layout.missing().size());
  const auto rows = run_conditions(ds, conditions, cfg.train.seed, cfg.ablate.seeds,
                                   StftConfig{cfg.eval.stft_window, cfg.eval.stft_hop});
  emit_csv(c.out, ablation_csv(axis, rows), cfg);
  return 0;
}

int cmd_gradcheck(std::size_t seeds, std::uint64_t base_seed) {
  bool ok = true;
  std::cout << "check,max_rel_error,tolerance,seeds,status\n";
  for (const auto& r : run_gradcheck_battery(seeds, base_seed)) {
    std::cout << r.name << ',' << fmt_metric(r.max_rel_error) << ',' << fmt_metric(r.tolerance) << ',' << r.seeds
              << ',' << (r.passed() ? "PASS" : "FAIL") << '\n';
    ok = ok && r.passed();
  }
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometry-ordered group-wise reconstruction of missing channels"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  auto add_common = [](CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
  };

  Common gen_c, train_c, eval_c, ablate_c;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset directory");
  std::string gen_out;
  bool gen_force = false;
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "dataset directory")->required();
  gen->add_flag("--force", gen_force, "overwrite a non-empty directory");
  gen_c.overrides.bind(gen, "--seed", "data.seed", "dataset seed");
  bind_data_keys(gen, gen_c.overrides);

  auto* train = app.add_subcommand("train", "train a predictor");
  std::string train_data, train_out;
  std::optional<std::string> train_log;
  add_common(train, train_c);
  train->add_option("--data", train_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", train_out, "model artifact path")->required();
  train->add_option("--log", train_log, "training log CSV (default: <out>.log.csv)");
  train_c.overrides.bind(train, "--seed", "train.seed", "training seed");
  bind_train_keys(train, train_c.overrides);

  auto* eval = app.add_subcommand("eval", "evaluate a model on a dataset or split directory");
  std::string eval_model, eval_data;
  std::optional<std::string> baseline_model;
  add_common(eval, eval_c);
  eval->add_option("--model", eval_model, "model artifact")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "dataset root or split directory")->required();
  eval->add_option("--out", eval_c.out, "metrics CSV (default: stdout)");
  eval->add_option("--baseline-model", baseline_model, "separately trained one-shot model for the Orig row")
      ->check(CLI::ExistingFile);
  eval->add_flag_function(
      "--oneshot-baseline",
      [&](std::int64_t) { eval_c.overrides.values.emplace_back("eval.oneshot_baseline", "true"); },
      "also report the one-shot baseline and the gain");
  eval_c.overrides.bind(eval, "--noise-snr", "eval.noise_snr_db", "anchor SNR in dB before reconstruction");
  eval_c.overrides.bind(eval, "--noise-seed", "eval.noise_seed", "anchor noise seed");
  eval_c.overrides.bind(eval, "--stft-window", "eval.stft_window", "STFT window length");
  eval_c.overrides.bind(eval, "--stft-hop", "eval.stft_hop", "STFT hop");

  auto* ablate = app.add_subcommand("ablate", "run an ablation matrix over seeds");
  std::string axis, ablate_data;
  add_common(ablate, ablate_c);
  ablate->add_option("axis", axis, "order, granularity or scheme")
      ->required()
      ->check(CLI::IsMember({"order", "granularity", "scheme"}));
  ablate->add_option("--data", ablate_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ablate->add_option("--out", ablate_c.out, "results CSV (default: stdout)");
  ablate_c.overrides.bind(ablate, "--seeds", "ablate.seeds", "number of training seeds per condition");
  ablate_c.overrides.bind(ablate, "--schedules", "ablate.schedules", "granularity schedules, e.g. 1x30,5-10-15,30x1");
  ablate_c.overrides.bind(ablate, "--seed", "train.seed", "first training seed");
  bind_train_keys(ablate, ablate_c.overrides);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every layer and backbone");
  std::size_t gc_seeds = 10;
  std::optional<std::uint64_t> gc_seed;
  gradcheck->add_option("--seeds", gc_seeds, "seeds per check")->check(CLI::PositiveNumber);
  gradcheck->add_option("--seed", gc_seed, "first seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen(gen_c, gen_out, gen_force);
    if (*train) return cmd_train(train_c, train_data, train_out, train_log);
    if (*eval) return cmd_eval(eval_c, eval_model, eval_data, baseline_model);
    if (*ablate) return cmd_ablate(ablate_c, axis, ablate_data);
    if (*gradcheck) {
      std::uint64_t base = 1;
      if (gc_seed) {
        base = *gc_seed;
      } else if (const char* env = std::getenv("CAFE_SEED")) {
        RunConfig tmp;
        try {
          set_config_value(tmp, "train.seed", env);
        } catch (const Error&) {
          throw Error(ErrorKind::Config, "CAFE_SEED must be a non-negative integer");
        }
        base = tmp.train.seed;
      }
      return cmd_gradcheck(gc_seeds, base);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::Config ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
