#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cafe/signal.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs the CLI with `args` through the shell; `env` is prepended verbatim.
Run cli(const fs::path& dir, const std::string& args, const std::string& env = "env -u CAFE_SEED") {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = env + " '" + CAFE_CLI_PATH + "' " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

const std::string kGenArgs = "--ch 12 --factor 4 --samples 64 --n-train 6 --n-val 2 --n-test 2";
const std::string kTrainArgs = "--backbone mlp --hidden 8 --epochs 2 --batch-size 3";

}  // namespace

TEST(Cli, UsageErrorsExitWithTwo) {
  const auto dir = cafe::test::scratch_dir();
  EXPECT_EQ(cli(dir, "").code, 2);
  EXPECT_EQ(cli(dir, "frobnicate").code, 2);
  EXPECT_EQ(cli(dir, "gen").code, 2);
  EXPECT_EQ(cli(dir, "gen --out x --ch many").code, 2);
  EXPECT_EQ(cli(dir, "gen --out x --config /nonexistent.ini").code, 2);
  EXPECT_EQ(cli(dir, "gradcheck --seeds 1", "CAFE_SEED=abc").code, 2);
  EXPECT_EQ(cli(dir, "--help").code, 0);
}

TEST(Cli, GenTrainEvalPipeline) {
  const auto dir = cafe::test::scratch_dir();
  const auto data = (dir / "data").string(), model = (dir / "m.model").string();
  ASSERT_EQ(cli(dir, "gen --out '" + data + "' --seed 3 " + kGenArgs).code, 0);
  EXPECT_TRUE(fs::exists(fs::path(data) / "manifest.txt"));
  EXPECT_EQ(cli(dir, "gen --out '" + data + "' " + kGenArgs).code, 1);  // not empty, no --force
  EXPECT_EQ(cli(dir, "gen --out '" + data + "' --force --seed 3 " + kGenArgs).code, 0);

  const auto tr = cli(dir, "train --data '" + data + "' --out '" + model + "' " + kTrainArgs);
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_NE(tr.err.find("[train]"), std::string::npos);  // resolved config echo
  const auto log = slurp(model + ".log.csv");
  EXPECT_EQ(log.rfind("epoch,loss,loss_g1,loss_g2,loss_g3,val_nmse\n", 0), 0u);

  const auto ev = cli(dir, "eval --model '" + model + "' --data '" + data + "' --oneshot-baseline");
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_EQ(ev.out.rfind("row,nmse,pcc,snr_db,spec_mae,per_group_nmse\nOrig,", 0), 0u) << ev.out;
  EXPECT_NE(ev.out.find("\n+AR,"), std::string::npos);
  EXPECT_NE(ev.out.find("\nGain,"), std::string::npos);
  EXPECT_NE(ev.out.find("# config_hash=0x"), std::string::npos);

  // Split directory is accepted as well as the dataset root.
  EXPECT_EQ(cli(dir, "eval --model '" + model + "' --data '" + data + "/test'").code, 0);
  EXPECT_EQ(cli(dir, "eval --model '" + model + "' --data '" + data + "' --noise-snr 10").code, 0);
}

TEST(Cli, MontageMismatchIsARuntimeFailure) {
  const auto dir = cafe::test::scratch_dir();
  const auto a = (dir / "a").string(), b = (dir / "b").string(), model = (dir / "m.model").string();
  ASSERT_EQ(cli(dir, "gen --out '" + a + "' " + kGenArgs).code, 0);
  ASSERT_EQ(cli(dir, "gen --out '" + b + "' --kind ring " + kGenArgs).code, 0);
  ASSERT_EQ(cli(dir, "train --data '" + a + "' --out '" + model + "' " + kTrainArgs).code, 0);
  const auto r = cli(dir, "eval --model '" + model + "' --data '" + b + "'");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("montage"), std::string::npos) << r.err;
}

TEST(Cli, RepeatedRunsAreByteIdentical) {
  const auto dir = cafe::test::scratch_dir();
  for (const char* tag : {"1", "2"}) {
    const auto sub = dir / tag;
    fs::create_directories(sub);
    ASSERT_EQ(cli(sub, "gen --out '" + (sub / "data").string() + "' " + kGenArgs, "CAFE_SEED=5").code, 0);
    ASSERT_EQ(cli(sub, "train --data '" + (sub / "data").string() + "' --out '" + (sub / "m.model").string() + "' " +
                           kTrainArgs, "CAFE_SEED=5").code, 0);
    ASSERT_EQ(cli(sub, "eval --model '" + (sub / "m.model").string() + "' --data '" + (sub / "data").string() +
                           "' --out '" + (sub / "eval.csv").string() + "'", "CAFE_SEED=5").code, 0);
  }
  for (const char* f : {"data/manifest.txt", "data/train/0000.cafesig", "m.model", "m.model.log.csv", "eval.csv"})
    EXPECT_EQ(slurp(dir / "1" / f), slurp(dir / "2" / f)) << f;
}

TEST(Cli, SeedPrecedence) {
  // Environment < explicit flag: a flag overrides CAFE_SEED.
  const auto dir = cafe::test::scratch_dir();
  ASSERT_EQ(cli(dir, "gen --out '" + (dir / "env").string() + "' " + kGenArgs, "CAFE_SEED=8").code, 0);
  ASSERT_EQ(cli(dir, "gen --out '" + (dir / "flag").string() + "' --seed 8 " + kGenArgs).code, 0);
  ASSERT_EQ(cli(dir, "gen --out '" + (dir / "both").string() + "' --seed 8 " + kGenArgs, "CAFE_SEED=9").code, 0);
  ASSERT_EQ(cli(dir, "gen --out '" + (dir / "other").string() + "' " + kGenArgs, "CAFE_SEED=9").code, 0);
  const auto block = [&](const char* sub) { return slurp(dir / sub / "train" / "0000.cafesig"); };
  EXPECT_EQ(block("env"), block("flag"));
  EXPECT_EQ(block("both"), block("flag"));
  EXPECT_NE(block("other"), block("flag"));
}

TEST(Cli, ConfigFileIsOverriddenByFlags) {
  const auto dir = cafe::test::scratch_dir();
  std::ofstream(dir / "c.ini") << "[data]\nchannels = 16\nsamples = 64\nn_train = 2\nn_val = 0\nn_test = 1\n";
  ASSERT_EQ(cli(dir, "gen --config '" + (dir / "c.ini").string() + "' --out '" + (dir / "d").string() + "' --ch 20")
                .code,
            0);
  const auto b = cafe::load_block((dir / "d" / "train" / "0000.cafesig").string());
  EXPECT_EQ(b.channels(), 20u);
  EXPECT_EQ(b.samples(), 64u);
  std::ofstream(dir / "bad.ini") << "[data]\nchanels = 16\n";
  EXPECT_EQ(cli(dir, "gen --config '" + (dir / "bad.ini").string() + "' --out '" + (dir / "e").string() + "'").code,
            2);
}

TEST(Cli, GradcheckAndAblate) {
  const auto dir = cafe::test::scratch_dir();
  const auto gc = cli(dir, "gradcheck --seeds 2");
  EXPECT_EQ(gc.code, 0) << gc.out;
  EXPECT_EQ(gc.out.rfind("check,max_rel_error,tolerance,seeds,status\n", 0), 0u);
  EXPECT_EQ(gc.out.find("FAIL"), std::string::npos);

  const auto data = (dir / "data").string();
  ASSERT_EQ(cli(dir, "gen --out '" + data + "' " + kGenArgs).code, 0);
  const auto ab = cli(dir, "ablate scheme --data '" + data + "' --seeds 1 " + kTrainArgs);
  ASSERT_EQ(ab.code, 0) << ab.err;
  EXPECT_EQ(ab.out.rfind("axis,condition,seed,", 0), 0u);
  EXPECT_NE(ab.out.find("scheme,rollout,median,"), std::string::npos);
  EXPECT_EQ(cli(dir, "ablate depth --data '" + data + "'").code, 2);
  EXPECT_EQ(cli(dir, "ablate granularity --data '" + data + "' --schedules 2x2 --seeds 1").code, 2);
}
