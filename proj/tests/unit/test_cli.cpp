#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "iwadv/cli/commands.hpp"
#include "iwadv/spikesim/trace_io.hpp"

namespace fs = std::filesystem;
using namespace iwadv::cli;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("iwadv_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

// Small enough to train in a second or two.
std::vector<std::string> tiny_train(const fs::path& out) {
  return {"train", "--out", out.string(), "--seed", "3", "--set", "sim.frames=1200", "--set", "train.batch=2",
          "--set", "model.filters=4", "--set", "model.disc_filters=4", "--steps", "3"};
}

}  // namespace

// ---------------------------------------------------------------- config

TEST(Config, DefaultsAreTyped) {
  RunConfig c;
  EXPECT_EQ(c.u64("run.seed"), 0u);
  EXPECT_DOUBLE_EQ(c.real("sim.tau"), 0.7);
  EXPECT_EQ(c.counts("snr.ks"), (std::vector<std::size_t>{1, 4, 16, 64}));
  EXPECT_FALSE(c.flag("train.early_stop"));
  EXPECT_EQ(c.hash().size(), 16u);
  EXPECT_EQ(c.hash(), RunConfig().hash());
}

TEST(Config, UnknownKeysNameTheKey) {
  RunConfig c;
  try {
    c.apply_override("train.lerning_rate=0.1");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.lerning_rate"), std::string::npos);
  }
  EXPECT_THROW(c.apply_override("no-equals-sign"), ConfigError);
  EXPECT_THROW(c.raw("nope.nope"), ConfigError);
}

TEST(Config, BadValuesNameTheKey) {
  RunConfig c;
  c.set("train.k", "eight");
  try {
    c.count("train.k");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.k"), std::string::npos);
  }
  c.set("sim.sigma", "0.2x");
  EXPECT_THROW(c.real("sim.sigma"), ConfigError);
  c.set("snr.ks", "1,,4");
  EXPECT_THROW(c.counts("snr.ks"), ConfigError);
  c.set("train.early_stop", "maybe");
  EXPECT_THROW(c.flag("train.early_stop"), ConfigError);
}

TEST(Config, IniFileWithSections) {
  auto dir = scratch("ini");
  {
    std::ofstream f(dir / "a.ini");
    f << "; comment\n[sim]\nsigma = 0.3\nframes=6000\n\n[train]\nobjective = iw-aae\n";
  }
  RunConfig c;
  c.load_file(dir / "a.ini");
  EXPECT_DOUBLE_EQ(c.real("sim.sigma"), 0.3);
  EXPECT_EQ(c.count("sim.frames"), 6000u);
  EXPECT_EQ(c.str("train.objective"), "iw-aae");

  {
    std::ofstream f(dir / "b.ini");
    f << "[sim]\nsigmaa = 0.3\n";
  }
  try {
    RunConfig().load_file(dir / "b.ini");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("sim.sigmaa"), std::string::npos);
  }
  EXPECT_THROW(RunConfig().load_file(dir / "missing.ini"), std::runtime_error);
}

TEST(Config, PersistedIniReloadsToSameHash) {
  auto dir = scratch("reload");
  RunConfig c;
  c.apply_override("train.k=16");
  c.apply_override("sim.sigma=0.25");
  {
    std::ofstream f(dir / "c.ini");
    f << c.to_ini();
  }
  RunConfig d;
  d.load_file(dir / "c.ini");
  EXPECT_EQ(d.hash(), c.hash());
  EXPECT_EQ(d.to_ini(), c.to_ini());
}

TEST(Config, HashChangesWithEveryKey) {
  const auto base = RunConfig().hash();
  for (const auto& [key, value] : RunConfig::defaults()) {
    RunConfig c;
    c.set(key, value + "1");
    EXPECT_NE(c.hash(), base) << key;
  }
}

TEST(Config, Fnv1aReferenceValues) {
  // Published FNV-1a 64 test vectors.
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

// ---------------------------------------------------------------- report

TEST(Report, RoundTrip) {
  auto dir = scratch("report");
  std::vector<MetricRecord> m{{"spike_correlation", 0.61234567890123456, 0.0123, "00ff00ff00ff00ff"},
                              {"bound", -85.125, 1.0 / 3.0, "00ff00ff00ff00ff"},
                              {"tiny", 4.9e-324, 1e300, "abc"},
                              {"inf", std::numeric_limits<double>::infinity(), 0, "abc"}};
  emit_report(m, dir / "r.tsv");
  EXPECT_EQ(parse_report(dir / "r.tsv"), m);
  EXPECT_EQ(slurp(dir / "r.tsv").substr(0, 26), "name\tvalue\tse\tconfig_hash\n");
}

TEST(Report, Rejections) {
  auto dir = scratch("report_bad");
  EXPECT_THROW(emit_report({}, dir / "e.tsv"), std::invalid_argument);
  EXPECT_THROW(emit_report({{"a\tb", 1, 0, "h"}}, dir / "t.tsv"), std::invalid_argument);
  EXPECT_THROW(emit_report({{"a", 1, 0, "h"}}, dir / "no" / "such" / "dir" / "r.tsv"), std::runtime_error);
  {
    std::ofstream f(dir / "bad.tsv");
    f << "name\tvalue\tse\tconfig_hash\nx\t1\n";
  }
  EXPECT_THROW(parse_report(dir / "bad.tsv"), std::runtime_error);
}

TEST(Report, HashFollowsOverrides) {
  RunConfig a, b;
  b.apply_override("train.lr_psi=0.0001");
  EXPECT_NE(a.hash(), b.hash());
  b.apply_override("train.lr_psi=0.003");
  EXPECT_EQ(a.hash(), b.hash());
}

// ---------------------------------------------------------------- run

TEST(Run, UsageErrorsExitTwo) {
  auto r = invoke({});
  EXPECT_EQ(r.code, kUsageError);
  r = invoke({"frobnicate"});
  EXPECT_EQ(r.code, kUsageError);
  r = invoke({"simulate", "--out", scratch("usage").string(), "--set", "sim.bogus=1"});
  EXPECT_EQ(r.code, kUsageError);
  EXPECT_NE(r.err.find("sim.bogus"), std::string::npos);
  r = invoke({"train", "--out", scratch("usage2").string(), "--k", "many"});
  EXPECT_EQ(r.code, kUsageError);
  EXPECT_NE(r.err.find("train.k"), std::string::npos);
  r = invoke({"train", "--out", scratch("usage3").string(), "--objective", "gan"});
  EXPECT_EQ(r.code, kUsageError);
  EXPECT_NE(r.err.find("train.objective"), std::string::npos);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Run, MissingInputNamesThePath) {
  auto r = invoke({"infer", "--out", scratch("missing").string(), "--checkpoint", "/nonexistent/ckpt.bin",
                   "--trace", "/nonexistent/t.csv"});
  EXPECT_EQ(r.code, kDomainError);
  EXPECT_NE(r.err.find("/nonexistent/ckpt.bin"), std::string::npos);
  r = invoke({"simulate", "--config", "/nonexistent/run.ini", "--out", scratch("missing2").string()});
  EXPECT_EQ(r.code, kDomainError);
  EXPECT_NE(r.err.find("/nonexistent/run.ini"), std::string::npos);
}

TEST(Run, VerifyTheory) {
  auto dir = scratch("theory");
  auto r = invoke({"verify-theory", "--seed", "7", "--out", dir.string()});
  EXPECT_EQ(r.code, kSuccess) << r.out << r.err;
  EXPECT_NE(r.out.find("all suites pass"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  auto rec = parse_report(dir / "theory_report.tsv");
  EXPECT_EQ(rec.size(), 24u);
  EXPECT_TRUE(fs::exists(dir / "config.ini"));
}

TEST(Run, SimulateWritesPairedTrace) {
  auto dir = scratch("simulate");
  auto r = invoke({"simulate", "--frames", "6000", "--sigma", "0.2", "--out", dir.string()});
  ASSERT_EQ(r.code, kSuccess) << r.err;
  auto f = iwadv::spike::load_traces(dir / "trace.csv");
  EXPECT_EQ(f.frames(), 6000u);
  ASSERT_TRUE(f.spikes().has_value());
  EXPECT_EQ(f.spikes()->values.size(), 6000u);
  RunConfig c;
  c.load_file(dir / "config.ini");
  EXPECT_EQ(c.count("sim.frames"), 6000u);
  EXPECT_DOUBLE_EQ(c.real("sim.sigma"), 0.2);
}

TEST(Run, OutputRootFromEnvironment) {
  auto root = scratch("envroot");
  ::setenv("IWADV_OUTPUT_ROOT", root.string().c_str(), 1);
  auto r = invoke({"simulate", "--frames", "100"});
  ::unsetenv("IWADV_OUTPUT_ROOT");
  ASSERT_EQ(r.code, kSuccess) << r.err;
  EXPECT_TRUE(fs::exists(root / "simulate" / "trace.csv"));
  EXPECT_TRUE(fs::exists(root / "simulate" / "config.ini"));
}

TEST(Run, TrainThenInferKeepsTraceLength) {
  auto dir = scratch("train_infer");
  auto args = tiny_train(dir / "train");
  args.insert(args.end(), {"--objective", "iw-avb", "--k", "8"});
  auto r = invoke(args);
  ASSERT_EQ(r.code, kSuccess) << r.err;
  ASSERT_TRUE(fs::exists(dir / "train" / "checkpoint.bin"));
  auto report = parse_report(dir / "train" / "report.tsv");
  EXPECT_EQ(report.front().name, "train.steps");
  EXPECT_EQ(report.front().value, 3.0);

  r = invoke({"simulate", "--frames", "1500", "--seed", "9", "--out", (dir / "neuron").string()});
  ASSERT_EQ(r.code, kSuccess) << r.err;
  const auto trace = (dir / "neuron" / "trace.csv").string();
  r = invoke({"infer", "--checkpoint", (dir / "train" / "checkpoint.bin").string(), "--trace", trace, "--out",
              (dir / "infer").string(), "--samples", "3"});
  ASSERT_EQ(r.code, kSuccess) << r.err;
  auto m = iwadv::spike::load_traces(dir / "infer" / "marginals.csv");
  ASSERT_NE(m.column("marginal"), nullptr);
  EXPECT_EQ(m.frames(), 1500u);
  for (double p : *m.column("marginal")) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }

  r = invoke({"eval", "--checkpoint", (dir / "train" / "checkpoint.bin").string(), "--trace", trace, "--out",
              (dir / "eval").string()});
  ASSERT_EQ(r.code, kSuccess) << r.err;
  auto e = parse_report(dir / "eval" / "report.tsv");
  EXPECT_EQ(e.front().name, "spike_correlation");
  EXPECT_TRUE(std::isfinite(e.front().value));
}

TEST(Run, SameArgvGivesIdenticalArtifacts) {
  auto dir = scratch("repeat");
  auto args = tiny_train(dir);
  args.insert(args.end(), {"--objective", "iw-aae"});
  std::map<std::string, std::string> first;
  ASSERT_EQ(invoke(args).code, kSuccess);
  for (const auto& e : fs::directory_iterator(dir)) first[e.path().filename().string()] = slurp(e.path());
  ASSERT_EQ(invoke(args).code, kSuccess);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    EXPECT_EQ(slurp(e.path()), first.at(e.path().filename().string())) << e.path();
    ++compared;
  }
  EXPECT_EQ(compared, first.size());
  EXPECT_GE(compared, 5u);  // config, train trace, checkpoint, trajectory, report
}

TEST(Run, SnrReport) {
  auto dir = scratch("snr");
  auto r = invoke({"snr", "--ks", "1,4", "--repeats", "30", "--dim", "2", "--out", dir.string()});
  ASSERT_EQ(r.code, kSuccess) << r.err;
  auto rec = parse_report(dir / "report.tsv");
  ASSERT_EQ(rec.size(), 4u);
  EXPECT_EQ(rec[0].name, "snr.theta.k1");
  EXPECT_EQ(rec[3].name, "snr.phi.k4");
}
