#include "iwadv/cli/commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "iwadv/evaluation/metrics.hpp"
#include "iwadv/networks/reference_models.hpp"
#include "iwadv/spikesim/trace_io.hpp"
#include "iwadv/theory/oracle.hpp"

namespace iwadv::cli {

namespace fs = std::filesystem;

namespace {

struct Flag {
  std::string name, key, help;
};

// Subcommand flags are shorthands for config keys.
const std::map<std::string, std::vector<Flag>>& subcommand_flags() {
  static const std::map<std::string, std::vector<Flag>> f{
      {"simulate",
       {{"--frames", "sim.frames", "trace length in frames"},
        {"--sigma", "sim.sigma", "fluorescence noise std"},
        {"--tau", "sim.tau", "calcium decay time (s)"},
        {"--rate", "sim.rate", "spike probability per frame"}}},
      {"train",
       {{"--objective", "train.objective", "vae, iwae, avb, iw-avb, aae, iw-aae, vimco-fact, vimco-corr"},
        {"--k", "train.k", "samples per datum"},
        {"--steps", "train.steps", "training steps"},
        {"--batch", "train.batch", "segments per minibatch"},
        {"--trace", "train.trace", "training trace file (default: simulate one)"}}},
      {"infer",
       {{"--checkpoint", "infer.checkpoint", "trained checkpoint"},
        {"--trace", "infer.trace", "trace file"},
        {"--samples", "infer.samples", "posterior samples averaged per frame"}}},
      {"eval",
       {{"--checkpoint", "infer.checkpoint", "trained checkpoint"},
        {"--trace", "infer.trace", "trace file with a spikes column"},
        {"--rate-hz", "eval.rate_hz", "evaluation bin rate"},
        {"--binning", "eval.binning", "count or presence"}}},
      {"verify-theory", {{"--grid", "theory.grid", "random q tables per ordering model"}}},
      {"snr",
       {{"--ks", "snr.ks", "comma-separated sample counts"},
        {"--repeats", "snr.repeats", "gradient draws per k"},
        {"--dim", "snr.dim", "linear-Gaussian dimension"}}},
  };
  return f;
}

const std::map<std::string, std::string>& subcommand_help() {
  static const std::map<std::string, std::string> h{
      {"simulate", "simulate a synthetic calcium trace with known spikes"},
      {"train", "train an inference model on a trace"},
      {"infer", "write posterior spike marginals for a trace"},
      {"eval", "score marginals against the true spikes"},
      {"verify-theory", "check the bound identities and orderings by exact enumeration"},
      {"snr", "gradient signal-to-noise ratio against k"},
  };
  return h;
}

template <class F>
auto config_value(const std::string& key, const std::string& value, F parse) {
  try {
    return parse(value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

obj::Family family_of(const RunConfig& c) {
  return config_value("train.objective", c.raw("train.objective"), obj::parse_family);
}

const std::string& require_file(const RunConfig& c, const std::string& key) {
  const auto& p = c.raw(key);
  if (p.empty()) throw ConfigError("config key '" + key + "' is required for this subcommand");
  if (!fs::is_regular_file(p)) throw std::runtime_error(p + ": no such file");
  return p;
}

spike::BiophysParams neuron_params(const RunConfig& c) {
  spike::BiophysParams bp;
  bp.tau = c.real("sim.tau");
  bp.alpha = c.real("sim.alpha");
  bp.beta = c.real("sim.beta");
  bp.sigma = c.real("sim.sigma");
  bp.rate = c.real("sim.rate");
  const double hz = c.real("sim.rate_hz");
  if (hz <= 0) throw ConfigError("config key 'sim.rate_hz' must be positive");
  bp.dt = 1.0 / hz;
  try {
    bp.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[sim] section: ") + e.what());
  }
  return bp;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot write");
  out << text;
  if (!out) throw std::runtime_error(path.string() + ": failed writing");
}

std::vector<double> fluorescence_of(const spike::TraceFile& f, const std::string& path) {
  const auto* col = f.column("fluorescence");
  if (!col) throw std::runtime_error(path + ": no fluorescence column");
  return *col;
}

struct Context {
  RunConfig config;
  fs::path out_dir;
  std::ostream& out;
  std::string hash() const { return config.hash(); }
};

int cmd_simulate(Context& ctx) {
  const auto bp = neuron_params(ctx.config);
  ad::RandomSource rng(ctx.config.u64("run.seed"));
  auto n = exp::simulate_neuron(bp, ctx.config.count("sim.frames"), rng);
  const auto path = ctx.out_dir / "trace.csv";
  spike::save_traces(path, spike::TraceFile::paired(n.trace, n.spikes));
  ctx.out << "wrote " << path.string() << " (" << n.trace.values.size() << " frames)\n";
  return kSuccess;
}

int cmd_train(Context& ctx) {
  const auto& c = ctx.config;
  const auto family = family_of(c);
  auto setup = spike_setup(c);
  const auto seed = c.u64("run.seed");
  ad::RandomSource rng(seed);

  std::vector<double> trace;
  if (c.raw("train.trace").empty()) {
    auto n = exp::simulate_neuron(setup.neuron, setup.frames, rng, "train");
    spike::save_traces(ctx.out_dir / "train_trace.csv", spike::TraceFile::paired(n.trace, n.spikes));
    trace = n.trace.values;
  } else {
    const auto& p = require_file(c, "train.trace");
    trace = fluorescence_of(spike::load_traces(p), p);
  }

  auto tc = exp::spike_training_config(family, setup, seed);
  tc.lr_theta = c.real("train.lr_theta");
  tc.lr_phi = c.real("train.lr_phi");
  tc.lr_psi = c.real("train.lr_psi");
  tc.optimizer = config_value("train.optimizer", c.raw("train.optimizer"), train::parse_optimizer);
  tc.checkpoint_every = c.count("train.checkpoint_every");
  tc.early_stop = c.flag("train.early_stop");
  tc.checkpoint_path = ctx.out_dir / "checkpoint.bin";
  try {
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[train] section: ") + e.what());
  }

  auto model = exp::spike_model(family, setup, rng);
  train::Trainer trainer(tc, exp::segment_rows(trace, setup.segment));
  auto state = trainer.init(model);
  trainer.run(state);
  write_text(ctx.out_dir / "trajectory.txt", train::trajectory_text(state));
  const auto& last = state.history.back();
  emit_report({{"train.steps", static_cast<double>(state.step), 0, ctx.hash()},
               {"train.final_bound", last.bound, 0, ctx.hash()},
               {"train.final_model_loss", last.model_loss, 0, ctx.hash()}},
              ctx.out_dir / "report.tsv");
  ctx.out << obj::to_string(family) << ": " << state.step << " steps, final bound " << last.bound << "\n"
          << "wrote " << tc.checkpoint_path.string() << "\n";
  return kSuccess;
}

std::vector<double> infer_marginals(const RunConfig& c, spike::TraceFile& input) {
  const auto& ckpt = require_file(c, "infer.checkpoint");
  const auto& tp = require_file(c, "infer.trace");
  input = spike::load_traces(tp);
  const auto state = train::load_checkpoint(ckpt);
  ad::RandomSource rng(c.u64("run.seed"));
  return exp::posterior_marginals(*state.model.encoder, fluorescence_of(input, tp), c.count("infer.samples"), rng);
}

int cmd_infer(Context& ctx) {
  spike::TraceFile input;
  auto marg = infer_marginals(ctx.config, input);
  spike::TraceFile f;
  f.rate_hz = input.rate_hz;
  f.neuron = input.neuron;
  f.columns = {"marginal"};
  f.data = {marg};
  const auto path = ctx.out_dir / "marginals.csv";
  spike::save_traces(path, f);
  ctx.out << "wrote " << path.string() << " (" << marg.size() << " frames)\n";
  return kSuccess;
}

int cmd_eval(Context& ctx) {
  const auto& c = ctx.config;
  const auto binning = config_value("eval.binning", c.raw("eval.binning"), eval::parse_binning);
  spike::TraceFile input;
  auto marg = infer_marginals(c, input);
  auto spikes = input.spikes();
  if (!spikes) throw std::runtime_error(c.raw("infer.trace") + ": no spikes column to evaluate against");
  const double r = eval::spike_correlation(marg, spikes->values, input.rate_hz, c.real("eval.rate_hz"), binning);
  emit_report({{"spike_correlation", r, 0, ctx.hash()},
               {"frames", static_cast<double>(marg.size()), 0, ctx.hash()}},
              ctx.out_dir / "report.tsv");
  ctx.out << "spike_correlation@" << c.raw("eval.rate_hz") << "Hz " << r << "\n";
  return kSuccess;
}

int cmd_verify_theory(Context& ctx) {
  const auto& c = ctx.config;
  theory::SuiteOptions opt;
  opt.identity_models = c.count("theory.identity_models");
  opt.chain_models = c.count("theory.chain_models");
  opt.ordering_models = c.count("theory.ordering_models");
  opt.grid_size = c.count("theory.grid");
  const auto suites = theory::verify_theory(c.u64("run.seed"), opt);

  std::vector<MetricRecord> records;
  bool all = true;
  ctx.out << std::left << std::setw(40) << "suite" << std::setw(10) << "instances" << std::setw(14) << "max_residual"
          << std::setw(12) << "violations" << std::setw(10) << "seconds" << "result\n";
  for (const auto& s : suites) {
    all = all && s.passed;
    ctx.out << std::left << std::setw(40) << s.name << std::setw(10) << s.instances << std::setw(14)
            << std::setprecision(3) << s.max_residual << std::setw(12) << s.violations << std::setw(10)
            << std::fixed << std::setprecision(2) << s.seconds << std::defaultfloat << (s.passed ? "PASS" : "FAIL")
            << "\n";
    records.push_back({s.name + ".max_residual", s.max_residual, 0, ctx.hash()});
    records.push_back({s.name + ".violations", static_cast<double>(s.violations), 0, ctx.hash()});
    records.push_back({s.name + ".passed", s.passed ? 1.0 : 0.0, 0, ctx.hash()});
  }
  emit_report(records, ctx.out_dir / "theory_report.tsv");
  ctx.out << (all ? "all suites pass" : "some suites FAIL") << "\n";
  return all ? kSuccess : kDomainError;
}

int cmd_snr(Context& ctx) {
  const auto& c = ctx.config;
  ad::RandomSource rng(c.u64("run.seed"));
  const auto dim = c.count("snr.dim");
  auto m = nn::linear_gaussian(dim, c.real("snr.perturbation"), rng);
  auto x = nn::sample_linear_gaussian(c.count("snr.batch"), dim, rng);
  std::vector<MetricRecord> records;
  ctx.out << "k\tmedian_snr_theta\tmedian_snr_phi\n";
  for (auto k : c.counts("snr.ks")) {
    const auto th = obj::estimate_snr(m, x, k, c.count("snr.repeats"), "theta.", rng);
    const auto ph = obj::estimate_snr(m, x, k, c.count("snr.repeats"), "phi.", rng);
    ctx.out << k << "\t" << th.median << "\t" << ph.median << "\n";
    records.push_back({"snr.theta.k" + std::to_string(k), th.median, 0, ctx.hash()});
    records.push_back({"snr.phi.k" + std::to_string(k), ph.median, 0, ctx.hash()});
  }
  emit_report(records, ctx.out_dir / "report.tsv");
  return kSuccess;
}

const std::map<std::string, int (*)(Context&)>& commands() {
  static const std::map<std::string, int (*)(Context&)> c{
      {"simulate", cmd_simulate}, {"train", cmd_train},   {"infer", cmd_infer},
      {"eval", cmd_eval},         {"verify-theory", cmd_verify_theory}, {"snr", cmd_snr},
  };
  return c;
}

}  // namespace

exp::SpikeSetup spike_setup(const RunConfig& c) {
  exp::SpikeSetup s;
  s.neuron = neuron_params(c);
  s.frames = c.count("sim.frames");
  s.segment = c.count("model.segment_frames");
  s.conv_widths = c.counts("model.conv_widths");
  s.filters = c.count("model.filters");
  s.noise_layers = c.counts("model.noise_layers");
  s.disc_widths = c.counts("model.disc_widths");
  s.disc_filters = c.count("model.disc_filters");
  s.ar_window = c.count("model.ar_window");
  s.k = c.count("train.k");
  s.steps = c.count("train.steps");
  s.batch = c.count("train.batch");
  s.lr = c.real("train.lr_theta");
  s.lr_psi = c.real("train.lr_psi");
  s.disc_steps = c.count("train.disc_steps");
  s.posterior_samples = c.count("infer.samples");
  s.eval_hz = c.real("eval.rate_hz");
  return s;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Importance-weighted adversarial variational inference", "iwadv");
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::map<std::string, std::map<std::string, std::string>> given;  // subcommand -> key -> value

  for (const auto& [name, fn] : commands()) {
    auto* sub = app.add_subcommand(name, subcommand_help().at(name));
    sub->add_option("--config", config_path, "INI config file");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "random seed (run.seed)");
    sub->add_option("--set", overrides, "section.key=value override")->allow_extra_args(false);
    for (const auto& f : subcommand_flags().at(name)) sub->add_option(f.name, given[name][f.key], f.help);
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "iwadv: usage error: " << e.what() << "\n";
    return kUsageError;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  const auto* sub = app.get_subcommands().front();
  try {
    RunConfig config;
    if (!config_path.empty()) {
      if (!fs::is_regular_file(config_path)) throw std::runtime_error(config_path + ": no such file");
      config.load_file(config_path);
    }
    for (const auto& o : overrides) config.apply_override(o);
    for (const auto& f : subcommand_flags().at(name)) {
      if (sub->count(f.name) > 0) config.set(f.key, given[name][f.key]);
    }
    if (seed) config.set("run.seed", std::to_string(*seed));

    fs::path dir = out_dir;
    if (dir.empty()) {
      const char* root = std::getenv("IWADV_OUTPUT_ROOT");
      dir = fs::path(root && *root ? root : "runs") / name;
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error(dir.string() + ": cannot create output directory: " + ec.message());
    write_text(dir / "config.ini", "# iwadv " + name + "\n" + config.to_ini());

    Context ctx{config, dir, out};
    return commands().at(name)(ctx);
  } catch (const ConfigError& e) {
    err << "iwadv " << name << ": usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "iwadv " << name << ": error: " << e.what() << "\n";
    return kDomainError;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace iwadv::cli
