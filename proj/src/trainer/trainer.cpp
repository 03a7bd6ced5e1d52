#include "iwadv/trainer/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace iwadv::train {

namespace {

bool has_prefix(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

nn::ParameterList with_prefix(const nn::ModelTriple& m, const std::string& prefix) {
  nn::ParameterList out;
  for (auto& p : m.parameters()) {
    if (has_prefix(p.name, prefix)) out.push_back(p);
  }
  return out;
}

void zero_grads(const nn::ModelTriple& m) {
  for (auto& p : m.parameters()) p.tensor.zero_grad();
}

Json spec_to_json(const obj::ObjectiveSpec& s) {
  return {{"family", obj::to_string(s.family)},
          {"k", s.k},
          {"analytic_kl", s.analytic_kl},
          {"single_sample_phi", s.single_sample_phi},
          {"phi_through_iw", s.phi_through_iw},
          {"disc_uses_all_k", s.disc_uses_all_k}};
}

obj::ObjectiveSpec spec_from_json(const Json& j) {
  auto s = obj::ObjectiveSpec::make(obj::parse_family(j.at("family")), j.at("k"));
  s.analytic_kl = j.value("analytic_kl", false);
  s.single_sample_phi = j.value("single_sample_phi", false);
  s.phi_through_iw = j.value("phi_through_iw", false);
  s.disc_uses_all_k = j.value("disc_uses_all_k", true);
  return s;
}

void check_model(const nn::ModelTriple& m, const obj::ObjectiveSpec& spec) {
  if (!m.encoder || !m.generator || !m.prior) throw std::invalid_argument("model needs an encoder, generator and prior");
  const auto use = spec.discriminator;
  if (use == obj::DiscriminatorUse::none) {
    if (m.discriminator) {
      throw std::invalid_argument("objective " + obj::to_string(spec.family) + " takes no discriminator");
    }
    return;
  }
  const auto mode = use == obj::DiscriminatorUse::joint ? nn::DiscriminatorMode::joint : nn::DiscriminatorMode::latent_only;
  if (!m.discriminator || m.discriminator->mode() != mode) {
    throw std::invalid_argument("objective " + obj::to_string(spec.family) + " needs a " + nn::to_string(mode) +
                                " discriminator");
  }
}

void shuffle(std::vector<std::size_t>& order, RandomSource& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

void TrainingConfig::validate() const {
  objective.validate();
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  for (double lr : {lr_theta, lr_phi, lr_psi}) {
    // zero is allowed: it freezes a network
    if (!(lr >= 0) || !std::isfinite(lr)) throw std::invalid_argument("learning rates must be finite and non-negative");
  }
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("moment decays must lie in [0, 1)");
  if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be positive");
  if (obj::is_adversarial(objective.family) && disc_steps == 0) {
    throw std::invalid_argument("objective " + obj::to_string(objective.family) +
                                " needs at least one discriminator step per update");
  }
  if (early_stop && plateau_window == 0) throw std::invalid_argument("plateau window must be positive");
}

Json TrainingConfig::to_json() const {
  return {{"objective", spec_to_json(objective)},
          {"batch_size", batch_size},
          {"lr_theta", lr_theta},
          {"lr_phi", lr_phi},
          {"lr_psi", lr_psi},
          {"optimizer", to_string(optimizer)},
          {"beta1", beta1},
          {"beta2", beta2},
          {"epsilon", epsilon},
          {"max_steps", max_steps},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"disc_steps", disc_steps},
          {"early_stop", early_stop},
          {"plateau_window", plateau_window},
          {"plateau_tolerance", plateau_tolerance},
          {"checkpoint_path", checkpoint_path.string()},
          {"log_path", log_path.string()}};
}

TrainingConfig TrainingConfig::from_json(const Json& j) {
  TrainingConfig c;
  c.objective = spec_from_json(j.at("objective"));
  c.batch_size = j.at("batch_size");
  c.lr_theta = j.at("lr_theta");
  c.lr_phi = j.at("lr_phi");
  c.lr_psi = j.at("lr_psi");
  c.optimizer = parse_optimizer(j.at("optimizer"));
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.epsilon = j.at("epsilon");
  c.max_steps = j.at("max_steps");
  c.seed = j.at("seed");
  c.checkpoint_every = j.at("checkpoint_every");
  c.disc_steps = j.at("disc_steps");
  c.early_stop = j.at("early_stop");
  c.plateau_window = j.at("plateau_window");
  c.plateau_tolerance = j.at("plateau_tolerance");
  c.checkpoint_path = j.at("checkpoint_path").get<std::string>();
  c.log_path = j.at("log_path").get<std::string>();
  return c;
}

std::vector<Phase> step_schedule(const TrainingConfig& config) {
  config.validate();
  std::vector<Phase> plan{Phase::model};
  if (obj::is_adversarial(config.objective.family)) plan.insert(plan.end(), config.disc_steps, Phase::discriminator);
  return plan;
}

Trainer::Trainer(TrainingConfig config, Tensor data) : config_(std::move(config)), data_(std::move(data)) {
  config_.validate();
  if (data_.rank() < 1 || data_.dim(0) == 0) throw std::invalid_argument("training data is empty");
}

TrainState Trainer::init(nn::ModelTriple model) const {
  check_model(model, config_.objective);
  TrainState s;
  s.model = std::move(model);
  s.objective = obj::to_string(config_.objective.family);
  s.seed = config_.seed;
  RandomSource rng(config_.seed);
  RandomSource drng(config_.seed ^ 0x9e3779b97f4a7c15ULL);
  s.order.resize(data_.dim(0));
  for (std::size_t i = 0; i < s.order.size(); ++i) s.order[i] = i;
  shuffle(s.order, drng);
  s.rng = rng.serialize();
  s.data_rng = drng.serialize();
  if (!config_.log_path.empty()) std::ofstream(config_.log_path, std::ios::trunc);
  return s;
}

Tensor Trainer::next_batch(TrainState& state, RandomSource& drng) const {
  const std::size_t n = state.order.size();
  const std::size_t b = std::min(config_.batch_size, n);
  if (state.cursor + b > n) {
    shuffle(state.order, drng);
    state.cursor = 0;
    ++state.epoch;
  }
  std::vector<std::size_t> rows(state.order.begin() + static_cast<std::ptrdiff_t>(state.cursor),
                                state.order.begin() + static_cast<std::ptrdiff_t>(state.cursor + b));
  state.cursor += b;
  ad::NoGradScope off;
  return ad::gather_rows(data_, rows);
}

void Trainer::apply(TrainState& state, const nn::ParameterList& params, const std::string& group, double lr) const {
  auto& opt = state.optimizer;
  const std::uint64_t t = ++opt.t[group];
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t));
  for (const auto& p : params) {
    Tensor target = p.tensor;
    auto w = target.mutable_values();
    const bool has = target.has_grad();
    auto grad = has ? target.grad() : std::span<const double>();
    if (config_.optimizer == OptimizerKind::sgd) {
      if (has) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += lr * grad[i];
      }
      continue;
    }
    auto& m = opt.m[p.name];
    auto& v = opt.v[p.name];
    m.resize(w.size(), 0.0);
    v.resize(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = has ? grad[i] : 0.0;
      m[i] = config_.beta1 * m[i] + (1 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1 - config_.beta2) * g * g;
      // ascent: every network maximizes its own objective
      w[i] += lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
    }
  }
}

StepRecord Trainer::step(TrainState& state) const {
  auto rng = RandomSource::deserialize(state.rng);
  auto drng = RandomSource::deserialize(state.data_rng);
  const auto start = std::chrono::steady_clock::now();
  StepRecord rec;
  rec.step = state.step + 1;

  auto halt = [&](const std::string& what) {
    std::filesystem::path diag;
    if (!config_.checkpoint_path.empty()) {
      diag = config_.checkpoint_path;
      diag += ".diag";
      save_checkpoint(state, config_, diag);
    }
    throw TrainingHalted("step " + std::to_string(rec.step) + ": " + what +
                             (diag.empty() ? "" : "; state written to " + diag.string()),
                         diag);
  };

  const auto x = next_batch(state, drng);
  for (auto phase : step_schedule(config_)) {
    zero_grads(state.model);
    ad::Tape tape;
    double value = 0;
    try {
      ad::TapeScope scope(tape);
      if (phase == Phase::model) {
        auto o = obj::step_objectives(state.model, config_.objective, x, rng);
        value = o.model.item();
        rec.model_loss = -value;
        rec.bound = o.bound;
        if (std::isfinite(value)) tape.backward(o.model);
      } else {
        auto o = obj::discriminator_step_objective(state.model, config_.objective, x, rng);
        value = o.item();
        rec.disc_loss = -value;
        if (std::isfinite(value)) tape.backward(o);
      }
    } catch (const ad::DomainError& e) {
      zero_grads(state.model);
      halt(std::string("non-finite value: ") + e.what());
    }
    if (!std::isfinite(value)) {
      zero_grads(state.model);
      halt(std::string(phase == Phase::model ? "model" : "discriminator") + " loss is " + fmt(-value));
    }
    if (phase == Phase::model) {
      apply(state, with_prefix(state.model, "theta."), "theta", config_.lr_theta);
      apply(state, with_prefix(state.model, "phi."), "phi", config_.lr_phi);
    } else {
      apply(state, with_prefix(state.model, "psi."), "psi", config_.lr_psi);
    }
    zero_grads(state.model);
  }

  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  state.rng = rng.serialize();
  state.data_rng = drng.serialize();
  state.step = rec.step;
  state.history.push_back(rec);
  log(rec);
  return rec;
}

bool Trainer::plateaued(const TrainState& state) const {
  const std::size_t w = config_.plateau_window, n = state.history.size();
  if (n < 2 * w) return false;
  double now = 0, before = 0;
  for (std::size_t i = n - w; i < n; ++i) now += state.history[i].model_loss;
  for (std::size_t i = n - 2 * w; i < n - w; ++i) before += state.history[i].model_loss;
  now /= static_cast<double>(w);
  before /= static_cast<double>(w);
  return std::abs(now - before) < config_.plateau_tolerance * std::max(std::abs(before), 1e-12);
}

void Trainer::run(TrainState& state) const {
  while (state.step < config_.max_steps && !state.stopped_early) {
    step(state);
    if (config_.checkpoint_every > 0 && !config_.checkpoint_path.empty() &&
        state.step % config_.checkpoint_every == 0) {
      save_checkpoint(state, config_, config_.checkpoint_path);
    }
    if (config_.early_stop && plateaued(state)) state.stopped_early = true;
  }
  if (!config_.checkpoint_path.empty()) save_checkpoint(state, config_, config_.checkpoint_path);
}

void Trainer::log(const StepRecord& r) const {
  if (config_.log_path.empty()) return;
  std::ofstream out(config_.log_path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to training log " + config_.log_path.string());
  out << "{\"step\":" << r.step << ",\"model_loss\":" << fmt(r.model_loss) << ",\"bound\":" << fmt(r.bound)
      << ",\"disc_loss\":" << fmt(r.disc_loss) << ",\"wall_ms\":" << fmt(r.wall_ms) << "}\n";
}

TrainState train(const Tensor& data, const TrainingConfig& config, nn::ModelTriple model) {
  Trainer t(config, data);
  auto state = t.init(std::move(model));
  t.run(state);
  return state;
}

std::string trajectory_text(const TrainState& state) {
  std::string out;
  for (const auto& r : state.history) {
    out += std::to_string(r.step) + " " + fmt(r.model_loss) + " " + fmt(r.bound) + " " + fmt(r.disc_loss) + "\n";
  }
  return out;
}

}  // namespace iwadv::train
