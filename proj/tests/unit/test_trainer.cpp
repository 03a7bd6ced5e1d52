#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "iwadv/networks/discriminators.hpp"
#include "iwadv/networks/reference_models.hpp"
#include "iwadv/trainer/trainer.hpp"

using namespace iwadv;
using namespace iwadv::nn;
using namespace iwadv::train;

namespace {

std::filesystem::path temp(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("iwadv_trainer_" + name);
}

ModelTriple adversarial_gaussian(std::size_t dim, std::uint64_t seed, DiscriminatorMode mode) {
  RandomSource rng(seed);
  auto m = linear_gaussian(dim, 0.2, rng);
  m.discriminator = std::make_shared<DenseDiscriminator>(mode, dim, dim, std::vector<std::size_t>{16, 16},
                                                         Activation::relu, rng);
  return m;
}

TrainingConfig config_for(obj::Family f, std::size_t k, std::size_t steps) {
  TrainingConfig c;
  c.objective = obj::ObjectiveSpec::make(f, k);
  c.batch_size = 16;
  c.max_steps = steps;
  c.seed = 11;
  return c;
}

std::vector<double> flat_parameters(const ModelTriple& m) {
  std::vector<double> out;
  for (auto& p : m.parameters()) out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(Schedule, AlternationAndValidation) {
  auto c = config_for(obj::Family::iw_avb, 2, 1);
  EXPECT_EQ(step_schedule(c), (std::vector<Phase>{Phase::model, Phase::discriminator}));
  c.disc_steps = 5;
  auto plan = step_schedule(c);
  ASSERT_EQ(plan.size(), 6u);
  EXPECT_EQ(std::count(plan.begin(), plan.end(), Phase::discriminator), 5);
  c.disc_steps = 0;
  EXPECT_THROW(step_schedule(c), std::invalid_argument);
  auto v = config_for(obj::Family::vae, 1, 1);
  v.disc_steps = 0;
  EXPECT_EQ(step_schedule(v), std::vector<Phase>{Phase::model});
  v.batch_size = 0;
  EXPECT_THROW(v.validate(), std::invalid_argument);
  v.batch_size = 4;
  v.lr_phi = -1;
  EXPECT_THROW(v.validate(), std::invalid_argument);
}

TEST(Train, ConfigJsonRoundTrip) {
  auto c = config_for(obj::Family::iw_aae, 8, 123);
  c.objective.single_sample_phi = true;
  c.optimizer = OptimizerKind::sgd;
  c.checkpoint_path = "/tmp/x.ckpt";
  auto back = TrainingConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(Train, ZeroLearningRatesLeaveWeights) {
  for (auto kind : {OptimizerKind::adam, OptimizerKind::sgd}) {
    auto m = adversarial_gaussian(2, 1, DiscriminatorMode::joint);
    const auto before = flat_parameters(m);
    RandomSource rng(2);
    auto data = sample_linear_gaussian(40, 2, rng);
    auto c = config_for(obj::Family::iw_avb, 4, 30);
    c.optimizer = kind;
    c.lr_theta = c.lr_phi = c.lr_psi = 0.0;
    auto s = iwadv::train::train(data, c, m);
    EXPECT_EQ(flat_parameters(s.model), before);
    EXPECT_EQ(s.step, 30u);
  }
}

TEST(Train, FamilyDispatchChecks) {
  RandomSource rng(3);
  auto data = sample_linear_gaussian(10, 2, rng);
  Trainer vae(config_for(obj::Family::vae, 1, 1), data);
  EXPECT_THROW(vae.init(adversarial_gaussian(2, 1, DiscriminatorMode::joint)), std::invalid_argument);
  Trainer aae(config_for(obj::Family::aae, 1, 1), data);
  EXPECT_THROW(aae.init(adversarial_gaussian(2, 1, DiscriminatorMode::joint)), std::invalid_argument);
  EXPECT_NO_THROW(aae.init(adversarial_gaussian(2, 1, DiscriminatorMode::latent_only)));
  EXPECT_THROW(Trainer(config_for(obj::Family::vae, 1, 1), Tensor::zeros({0, 2})), std::invalid_argument);
}

TEST(Train, DeterministicTrajectory) {
  RandomSource rng(4);
  auto data = sample_linear_gaussian(50, 2, rng);
  for (auto f : {obj::Family::iw_avb, obj::Family::iw_aae, obj::Family::iwae}) {
    auto mode = f == obj::Family::iw_aae ? DiscriminatorMode::latent_only : DiscriminatorMode::joint;
    auto make = [&] {
      auto m = adversarial_gaussian(2, 5, mode);
      if (f == obj::Family::iwae) m.discriminator = nullptr;
      return m;
    };
    auto c = config_for(f, 4, 40);
    auto a = iwadv::train::train(data, c, make()), b = iwadv::train::train(data, c, make());
    EXPECT_EQ(trajectory_text(a), trajectory_text(b));
    EXPECT_EQ(flat_parameters(a.model), flat_parameters(b.model));
    c.seed = 12;
    EXPECT_NE(trajectory_text(iwadv::train::train(data, c, make())), trajectory_text(a));
    for (const auto& r : a.history) {
      EXPECT_TRUE(std::isfinite(r.model_loss));
      EXPECT_TRUE(std::isfinite(r.disc_loss));
    }
  }
}

TEST(Train, EpochShufflingCoversEveryRow) {
  RandomSource rng(5);
  auto data = sample_linear_gaussian(10, 1, rng);
  auto c = config_for(obj::Family::vae, 1, 1);
  c.batch_size = 3;
  Trainer t(c, data);
  auto s = t.init(linear_gaussian(1, 0.1, rng));
  std::vector<std::size_t> first = s.order;
  for (int i = 0; i < 3; ++i) t.step(s);
  EXPECT_EQ(s.epoch, 0u);
  t.step(s);
  EXPECT_EQ(s.epoch, 1u);
  EXPECT_NE(s.order, first);
  std::set<std::size_t> rows(s.order.begin(), s.order.end());
  EXPECT_EQ(rows.size(), 10u);
}

TEST(Checkpoint, RoundTripIsExact) {
  RandomSource rng(6);
  auto data = sample_linear_gaussian(30, 2, rng);
  auto c = config_for(obj::Family::iw_avb, 3, 7);
  Trainer t(c, data);
  auto s = t.init(adversarial_gaussian(2, 7, DiscriminatorMode::joint));
  t.run(s);
  auto path = temp("roundtrip.ckpt");
  save_checkpoint(s, c, path);
  TrainingConfig back_config;
  auto back = load_checkpoint(path, &back_config);
  EXPECT_EQ(back_config.to_json(), c.to_json());
  EXPECT_EQ(back.step, s.step);
  EXPECT_EQ(back.seed, s.seed);
  EXPECT_EQ(back.objective, "iw-avb");
  EXPECT_EQ(back.rng, s.rng);
  EXPECT_EQ(back.data_rng, s.data_rng);
  EXPECT_EQ(back.order, s.order);
  EXPECT_EQ(back.cursor, s.cursor);
  EXPECT_EQ(back.epoch, s.epoch);
  EXPECT_EQ(trajectory_text(back), trajectory_text(s));
  EXPECT_EQ(back.optimizer.m, s.optimizer.m);
  EXPECT_EQ(back.optimizer.v, s.optimizer.v);
  EXPECT_EQ(back.optimizer.t, s.optimizer.t);
  EXPECT_EQ(flat_parameters(back.model), flat_parameters(s.model));
  EXPECT_EQ(back.model.descriptor(), s.model.descriptor());
  std::filesystem::remove(path);
}

TEST(Checkpoint, ResumeMatchesUninterrupted) {
  RandomSource rng(7);
  auto data = sample_linear_gaussian(30, 2, rng);
  auto c = config_for(obj::Family::iw_aae, 3, 10);
  auto whole = iwadv::train::train(data, c, adversarial_gaussian(2, 8, DiscriminatorMode::latent_only));

  auto half = c;
  half.max_steps = 5;
  half.checkpoint_path = temp("resume.ckpt");
  iwadv::train::train(data, half, adversarial_gaussian(2, 8, DiscriminatorMode::latent_only));
  auto resumed = load_checkpoint(half.checkpoint_path);
  Trainer(c, data).run(resumed);
  EXPECT_EQ(trajectory_text(resumed), trajectory_text(whole));
  EXPECT_EQ(flat_parameters(resumed.model), flat_parameters(whole.model));
  std::filesystem::remove(half.checkpoint_path);
}

TEST(Checkpoint, CorruptionNamesTheField) {
  RandomSource rng(8);
  auto data = sample_linear_gaussian(10, 1, rng);
  auto c = config_for(obj::Family::vae, 1, 2);
  auto s = iwadv::train::train(data, c, linear_gaussian(1, 0.1, rng));
  auto path = temp("corrupt.ckpt");
  save_checkpoint(s, c, path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) { std::ofstream(path, std::ios::binary | std::ios::trunc) << b; };
  auto message = [&]() -> std::string {
    try {
      load_checkpoint(path);
    } catch (const CheckpointError& e) {
      return e.what();
    }
    return "";
  };

  // first record is "descriptor": its u64 length sits after magic, version, name length and name
  auto corrupt = bytes;
  const std::size_t len_at = 8 + 4 + 4 + std::string("descriptor").size();
  const std::uint64_t huge = 1ULL << 40;
  std::memcpy(corrupt.data() + len_at, &huge, 8);
  write(corrupt);
  EXPECT_NE(message().find("'descriptor'"), std::string::npos) << message();

  write(bytes.substr(0, bytes.size() - 5));
  EXPECT_NE(message().find("truncated"), std::string::npos) << message();

  auto versioned = bytes;
  versioned[8] = 9;
  write(versioned);
  EXPECT_NE(message().find("'version'"), std::string::npos) << message();

  write("not a checkpoint at all");
  EXPECT_NE(message().find("'magic'"), std::string::npos) << message();
  std::filesystem::remove(path);
}

TEST(Train, NonFiniteLossHaltsWithDiagnostic) {
  RandomSource rng(9);
  auto data = sample_linear_gaussian(10, 1, rng);
  auto m = linear_gaussian(1, 0.0, rng);
  auto dec = std::static_pointer_cast<DenseGaussianDecoder>(m.generator);
  dec->log_sigma().mutable_values()[0] = -1e4;
  auto c = config_for(obj::Family::iwae, 2, 5);
  c.checkpoint_path = temp("halt.ckpt");
  try {
    iwadv::train::train(data, c, m);
    FAIL();
  } catch (const TrainingHalted& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
    ASSERT_FALSE(e.diagnostic().empty());
    EXPECT_TRUE(std::filesystem::exists(e.diagnostic()));
    EXPECT_EQ(load_checkpoint(e.diagnostic()).step, 0u);
    std::filesystem::remove(e.diagnostic());
  }
}

TEST(Train, JsonlLogHasOneRecordPerStep) {
  RandomSource rng(10);
  auto data = sample_linear_gaussian(10, 1, rng);
  auto c = config_for(obj::Family::vae, 1, 6);
  c.log_path = temp("log.jsonl");
  iwadv::train::train(data, c, linear_gaussian(1, 0.1, rng));
  std::ifstream in(c.log_path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    auto j = Json::parse(line);
    EXPECT_EQ(j.at("step").get<std::size_t>(), ++n);
    EXPECT_TRUE(j.contains("model_loss") && j.contains("wall_ms"));
  }
  EXPECT_EQ(n, 6u);
  std::filesystem::remove(c.log_path);
}

TEST(Train, PlateauStopsEarly) {
  RandomSource rng(11);
  auto data = sample_linear_gaussian(8, 1, rng);
  auto c = config_for(obj::Family::vae, 1, 1000);
  c.batch_size = 8;
  c.lr_theta = c.lr_phi = 0;
  c.early_stop = true;
  c.plateau_window = 10;
  // exact posterior + full batch: the loss is the same every step
  auto s = iwadv::train::train(data, c, linear_gaussian(1, 0.0, rng));
  EXPECT_TRUE(s.stopped_early);
  EXPECT_EQ(s.step, 20u);
}

TEST(Train, VaeConvergesToMarginal) {
  RandomSource rng(12);
  auto data = sample_linear_gaussian(400, 1, rng);
  auto c = config_for(obj::Family::vae, 1, 3000);
  c.objective.analytic_kl = true;
  c.batch_size = 40;
  c.lr_theta = c.lr_phi = 1e-2;
  auto s = iwadv::train::train(data, c, linear_gaussian(1, 0.5, rng));
  // learned marginal is N(b, w^2 + 1)
  auto dec = std::static_pointer_cast<DenseGaussianDecoder>(s.model.generator);
  const double w = dec->layers().front().weight.at(0), b = dec->layers().front().bias.at(0);
  const double var = w * w + 1;
  double log_p = 0;
  for (std::size_t i = 0; i < 400; ++i) {
    const double d = data.at(i) - b;
    log_p += -0.5 * std::log(2 * std::numbers::pi * var) - d * d / (2 * var);
  }
  log_p /= 400;
  RandomSource eval(13);
  const double elbo = obj::elbo(s.model, data, 200, eval, true).item();
  EXPECT_LE(elbo, log_p + 0.005);  // Monte Carlo slack on the reconstruction term
  EXPECT_LT(log_p - elbo, 0.05);
}

TEST(Train, DiscriminatorTracksAnalyticRatio) {
  RandomSource rng(14);
  auto data = sample_linear_gaussian(500, 1, rng);
  auto c = config_for(obj::Family::iw_avb, 4, 2000);
  c.batch_size = 32;
  c.lr_psi = 3e-3;
  auto s = iwadv::train::train(data, c, adversarial_gaussian(1, 15, DiscriminatorMode::joint));

  RandomSource held(16);
  auto x = sample_linear_gaussian(1000, 1, held);
  auto q = s.model.encoder->sample(x, held);
  auto t = s.model.discriminator->logit(&x, q.z);
  auto ratio = ad::sub(s.model.encoder->log_density(x, q.z), s.model.prior->log_density(q.z));
  std::vector<double> tv(t.values().begin(), t.values().end()), rv(ratio.values().begin(), ratio.values().end());
  EXPECT_GT(pearson(tv, rv), 0.95);
}
