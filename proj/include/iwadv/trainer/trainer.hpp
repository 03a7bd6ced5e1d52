#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "iwadv/objectives/objectives.hpp"

namespace iwadv::train {

using ad::RandomSource;
using ad::Tensor;
using nn::Json;

enum class OptimizerKind { sgd, adam };
OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind k);

struct TrainingConfig {
  obj::ObjectiveSpec objective;  // objective.k is the samples-per-datum K
  std::size_t batch_size = 64;
  double lr_theta = 1e-3, lr_phi = 1e-3, lr_psi = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::size_t max_steps = 1000;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
  std::size_t disc_steps = 1;        // psi updates per (theta, phi) update
  bool early_stop = false;
  std::size_t plateau_window = 200;
  double plateau_tolerance = 1e-4;
  std::filesystem::path checkpoint_path;  // empty = no checkpoints
  std::filesystem::path log_path;         // empty = no JSONL log

  void validate() const;
  Json to_json() const;
  static TrainingConfig from_json(const Json& j);
};

/// One (theta, phi) update followed by `disc_steps` psi updates, or the model
/// update alone for families without a discriminator.
enum class Phase { model, discriminator };
std::vector<Phase> step_schedule(const TrainingConfig& config);

/// Per-parameter first/second moments; `t` counts updates per network.
struct OptimizerState {
  std::map<std::string, std::vector<double>> m, v;
  std::map<std::string, std::uint64_t> t;
};

struct StepRecord {
  std::size_t step = 0;
  double model_loss = 0;  // negated (theta, phi) objective
  double bound = 0;       // the family's main bound on the minibatch
  double disc_loss = 0;   // negated psi objective after the last psi update; 0 without one
  double wall_ms = 0;
};

struct TrainState {
  std::size_t step = 0;
  nn::ModelTriple model;
  OptimizerState optimizer;
  std::string rng;       // serialized sampling stream
  std::string data_rng;  // serialized shuffling stream
  std::vector<std::size_t> order;
  std::size_t cursor = 0, epoch = 0;
  std::vector<StepRecord> history;
  bool stopped_early = false;
  std::string objective;
  std::uint64_t seed = 0;
};

/// Raised when a loss becomes non-finite. The state at the failure is written
/// to "<checkpoint_path>.diag" first when a checkpoint path is configured.
class TrainingHalted : public std::runtime_error {
 public:
  TrainingHalted(const std::string& what, std::filesystem::path diagnostic)
      : std::runtime_error(what), diagnostic_(std::move(diagnostic)) {}
  const std::filesystem::path& diagnostic() const { return diagnostic_; }

 private:
  std::filesystem::path diagnostic_;
};

class Trainer {
 public:
  /// `data` is [examples, ...]; minibatches are row subsets.
  Trainer(TrainingConfig config, Tensor data);

  TrainState init(nn::ModelTriple model) const;
  /// One scheduled step; appends to state.history and returns the record.
  StepRecord step(TrainState& state) const;
  /// Steps until `max_steps` or an early stop; checkpoints per the config.
  void run(TrainState& state) const;

  const TrainingConfig& config() const { return config_; }

 private:
  Tensor next_batch(TrainState& state, RandomSource& data_rng) const;
  void apply(TrainState& state, const nn::ParameterList& params, const std::string& group, double lr) const;
  bool plateaued(const TrainState& state) const;
  void log(const StepRecord& r) const;

  TrainingConfig config_;
  Tensor data_;
};

/// Convenience: init + run.
TrainState train(const Tensor& data, const TrainingConfig& config, nn::ModelTriple model);

/// Loss trajectory as text, one "step model_loss bound disc_loss" line per step
/// with round-trip precision. Wall-clock times are left out.
std::string trajectory_text(const TrainState& state);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const TrainingConfig& config, const std::filesystem::path& path);
/// Rebuilds the model from its stored descriptor and restores every field.
/// Throws CheckpointError naming the offending field.
TrainState load_checkpoint(const std::filesystem::path& path, TrainingConfig* config = nullptr);

}  // namespace iwadv::train
