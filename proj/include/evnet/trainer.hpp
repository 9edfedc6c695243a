#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "evnet/augment.hpp"
#include "evnet/dataset.hpp"
#include "evnet/loss.hpp"
#include "evnet/network.hpp"
#include "evnet/optim.hpp"

namespace evnet {

// Hyperparameter grids used for model selection.
inline constexpr double kNuZGrid[] = {1e-3, 5e-3, 1e-2, 1e-1};
inline constexpr std::size_t kKnnGrid[] = {3, 5, 8, 10, 15};

struct TrainConfig {
  std::size_t epochs = 400;
  std::size_t batch_size = 1000;  // capped at M
  std::size_t k = 5;
  double p_u = 2.0;
  double nu_y = 100.0;
  double nu_z = 0.01;
  double lr = 1e-3;
  double weight_decay = 1e-2;
  std::size_t target_features = 0;  // A_f; 0 = number of features (pruning off)
  std::uint64_t seed = 0;
  bool supervised = false;
  bool detach_target = true;
  bool shared_ru = false;
  bool include_diagonal = true;
  double epsilon = kDefaultEpsilon;
  NormMode normalization = NormMode::kMinMax;
  NetworkShape shape;
  // Worker threads. Results never depend on it, so it is not persisted.
  std::size_t threads = 1;
};

void validate(const TrainConfig& cfg);

LossConfig loss_config(const TrainConfig& cfg, std::size_t n_features);
AugmentConfig augment_config(const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double l_sp = 0.0;     // mean over the epoch's batches
  double l_r = 0.0;      // at epoch end
  double lambda = 0.0;   // value in effect during the epoch
  double total = 0.0;    // l_sp + lambda * l_r
  std::size_t active = 0;  // open gates at epoch end
  double wall_ms = 0.0;  // not persisted
};

struct TrainReport {
  std::vector<EpochRecord> history;
  bool pruning = false;
  std::size_t target_features = 0;
  bool target_reached = false;
  std::vector<std::string> warnings;
};

struct TrainerState {
  TrainConfig config;
  ModelParams params;
  AdamWState optimizer;
  LambdaState lambda;
  std::size_t epochs_completed = 0;
  TrainReport report;
};

// Normalizes (fitting fresh statistics) and builds the kNN graph cfg asks for.
Dataset prepare_training_data(const Dataset& raw, const TrainConfig& cfg);

// Thrown when training hits a non-finite value; carries the state as it was
// before the failing epoch.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& message, TrainerState last_good)
      : Error(ErrorCode::kNumeric, message), last_good_(std::move(last_good)) {}
  const TrainerState& last_good() const { return last_good_; }

 private:
  TrainerState last_good_;
};

using EpochCallback = std::function<void(const TrainerState&)>;

class Trainer {
 public:
  // `data` must outlive the trainer and carry a kNN graph.
  Trainer(const Dataset& data, const TrainConfig& cfg);
  Trainer(const Dataset& data, TrainerState resume);

  void run_epoch();
  void run(std::size_t epochs, const EpochCallback& on_epoch = {});
  bool done() const { return state_.epochs_completed >= state_.config.epochs; }

  const TrainerState& state() const { return state_; }
  TrainerState release() { return std::move(state_); }

 private:
  void train_batch(const std::vector<std::size_t>& items, double& l_sp_sum);
  void enforce_gate_floor(const std::vector<std::size_t>& open_before);

  const Dataset& data_;
  TrainerState state_;
};

// Trains for cfg.epochs on a prepared dataset.
TrainerState fit(const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Pure forward pass. `x` must already be normalized like the training data.
Matrix embed(const Matrix& x, const ModelParams& params, std::size_t threads = 1);

// Applies the checkpoint's normalization when given, then embeds.
Matrix embed(const Dataset& d, const ModelParams& params, const std::optional<NormalizationStats>& stats,
             std::size_t threads = 1);

// Minibatches of one epoch: a seeded permutation cut into runs of
// min(batch_size, M); a trailing batch of one item joins its predecessor.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t rows, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch);

}  // namespace evnet
