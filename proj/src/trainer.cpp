#include "evnet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "evnet/parallel.hpp"
#include "evnet/random.hpp"

namespace evnet {

void validate(const TrainConfig& cfg) {
  require(cfg.epochs >= 1, "epochs >= 1 required");
  require(cfg.batch_size >= 2, "batch_size >= 2 required");
  require(cfg.k >= 1, "k >= 1 required");
  require(cfg.p_u >= 0.0, "p_u must be non-negative");
  require(cfg.nu_y > 0.0 && cfg.nu_z > 0.0, "nu_y and nu_z must be positive");
  require(cfg.lr > 0.0, "lr must be positive");
  require(cfg.weight_decay >= 0.0, "weight_decay must be non-negative");
  require(cfg.epsilon >= 0.0 && cfg.epsilon < kGateInit, "epsilon must lie in [0, 0.2) so fresh gates start open");
  require(!cfg.shape.projection.empty() && !cfg.shape.head.empty(), "network shape must have layers");
  require(cfg.threads >= 1, "threads >= 1 required");
}

LossConfig loss_config(const TrainConfig& cfg, std::size_t n_features) {
  LossConfig lc;
  lc.nu_y = cfg.nu_y;
  lc.nu_z = cfg.nu_z;
  lc.target_features = cfg.target_features == 0 ? n_features : cfg.target_features;
  lc.include_diagonal = cfg.include_diagonal;
  return lc;
}

AugmentConfig augment_config(const TrainConfig& cfg) {
  AugmentConfig ac;
  ac.p_u = cfg.p_u;
  ac.mode = cfg.supervised ? AugmentMode::kSupervised : AugmentMode::kUnsupervised;
  ac.shared_ru = cfg.shared_ru;
  return ac;
}

Dataset prepare_training_data(const Dataset& raw, const TrainConfig& cfg) {
  validate(cfg);
  Dataset d = normalize(raw, cfg.normalization);
  return build_knn(d, cfg.k, cfg.supervised, cfg.threads);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t rows, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch) {
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_stream({tag(StreamTag::kShuffle), seed, static_cast<std::uint64_t>(epoch)});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const std::size_t b = std::min(batch_size, rows);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < rows; start += b) {
    const std::size_t end = std::min(rows, start + b);
    if (end - start < 2 && !batches.empty()) {
      batches.back().insert(batches.back().end(), order.begin() + static_cast<std::ptrdiff_t>(start),
                            order.begin() + static_cast<std::ptrdiff_t>(end));
    } else {
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return batches;
}

Trainer::Trainer(const Dataset& data, const TrainConfig& cfg) : data_(data) {
  validate(cfg);
  require(data.rows() >= 2, "training needs at least 2 rows");
  require(data.has_knn(), "training data has no kNN graph");
  if (cfg.supervised) require(data.supervised_neighbors.has_value(), "supervised training needs supervised neighbors");
  const std::size_t n = data.cols();
  require(cfg.target_features <= n, "target_features (" + std::to_string(cfg.target_features) +
                                        ") exceeds the feature count (" + std::to_string(n) + ")");
  state_.config = cfg;
  state_.params = init_params(n, cfg.seed, cfg.shape, cfg.epsilon);
  state_.optimizer = AdamWState::zeros_like(state_.params);
  state_.report.target_features = cfg.target_features == 0 ? n : cfg.target_features;
  state_.report.pruning = state_.report.target_features < n;
  if (!state_.report.pruning) {
    // Without a feature target the regularizer is off and the gates only scale.
    state_.lambda = {0.0, true, true};
  }
}

Trainer::Trainer(const Dataset& data, TrainerState resume) : data_(data), state_(std::move(resume)) {
  validate(state_.config);
  require(data.has_knn(), "training data has no kNN graph");
  require(data.cols() == state_.params.input_dim(), "resume: dataset has " + std::to_string(data.cols()) +
                                                        " features, checkpoint expects " +
                                                        std::to_string(state_.params.input_dim()));
}

void Trainer::enforce_gate_floor(const std::vector<std::size_t>& open_before) {
  const auto& cfg = state_.config;
  if (!state_.report.pruning) {
    // Pruning disabled: every gate stays open.
    const double floor = std::nextafter(cfg.epsilon, std::numeric_limits<double>::infinity());
    for (Eigen::Index j = 0; j < state_.params.gate.size(); ++j) {
      state_.params.gate(j) = std::max(state_.params.gate(j), floor);
    }
    return;
  }
  const std::size_t target = state_.report.target_features;
  std::size_t active = active_features(state_.params).size();
  if (active >= target) return;
  // Reopen the strongest gates that closed during this step until the count
  // is back at the target.
  std::vector<std::size_t> closed_now;
  for (std::size_t j : open_before) {
    if (!gate_open(state_.params.gate(static_cast<Eigen::Index>(j)), state_.params.epsilon)) closed_now.push_back(j);
  }
  std::stable_sort(closed_now.begin(), closed_now.end(), [&](std::size_t a, std::size_t b) {
    return state_.params.gate(static_cast<Eigen::Index>(a)) > state_.params.gate(static_cast<Eigen::Index>(b));
  });
  const double floor = std::nextafter(state_.params.epsilon, std::numeric_limits<double>::infinity());
  for (std::size_t j : closed_now) {
    if (active >= target) break;
    state_.params.gate(static_cast<Eigen::Index>(j)) = floor;
    ++active;
  }
}

void Trainer::train_batch(const std::vector<std::size_t>& items, double& l_sp_sum) {
  const auto& cfg = state_.config;
  const std::size_t n = data_.cols();
  const auto b = static_cast<Eigen::Index>(items.size());
  Matrix original(b, static_cast<Eigen::Index>(n));
  Matrix augmented(b, static_cast<Eigen::Index>(n));
  const AugmentConfig aug_cfg = augment_config(cfg);
  const auto epoch = static_cast<std::uint64_t>(state_.epochs_completed);
  parallel_for(items.size(), cfg.threads, [&](std::size_t p) {
    const std::size_t i = items[p];
    auto rng = make_stream({tag(StreamTag::kAugment), cfg.seed, epoch, static_cast<std::uint64_t>(i)});
    const Augmented aug = augment_point(data_, i, aug_cfg, rng);
    original.row(static_cast<Eigen::Index>(p)) = data_.features.row(static_cast<Eigen::Index>(aug.record.source));
    augmented.row(static_cast<Eigen::Index>(p)) = aug.x.transpose();
  });

  ObjectiveOptions opts;
  opts.loss = loss_config(cfg, n);
  opts.detach_target = cfg.detach_target;
  opts.threads = cfg.threads;
  if (!state_.lambda.initialized) {
    const ObjectiveResult probe = evaluate_objective(state_.params, original, augmented, opts, true);
    if (!std::isfinite(probe.l_sp)) fail(ErrorCode::kNumeric, "non-finite loss while initializing lambda");
    state_.lambda = lambda_init(probe.l_sp, probe.l_r, opts.loss.lambda_init_ratio);
  }
  opts.lambda = state_.lambda.lambda;

  ObjectiveResult result = evaluate_objective(state_.params, original, augmented, opts);
  if (!std::isfinite(result.total)) fail(ErrorCode::kNumeric, "non-finite loss");
  l_sp_sum += result.l_sp;

  AdamWConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;
  const std::vector<std::size_t> open_before = active_features(state_.params);
  adamw_step(state_.params, result.grads, state_.optimizer, adam);
  enforce_gate_floor(open_before);
}

void Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  const auto& cfg = state_.config;
  TrainerState backup = state_;
  const auto batches = epoch_batches(data_.rows(), cfg.batch_size, cfg.seed, state_.epochs_completed);
  double l_sp_sum = 0.0;
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    try {
      train_batch(batches[bi], l_sp_sum);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNumeric) throw;
      state_ = backup;
      throw TrainingAborted("training aborted at epoch " + std::to_string(backup.epochs_completed + 1) + ", batch " +
                                std::to_string(bi + 1) + ": " + e.what(),
                            std::move(backup));
    }
  }

  EpochRecord rec;
  rec.epoch = state_.epochs_completed + 1;
  rec.l_sp = l_sp_sum / static_cast<double>(batches.size());
  rec.l_r = loss_reg(state_.params.gate);
  rec.lambda = state_.lambda.lambda;
  rec.total = rec.l_sp + rec.lambda * rec.l_r;
  rec.active = active_features(state_.params).size();
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  auto& report = state_.report;
  if (!report.history.empty() && rec.active > report.history.back().active) {
    report.warnings.push_back("epoch " + std::to_string(rec.epoch) + ": active feature count rose from " +
                              std::to_string(report.history.back().active) + " to " + std::to_string(rec.active));
  }
  report.history.push_back(rec);
  if (report.pruning) {
    state_.lambda = lambda_step(state_.lambda, rec.active, report.target_features, LossConfig{}.lambda_growth);
  }
  report.target_reached = rec.active <= report.target_features;
  state_.epochs_completed += 1;
}

void Trainer::run(std::size_t epochs, const EpochCallback& on_epoch) {
  for (std::size_t e = 0; e < epochs; ++e) {
    run_epoch();
    if (on_epoch) on_epoch(state_);
  }
}

TrainerState fit(const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  Trainer trainer(data, cfg);
  trainer.run(cfg.epochs, on_epoch);
  return trainer.release();
}

Matrix embed(const Matrix& x, const ModelParams& params, std::size_t threads) {
  require(static_cast<std::size_t>(x.cols()) == params.input_dim(),
          "embed: input has " + std::to_string(x.cols()) + " columns, model expects " +
              std::to_string(params.input_dim()));
  return forward_output(x, params, threads);
}

Matrix embed(const Dataset& d, const ModelParams& params, const std::optional<NormalizationStats>& stats,
             std::size_t threads) {
  if (stats) return embed(apply_normalization(d.features, *stats), params, threads);
  return embed(d.features, params, threads);
}

}  // namespace evnet
