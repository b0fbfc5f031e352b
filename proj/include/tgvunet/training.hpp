#pragma once

// Loss assembly, optimisers, the plateau/early-stop schedule and index splits.

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tgvunet/tape.hpp"
#include "tgvunet/upsampling.hpp"

namespace tgvunet {

// bce(pred, target) + tgv_loss_term(maps). With gamma = lambda = 0 the
// result equals the bce value exactly.
Var total_loss(Tape& t, Var pred, const Tensor& target, std::span<const Var> decoder_maps, TGVParams& tgv);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Increments step_count; leaves grads alone.
void adam_step(std::span<Param* const> params, double lr, const AdamConfig& cfg = {});
// p <- p - lr * grad
void sgd_step(std::span<Param* const> params, double lr);
void zero_grads(std::span<Param* const> params);

struct ScheduleConfig {
  int plateau_patience = 10;
  int early_stop_patience = 20;
  double min_improvement = 1e-6;
};

struct ScheduleState {
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;  // drives early stopping
  int plateau_count = 0;             // drives halving, reset after each halving
  double initial_lr = 0;
  double current_lr = 0;
  bool stopped = false;
  bool improved = false;  // whether the last update improved

  static ScheduleState start(double lr);
};

// Improvement means val_loss < best - min_improvement. After
// plateau_patience non-improving epochs in a row the lr halves and the
// plateau count restarts; after early_stop_patience the run stops.
ScheduleState schedule_update(ScheduleState s, double val_loss, const ScheduleConfig& cfg);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

// Shuffled k-fold partition of [0, n). The first n % k folds get one extra
// validation index. Throws ConfigError when n < k or k < 2.
std::vector<Fold> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

// Per-tag shuffled hold-out: round(fraction * count) indices of each tag go
// to validation, always leaving at least one for training.
Fold stratified_split(const std::vector<std::string>& tags, double fraction, std::uint64_t seed);

}  // namespace tgvunet
