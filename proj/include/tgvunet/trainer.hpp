#pragma once

// Mini-batch assembly, evaluation and the epoch loop.

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tgvunet/data.hpp"
#include "tgvunet/metrics.hpp"
#include "tgvunet/network.hpp"
#include "tgvunet/training.hpp"

namespace tgvunet {

enum class PipelineStage { train, validation, test };

struct Batch {
  Tensor images;  // (n, 1, h, w)
  Tensor masks;
  PipelineStage stage = PipelineStage::train;
  bool augmented = false;
};

// Stacks samples[idx]. Augmentation is only legal in the train stage; asking
// for it anywhere else throws Error.
Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> idx, PipelineStage stage,
                 const AugmentSpec* aug = nullptr, std::mt19937_64* rng = nullptr);

struct TrainConfig {
  int epochs = 100;
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  AdamConfig adam;
  ScheduleConfig schedule;
  int folds = 10;
  double val_fraction = 0.1;
  double threshold = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;
  double dice = 0;  // on the validation set (training set when it is empty)
  double iou = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  ScheduleState schedule;
  int best_epoch = -1;
  bool stopped_early = false;
};

struct FitCallbacks {
  std::function<void(const EpochRecord&)> on_epoch;
  // After an epoch that improved the validation loss.
  std::function<void(Network&, const EpochRecord&)> on_best;
};

struct Evaluation {
  double loss = 0;  // mean bce plus per-sample regulariser
  MetricsReport metrics;
  std::vector<Tensor> probabilities;  // one (1, 1, h, w) map per sample
};

// Eval mode, never augmented.
Evaluation evaluate(Network& net, const std::vector<Sample>& samples, double threshold, std::size_t batch_size,
                    PipelineStage stage = PipelineStage::test);

// Shuffled mini-batches (last partial batch kept), Adam, plateau schedule,
// early stop. An empty `val` makes the schedule and curves use `train`.
TrainReport fit(Network& net, const std::vector<Sample>& train, const std::vector<Sample>& val, const TrainConfig& cfg,
                const AugmentSpec& aug = {}, const FitCallbacks& callbacks = {});

// epoch,train_loss,val_loss,lr,dice,iou
std::string report_csv(const TrainReport& r);

}  // namespace tgvunet
