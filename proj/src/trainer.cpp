#include "tgvunet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace tgvunet {

Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> idx, PipelineStage stage,
                 const AugmentSpec* aug, std::mt19937_64* rng) {
  if (idx.empty()) throw ShapeError("make_batch: empty index list");
  const bool augment_now = aug != nullptr && aug->any();
  if (augment_now && stage != PipelineStage::train)
    throw Error("make_batch: augmentation requested outside the training pipeline");
  if (augment_now && rng == nullptr) throw Error("make_batch: augmentation needs a generator");

  const Sample& first = samples.at(idx[0]);
  const std::size_t h = first.height(), w = first.width();
  Batch b;
  b.stage = stage;
  b.augmented = augment_now;
  b.images = Tensor({idx.size(), 1, h, w});
  b.masks = Tensor({idx.size(), 1, h, w});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Sample& src = samples.at(idx[k]);
    if (src.height() != h || src.width() != w) {
      throw ShapeError("make_batch: sample '" + src.stem + "' is " + std::to_string(src.height()) + "x" +
                       std::to_string(src.width()) + ", batch is " + std::to_string(h) + "x" + std::to_string(w));
    }
    const Sample s = augment_now ? augment(src, *aug, *rng) : src;
    std::copy(s.image.data().begin(), s.image.data().end(), b.images.plane(k, 0));
    std::copy(s.mask.data().begin(), s.mask.data().end(), b.masks.plane(k, 0));
  }
  return b;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (!(learning_rate > 0)) throw ConfigError("train: learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) || !(adam.eps > 0))
    throw ConfigError("train: need beta1, beta2 in [0, 1) and adam_eps > 0");
  if (schedule.plateau_patience < 1 || schedule.plateau_patience >= schedule.early_stop_patience)
    throw ConfigError("train: need 1 <= plateau_patience < early_stop_patience");
  if (folds < 2) throw ConfigError("train: folds must be >= 2");
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("train: val_fraction must be in [0, 1)");
  if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("train: threshold must be in [0, 1]");
}

Evaluation evaluate(Network& net, const std::vector<Sample>& samples, double threshold, std::size_t batch_size,
                    PipelineStage stage) {
  if (samples.empty()) throw DataError("evaluate: no samples");
  if (stage == PipelineStage::train) throw Error("evaluate: the train stage is not an evaluation path");
  Evaluation ev;
  ConfusionCounts counts;
  std::vector<SliceMasks> slices;
  double loss_sum = 0;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t pos = 0; pos < order.size(); pos += batch_size) {
    const std::size_t len = std::min(batch_size, order.size() - pos);
    const std::span<const std::size_t> idx(order.data() + pos, len);
    const Batch b = make_batch(samples, idx, stage);
    Tape t;
    const ForwardOutput out = net.forward(t, t.constant(b.images), Mode::eval);
    const double bce = t.value(ops::bce_loss(t, out.prob, b.masks)).item();
    const double reg = t.value(net.regularizer(t, out)).item();
    loss_sum += (bce + reg) * static_cast<double>(len);
    const Tensor& prob = t.value(out.prob);
    counts += confusion(prob, b.masks, threshold);
    const Shape ps{1, 1, prob.shape().h, prob.shape().w};
    for (std::size_t k = 0; k < len; ++k) {
      Tensor p(ps, std::vector<double>(prob.plane(k, 0), prob.plane(k, 0) + ps.plane()));
      const Sample& s = samples[idx[k]];
      slices.push_back({s.volume_id, binarize(p, threshold), s.mask});
      ev.probabilities.push_back(std::move(p));
    }
  }
  ev.loss = loss_sum / static_cast<double>(samples.size());
  ev.metrics = compute_metrics(counts);
  ev.metrics.fp_per_volume = fp_per_volume(slices);
  return ev;
}

TrainReport fit(Network& net, const std::vector<Sample>& train, const std::vector<Sample>& val, const TrainConfig& cfg,
                const AugmentSpec& aug, const FitCallbacks& callbacks) {
  cfg.validate();
  aug.validate();
  if (train.empty()) throw DataError("fit: empty training set");
  if (cfg.batch_size > train.size()) {
    throw ConfigError("fit: batch_size " + std::to_string(cfg.batch_size) + " exceeds the training set size " +
                      std::to_string(train.size()));
  }
  const std::vector<Sample>& monitor = val.empty() ? train : val;
  const PipelineStage monitor_stage = val.empty() ? PipelineStage::test : PipelineStage::validation;

  TrainReport report;
  report.schedule = ScheduleState::start(cfg.learning_rate);
  const std::vector<Param*> params = net.parameters();
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  std::mt19937_64 augment_rng(derive_seed(cfg.seed, "augment"));
  const std::uint64_t dropout_root = derive_seed(cfg.seed, "dropout");
  std::uint64_t step = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs && !report.schedule.stopped; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - pos);
      const Batch b = make_batch(train, std::span<const std::size_t>(order.data() + pos, len), PipelineStage::train,
                                 &aug, &augment_rng);
      zero_grads(params);
      Tape t;
      const ForwardOutput out =
          net.forward(t, t.constant(b.images), Mode::train, derive_seed(dropout_root, std::to_string(step++)));
      const Var loss = ops::add(t, ops::bce_loss(t, out.prob, b.masks), net.regularizer(t, out));
      const double value = t.value(loss).item();
      if (!std::isfinite(value)) {
        throw Error("fit: non-finite training loss at epoch " + std::to_string(epoch) + " (lr " +
                    std::to_string(report.schedule.current_lr) + "); lower the learning rate or gamma");
      }
      t.backward(loss);
      adam_step(params, report.schedule.current_lr, cfg.adam);
      loss_sum += value * static_cast<double>(len);
    }

    const Evaluation ev = evaluate(net, monitor, cfg.threshold, cfg.batch_size, monitor_stage);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.val_loss = ev.loss;
    rec.lr = report.schedule.current_lr;
    rec.dice = ev.metrics.dsc;
    rec.iou = ev.metrics.jaccard;
    report.schedule = schedule_update(report.schedule, ev.loss, cfg.schedule);
    report.epochs.push_back(rec);
    if (callbacks.on_epoch) callbacks.on_epoch(rec);
    if (report.schedule.improved) {
      report.best_epoch = epoch;
      if (callbacks.on_best) callbacks.on_best(net, rec);
    }
  }
  report.stopped_early = report.schedule.stopped;
  return report;
}

std::string report_csv(const TrainReport& r) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,lr,dice,iou\n";
  char buf[256];
  for (const EpochRecord& e : r.epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g,%.10g\n", e.epoch, e.train_loss, e.val_loss, e.lr,
                  e.dice, e.iou);
    out << buf;
  }
  return out.str();
}

}  // namespace tgvunet
