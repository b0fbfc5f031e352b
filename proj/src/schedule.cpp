#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "tgvunet/training.hpp"

namespace tgvunet {

ScheduleState ScheduleState::start(double lr) {
  ScheduleState s;
  s.initial_lr = lr;
  s.current_lr = lr;
  return s;
}

ScheduleState schedule_update(ScheduleState s, double val_loss, const ScheduleConfig& cfg) {
  if (!std::isfinite(val_loss)) throw Error("schedule_update: validation loss is not finite");
  if (s.stopped) return s;
  s.improved = val_loss < s.best_val_loss - cfg.min_improvement;
  if (s.improved) {
    s.best_val_loss = val_loss;
    s.epochs_since_improvement = 0;
    s.plateau_count = 0;
    return s;
  }
  ++s.epochs_since_improvement;
  if (++s.plateau_count >= cfg.plateau_patience) {
    s.current_lr *= 0.5;
    s.plateau_count = 0;
  }
  if (s.epochs_since_improvement >= cfg.early_stop_patience) s.stopped = true;
  return s;
}

std::vector<Fold> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("kfold_split: k must be >= 2, got " + std::to_string(k));
  if (n < k) throw ConfigError("kfold_split: n=" + std::to_string(n) + " is smaller than k=" + std::to_string(k));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 gen(derive_seed(seed, "kfold"));
  std::shuffle(order.begin(), order.end(), gen);

  std::vector<Fold> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = n / k + (f < n % k ? 1 : 0);
    folds[f].val.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                        order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    std::sort(folds[f].val.begin(), folds[f].val.end());
    pos += len;
  }
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) folds[f].train.insert(folds[f].train.end(), folds[g].val.begin(), folds[g].val.end());
    std::sort(folds[f].train.begin(), folds[f].train.end());
  }
  return folds;
}

Fold stratified_split(const std::vector<std::string>& tags, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0 && fraction < 1)) throw ConfigError("stratified_split: fraction must be in [0, 1)");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < tags.size(); ++i) groups[tags[i]].push_back(i);
  Fold out;
  for (auto& [tag, idx] : groups) {
    std::mt19937_64 gen(derive_seed(seed, "split/" + tag));
    std::shuffle(idx.begin(), idx.end(), gen);
    std::size_t nval = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size()) + 0.5));
    nval = std::min(nval, idx.size() - 1);
    out.val.insert(out.val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nval));
    out.train.insert(out.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(nval), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

}  // namespace tgvunet
