#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "tgvunet/config.hpp"
#include "tgvunet/trainer.hpp"
#include "tgvunet/training.hpp"

using namespace tgvunet;

TEST_CASE("adam first step from zero") {
  Param p("p", Tensor::scalar(0.0));
  p.grad[0] = 0.5;
  Param* ps[] = {&p};
  adam_step(ps, 1e-4);
  // m = 0.05, v = 0.00025; after bias correction 0.5 / (0.5 + 1e-8)
  CHECK(p.value[0] == doctest::Approx(-1e-4 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(p.step_count == 1);
  CHECK(p.grad[0] == 0.5);  // left for the caller

  Param q("q", Tensor::scalar(3.0));
  Param* qs[] = {&q};
  adam_step(qs, 1e-2);
  CHECK(q.value[0] == 3.0);
  CHECK(q.m[0] == 0.0);
  CHECK(q.v[0] == 0.0);
}

TEST_CASE("adam trajectories are reproducible") {
  auto run = [] {
    Param p("p", Tensor({1, 1, 1, 3}, {1.0, -2.0, 0.5}));
    Param* ps[] = {&p};
    for (int i = 0; i < 50; ++i) {
      for (std::size_t k = 0; k < 3; ++k) p.grad[k] = 2 * p.value[k] + 0.1 * k;
      adam_step(ps, 1e-2);
    }
    return p.value.values();
  };
  CHECK(run() == run());
}

TEST_CASE("sgd examples") {
  Param p("p", Tensor::scalar(1.0));
  p.grad[0] = 2;
  Param* ps[] = {&p};
  sgd_step(ps, 0.1);
  CHECK(p.value[0] == doctest::Approx(0.8).epsilon(1e-15));
  sgd_step(ps, 0.0);
  CHECK(p.value[0] == doctest::Approx(0.8).epsilon(1e-15));
  zero_grads(ps);
  CHECK(p.grad[0] == 0.0);
}

TEST_CASE("one sgd step on a sigmoid neuron matches the hand-applied backprop rule") {
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 25; ++trial) {
    const double x1 = u(g), x2 = u(g), w1 = u(g), w2 = u(g), th = u(g), eta = 0.3;
    const double target = trial % 2;

    // by hand: weighted sum, activation, output error, update
    const double X = w1 * x1 + w2 * x2 + th;
    const double A = 1 / (1 + std::exp(-X));
    const double e = A * (1 - A) * (A - target);
    const double w1_new = w1 - eta * e * x1, w2_new = w2 - eta * e * x2, th_new = th - eta * e;

    // machinery: 1x1 conv over two channels, sigmoid, squared error
    Param w("w", Tensor({1, 2, 1, 1}, {w1, w2})), b("b", Tensor({1, 1, 1, 1}, th));
    Tape t;
    Var a = ops::sigmoid(t, ops::conv2d(t, t.constant(Tensor({1, 2, 1, 1}, {x1, x2})), w, b, 0));
    t.backward(ops::half_squared_error(t, a, Tensor::scalar(target)));
    Param* ps[] = {&w, &b};
    sgd_step(ps, eta);
    CHECK(std::abs(w.value[0] - w1_new) <= 1e-12);
    CHECK(std::abs(w.value[1] - w2_new) <= 1e-12);
    CHECK(std::abs(b.value[0] - th_new) <= 1e-12);
  }
}

TEST_CASE("schedule examples") {
  const ScheduleConfig cfg;
  ScheduleState s = ScheduleState::start(1e-4);
  for (int e = 0; e < 30; ++e) s = schedule_update(s, 1.0 - 0.01 * e, cfg);
  CHECK(s.current_lr == 1e-4);
  CHECK_FALSE(s.stopped);

  s = ScheduleState::start(1e-4);
  s = schedule_update(s, 1.0, cfg);  // first value always improves on +inf
  for (int e = 1; e <= 9; ++e) s = schedule_update(s, 1.0, cfg);
  CHECK(s.current_lr == 1e-4);
  s = schedule_update(s, 1.0, cfg);
  CHECK(s.current_lr == 5e-5);
  for (int e = 11; e <= 19; ++e) s = schedule_update(s, 1.0, cfg);
  CHECK_FALSE(s.stopped);
  s = schedule_update(s, 1.0, cfg);
  CHECK(s.stopped);
  CHECK(s.current_lr == 2.5e-5);
  // frozen once stopped
  CHECK(schedule_update(s, 0.0, cfg).best_val_loss == 1.0);

  CHECK_THROWS_AS(schedule_update(ScheduleState::start(1.0), std::nan(""), cfg), Error);
}

TEST_CASE("ties and sub-threshold gains do not count as improvement") {
  const ScheduleConfig cfg;
  ScheduleState s = schedule_update(ScheduleState::start(1.0), 1.0, cfg);
  s = schedule_update(s, 1.0 - 5e-7, cfg);
  CHECK_FALSE(s.improved);
  CHECK(s.epochs_since_improvement == 1);
  s = schedule_update(s, 0.5, cfg);
  CHECK(s.improved);
  CHECK(s.epochs_since_improvement == 0);
  CHECK(s.plateau_count == 0);
}

TEST_CASE("lr after e flat epochs is lr0 * 2^-floor(e / patience)") {
  for (int patience : {1, 3, 10}) {
    ScheduleConfig cfg;
    cfg.plateau_patience = patience;
    cfg.early_stop_patience = 1000;
    ScheduleState s = schedule_update(ScheduleState::start(0.25), 2.0, cfg);
    for (int e = 1; e <= 60; ++e) {
      s = schedule_update(s, 2.0, cfg);
      CHECK(s.current_lr == 0.25 * std::ldexp(1.0, -(e / patience)));
      CHECK(s.current_lr <= s.initial_lr);
    }
  }
}

TEST_CASE("kfold examples") {
  auto f20 = kfold_split(20, 10, 1);
  REQUIRE(f20.size() == 10);
  std::set<std::size_t> seen;
  for (const Fold& f : f20) {
    CHECK(f.val.size() == 2);
    CHECK(f.train.size() == 18);
    seen.insert(f.val.begin(), f.val.end());
  }
  CHECK(seen.size() == 20);

  auto f23 = kfold_split(23, 10, 1);
  int threes = 0;
  for (const Fold& f : f23) {
    CHECK((f.val.size() == 2 || f.val.size() == 3));
    threes += f.val.size() == 3;
  }
  CHECK(threes == 3);
  CHECK(kfold_split(23, 10, 1)[4].val == f23[4].val);
  CHECK_THROWS_AS(kfold_split(5, 10, 0), ConfigError);
  CHECK_THROWS_AS(kfold_split(5, 1, 0), ConfigError);
}

TEST_CASE("kfold validation sets partition the index range") {
  std::mt19937_64 g(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + g() % 10;
    const std::size_t n = k + g() % 60;
    const auto folds = kfold_split(n, k, g());
    std::vector<int> hits(n, 0);
    std::size_t lo = n, hi = 0;
    for (const Fold& f : folds) {
      for (std::size_t i : f.val) ++hits[i];
      lo = std::min(lo, f.val.size());
      hi = std::max(hi, f.val.size());
      // train is the complement
      std::vector<std::size_t> all = f.train;
      all.insert(all.end(), f.val.begin(), f.val.end());
      std::sort(all.begin(), all.end());
      std::vector<std::size_t> want(n);
      std::iota(want.begin(), want.end(), 0);
      CHECK(all == want);
    }
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    CHECK(hi - lo <= 1);
  }
}

TEST_CASE("stratified split holds out per tag") {
  std::vector<std::string> tags;
  for (int i = 0; i < 20; ++i) tags.push_back("a");
  for (int i = 0; i < 10; ++i) tags.push_back("b");
  tags.push_back("c");
  const Fold f = stratified_split(tags, 0.1, 3);
  std::size_t va = 0, vb = 0, vc = 0;
  for (std::size_t i : f.val) (tags[i] == "a" ? va : tags[i] == "b" ? vb : vc)++;
  CHECK(va == 2);
  CHECK(vb == 1);
  CHECK(vc == 0);  // a lone sample stays in training
  CHECK(f.train.size() + f.val.size() == tags.size());
  CHECK(stratified_split(tags, 0.0, 3).val.empty());
  CHECK_THROWS_AS(stratified_split(tags, 1.0, 3), ConfigError);
}

TEST_CASE("total loss against bce") {
  std::mt19937_64 g(8);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  Tensor pred({2, 1, 6, 6}), target({2, 1, 6, 6}), map({2, 2, 6, 6});
  for (double& v : pred.data()) v = u(g);
  for (double& v : target.data()) v = u(g) > 0.5;
  for (std::size_t i = 0; i < map.size(); ++i) map[i] = (i % 6) < 3 ? 0.0 : 1.0;

  auto both = [&](const TGVSettings& s, const Tensor& m) {
    TGVParams p(s);
    Tape t;
    Var pv = t.constant(pred);
    const Var maps[] = {t.constant(m)};
    const double bce = t.value(ops::bce_loss(t, pv, target)).item();
    const double total = t.value(total_loss(t, pv, target, maps, p)).item();
    return std::pair{bce, total};
  };

  TGVSettings off;
  off.gamma = 0;
  off.lambda = 0;
  auto [b0, t0] = both(off, map);
  CHECK(b0 == t0);

  auto [b1, t1] = both(TGVSettings{}, Tensor(map.shape(), 0.7));
  CHECK(std::abs(b1 - t1) <= 1e-12);

  TGVSettings on;
  on.gamma = 1;
  auto [b2, t2] = both(on, map);
  CHECK(t2 > b2);
}

namespace {

std::vector<Sample> toy_samples(std::size_t n) { return synth_blobs(n, 8, 4); }

UNetPPConfig toy_net() {
  UNetPPConfig c;
  c.depth = 2;
  c.base_channels = 2;
  c.seed = 1;
  return c;
}

}  // namespace

TEST_CASE("fit with zero epochs leaves parameters alone") {
  Network net(toy_net());
  std::vector<std::vector<double>> before;
  for (Param* p : net.parameters()) before.push_back(p->value.values());
  TrainConfig tc;
  tc.epochs = 0;
  tc.batch_size = 2;
  const TrainReport r = fit(net, toy_samples(4), {}, tc);
  CHECK(r.epochs.empty());
  std::size_t i = 0;
  for (Param* p : net.parameters()) CHECK(p->value.values() == before[i++]);
}

TEST_CASE("fit rejects a batch larger than the training set") {
  Network net(toy_net());
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 5;
  CHECK_THROWS_AS(fit(net, toy_samples(4), {}, tc), ConfigError);
  CHECK_THROWS_AS(fit(net, {}, {}, tc), DataError);
}

TEST_CASE("augmentation never reaches evaluation paths") {
  const auto s = toy_samples(3);
  const std::size_t idx[] = {0, 2};
  AugmentSpec aug;
  aug.hflip_p = 1;
  std::mt19937_64 rng(1);
  const Batch tb = make_batch(s, idx, PipelineStage::train, &aug, &rng);
  CHECK(tb.augmented);
  CHECK(tb.images.shape() == Shape{2, 1, 8, 8});
  CHECK_THROWS_AS(make_batch(s, idx, PipelineStage::validation, &aug, &rng), Error);
  CHECK_THROWS_AS(make_batch(s, idx, PipelineStage::test, &aug, &rng), Error);
  const Batch vb = make_batch(s, idx, PipelineStage::validation);
  CHECK_FALSE(vb.augmented);
  CHECK(vb.images.values() == make_batch(s, idx, PipelineStage::train).images.values());

  Network net(toy_net());
  CHECK_THROWS_AS(evaluate(net, s, 0.5, 2, PipelineStage::train), Error);
}

TEST_CASE("fit records every epoch and the csv has one row per epoch") {
  Network net(toy_net());
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 2;
  tc.learning_rate = 1e-2;
  int calls = 0;
  FitCallbacks cb;
  cb.on_epoch = [&](const EpochRecord&) { ++calls; };
  const auto s = toy_samples(4);
  const TrainReport r = fit(net, s, {s[0]}, tc, {}, cb);
  CHECK(calls == 3);
  REQUIRE(r.epochs.size() == 3);
  CHECK(r.epochs[0].epoch == 1);
  const std::string csv = report_csv(r);
  CHECK(csv.rfind("epoch,train_loss,val_loss,lr,dice,iou\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

// The overfit smoke run: its training loss, averaged over consecutive
// 10-epoch windows, must never go up.
TEST_CASE("smoothed training loss is non-increasing on the overfit run") {
  RunConfig cfg;
  set_config_value(cfg, "data", "synthetic", "8");
  set_config_value(cfg, "network", "depth", "2");
  set_config_value(cfg, "network", "base_channels", "2");
  set_config_value(cfg, "train", "epochs", "200");
  set_config_value(cfg, "train", "learning_rate", "3e-2");
  set_config_value(cfg, "train", "batch_size", "4");
  set_config_value(cfg, "train", "val_fraction", "0");
  cfg.resolve_seeds();
  cfg.validate();
  const auto samples = synth_blobs(cfg.synthetic, cfg.size, derive_seed(cfg.seed, "data"));
  Network net(cfg.network);
  const TrainReport r = fit(net, samples, {}, cfg.train, cfg.augment);
  REQUIRE(r.epochs.size() >= 20);
  std::vector<double> windows;
  for (std::size_t w = 0; w + 10 <= r.epochs.size(); w += 10) {
    double sum = 0;
    for (std::size_t e = w; e < w + 10; ++e) sum += r.epochs[e].train_loss;
    windows.push_back(sum / 10);
  }
  for (std::size_t i = 1; i < windows.size(); ++i) {
    CAPTURE(i);
    CHECK(windows[i] <= windows[i - 1]);
  }
  CHECK(r.epochs.back().dice > 0.95);
}
