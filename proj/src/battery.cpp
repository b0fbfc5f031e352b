#include <chrono>
#include <random>

#include "tgvunet/gradcheck.hpp"
#include "tgvunet/network.hpp"
#include "tgvunet/ops.hpp"

namespace tgvunet {

namespace {

// Values in [-1, 1] kept at least `gap` away from 0, so kinks at 0 are
// never crossed by a finite-difference step.
Tensor random_tensor(Shape s, std::mt19937_64& gen, double gap = 0.0) {
  Tensor t(s);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : t.data()) {
    do v = u(gen);
    while (std::abs(v) < gap);
  }
  return t;
}

// Identity forward; backward passes twice the gradient.
Var doubled_backward(Tape& t, Var x) {
  return t.record(t.value(x), [x](Tape& tp, std::span<const double> g) {
    auto gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2 * g[i];
  });
}

struct Case {
  std::string name;
  double tolerance;
  std::function<GradCheckReport(double tol)> run;
};

}  // namespace

std::vector<BatteryResult> run_gradcheck_battery(const BatteryOptions& opt) {
  std::mt19937_64 gen(opt.seed);
  std::vector<Case> cases;

  cases.push_back({"conv2d", 1e-4, [&gen, &opt](double tol) {
                     Param x("x", random_tensor({2, 2, 5, 5}, gen));
                     Param w("w", random_tensor({3, 2, 3, 3}, gen));
                     Param b("b", random_tensor({3, 1, 1, 1}, gen));
                     const Tensor r = random_tensor({2, 3, 5, 5}, gen);
                     const bool corrupt = opt.corrupt_backward;
                     return grad_check(
                         [&](Tape& t) {
                           Var y = ops::conv2d(t, t.input(x), w, b, 1);
                           if (corrupt) y = doubled_backward(t, y);
                           return ops::weighted_sum(t, y, r);
                         },
                         {&x, &w, &b}, {1e-5, tol});
                   }});

  cases.push_back({"relu", 1e-4, [&gen](double tol) {
                     Param x("x", random_tensor({1, 2, 4, 4}, gen, 1e-2));
                     const Tensor r = random_tensor({1, 2, 4, 4}, gen);
                     return grad_check([&](Tape& t) { return ops::weighted_sum(t, ops::relu(t, t.input(x)), r); }, {&x},
                                       {1e-5, tol});
                   }});

  cases.push_back({"batch_norm_train", 1e-4, [&gen](double tol) {
                     Param x("x", random_tensor({2, 3, 4, 4}, gen));
                     BatchNorm bn("bn", 3);
                     bn.scale.value = random_tensor({1, 3, 1, 1}, gen);
                     bn.shift.value = random_tensor({1, 3, 1, 1}, gen);
                     const Tensor r = random_tensor({2, 3, 4, 4}, gen);
                     return grad_check(
                         [&](Tape& t) { return ops::weighted_sum(t, ops::batch_norm(t, t.input(x), bn, Mode::train), r); },
                         {&x, &bn.scale, &bn.shift}, {1e-5, tol});
                   }});

  cases.push_back({"batch_norm_eval", 1e-4, [&gen](double tol) {
                     Param x("x", random_tensor({2, 3, 4, 4}, gen));
                     BatchNorm bn("bn", 3);
                     {
                       Tape warm;
                       ops::batch_norm(warm, warm.constant(random_tensor({2, 3, 4, 4}, gen)), bn, Mode::train);
                     }
                     const Tensor r = random_tensor({2, 3, 4, 4}, gen);
                     return grad_check(
                         [&](Tape& t) { return ops::weighted_sum(t, ops::batch_norm(t, t.input(x), bn, Mode::eval), r); },
                         {&x, &bn.scale, &bn.shift}, {1e-5, tol});
                   }});

  cases.push_back({"max_pool2", 1e-4, [&gen](double tol) {
                     // distinct values on a 0.05 grid plus jitter: no near-ties
                     Tensor v({1, 2, 4, 4});
                     std::vector<double> vals(v.size());
                     for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.05 * static_cast<double>(i) - 0.8;
                     std::shuffle(vals.begin(), vals.end(), gen);
                     for (std::size_t i = 0; i < vals.size(); ++i) v[i] = vals[i];
                     Param x("x", v);
                     const Tensor r = random_tensor({1, 2, 2, 2}, gen);
                     return grad_check([&](Tape& t) { return ops::weighted_sum(t, ops::max_pool2(t, t.input(x)), r); },
                                       {&x}, {1e-5, tol});
                   }});

  cases.push_back({"dropout_fixed_mask", 1e-4, [&gen](double tol) {
                     Param x("x", random_tensor({1, 2, 6, 6}, gen));
                     const Tensor r = random_tensor({1, 2, 6, 6}, gen);
                     return grad_check(
                         [&](Tape& t) {
                           return ops::weighted_sum(t, ops::dropout(t, t.input(x), 0.3, Mode::train, 1234), r);
                         },
                         {&x}, {1e-5, tol});
                   }});

  cases.push_back({"sigmoid", 1e-4, [&gen](double tol) {
                     Param x("x", random_tensor({1, 2, 4, 4}, gen));
                     const Tensor r = random_tensor({1, 2, 4, 4}, gen);
                     return grad_check([&](Tape& t) { return ops::weighted_sum(t, ops::sigmoid(t, t.input(x)), r); },
                                       {&x}, {1e-5, tol});
                   }});

  cases.push_back({"concat_channels", 1e-4, [&gen](double tol) {
                     Param a("a", random_tensor({2, 2, 3, 3}, gen));
                     Param b("b", random_tensor({2, 1, 3, 3}, gen));
                     const Tensor r = random_tensor({2, 3, 3, 3}, gen);
                     return grad_check(
                         [&](Tape& t) {
                           const Var parts[] = {t.input(a), t.input(b)};
                           return ops::weighted_sum(t, ops::concat_channels(t, parts), r);
                         },
                         {&a, &b}, {1e-5, tol});
                   }});

  cases.push_back({"bilinear_upsample", 1e-4, [&gen](double tol) {
                     Param x("x", random_tensor({1, 2, 3, 4}, gen));
                     const Tensor r = random_tensor({1, 2, 6, 8}, gen);
                     return grad_check(
                         [&](Tape& t) { return ops::weighted_sum(t, ops::bilinear_upsample(t, t.input(x)), r); }, {&x},
                         {1e-5, tol});
                   }});

  cases.push_back({"transpose_conv_upsample", 1e-4, [&gen](double tol) {
                     Param x("x", random_tensor({1, 2, 3, 3}, gen));
                     Param w("w", random_tensor({2, 3, 3, 3}, gen));
                     const Tensor r = random_tensor({1, 3, 6, 6}, gen);
                     return grad_check(
                         [&](Tape& t) {
                           return ops::weighted_sum(t, ops::transpose_conv_upsample(t, t.input(x), w, 2), r);
                         },
                         {&x, &w}, {1e-5, tol});
                   }});

  cases.push_back({"bce_loss", 1e-4, [&gen](double tol) {
                     Tensor p({1, 1, 4, 4}), target({1, 1, 4, 4});
                     std::uniform_real_distribution<double> u(0.05, 0.95);
                     for (std::size_t i = 0; i < p.size(); ++i) {
                       p[i] = u(gen);
                       target[i] = u(gen) > 0.5 ? 1.0 : 0.0;
                     }
                     Param x("pred", p);
                     return grad_check([&](Tape& t) { return ops::bce_loss(t, t.input(x), target); }, {&x},
                                       {1e-6, tol});
                   }});

  cases.push_back({"tgv_loss_term", 1e-3, [&gen](double tol) {
                     TGVSettings s;
                     s.gamma = 1.0;
                     s.lambda = 0.25;
                     s.p1_init = 0.8;
                     s.p2_init = 1.3;
                     TGVParams tgv(s);
                     Param a("map0", random_tensor({1, 2, 6, 6}, gen));
                     Param b("map1", random_tensor({2, 1, 4, 5}, gen));
                     return grad_check(
                         [&](Tape& t) {
                           const Var maps[] = {t.input(a), t.input(b)};
                           return ops::tgv_loss_term(t, maps, tgv);
                         },
                         {&a, &b, &tgv.p1_raw, &tgv.p2_raw}, {1e-6, tol});
                   }});

  for (UpsampleMode mode : {UpsampleMode::bilinear_tgv, UpsampleMode::transpose_conv}) {
    cases.push_back({"network_" + to_string(mode), 1e-3, [&gen, mode](double tol) {
                       UNetPPConfig cfg;
                       cfg.depth = 2;
                       cfg.base_channels = 2;
                       cfg.upsample_mode = mode;
                       cfg.tgv.gamma = 0.05;
                       cfg.seed = gen();
                       Network net(cfg);
                       Tensor img({2, 1, 8, 8}), mask({2, 1, 8, 8});
                       std::uniform_real_distribution<double> u(0.0, 1.0);
                       for (std::size_t i = 0; i < img.size(); ++i) {
                         img[i] = u(gen);
                         mask[i] = u(gen) > 0.6 ? 1.0 : 0.0;
                       }
                       return grad_check(
                           [&](Tape& t) {
                             const ForwardOutput out = net.forward(t, t.constant(img), Mode::train, 99);
                             return ops::add(t, ops::bce_loss(t, out.prob, mask), net.regularizer(t, out));
                           },
                           net.parameters(), {1e-6, tol});
                     }});
  }

  std::vector<BatteryResult> results;
  for (const Case& c : cases) {
    BatteryResult r;
    r.name = c.name;
    r.tolerance = opt.tolerance.value_or(c.tolerance);
    const auto start = std::chrono::steady_clock::now();
    const GradCheckReport rep = c.run(r.tolerance);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.max_rel_error = rep.max_rel_error;
    r.passed = rep.passed;
    for (const ParamCheck& p : rep.params) r.elements += p.elements;
    results.push_back(r);
  }
  return results;
}

}  // namespace tgvunet
