#include "tgvunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "tgvunet/kernels.hpp"

namespace tgvunet {

BatchNorm::BatchNorm(const std::string& name, std::size_t channels)
    : scale(name + ".scale", Tensor({1, channels, 1, 1}, 1.0)),
      shift(name + ".shift", Tensor({1, channels, 1, 1}, 0.0)),
      running_mean(channels, 0.0),
      running_var(channels, 1.0) {}

namespace ops {

namespace {

void accumulate(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor grad_tensor(const Shape& s, std::span<const double> g) {
  return Tensor(s, std::vector<double>(g.begin(), g.end()));
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var conv2d(Tape& t, Var x, Param& weights, Param& bias, int padding) {
  Tensor out = kernels::conv2d_forward(t.value(x), weights.value, bias.value, padding);
  Param* w = &weights;
  Param* b = &bias;
  return t.record(std::move(out), [x, w, b, padding](Tape& tp, std::span<const double> g) {
    const Tensor& xv = tp.value(x);
    const Shape os = kernels::conv2d_output_shape(xv.shape(), w->value.shape(), b->value.size(), padding);
    auto grads = kernels::conv2d_backward(xv, w->value, grad_tensor(os, g), padding);
    accumulate(w->grad.data(), grads.weight.data());
    accumulate(b->grad.data(), grads.bias.data());
    if (tp.requires_grad(x)) accumulate(tp.grad(x), grads.input.data());
  });
}

Var conv2d(Tape& t, Var x, Param& weights, int padding) {
  const Tensor zero({weights.value.shape().n, 1, 1, 1});
  Tensor out = kernels::conv2d_forward(t.value(x), weights.value, zero, padding);
  Param* w = &weights;
  return t.record(std::move(out), [x, w, padding](Tape& tp, std::span<const double> g) {
    const Tensor& xv = tp.value(x);
    const std::size_t c_out = w->value.shape().n;
    const Shape os = kernels::conv2d_output_shape(xv.shape(), w->value.shape(), c_out, padding);
    auto grads = kernels::conv2d_backward(xv, w->value, grad_tensor(os, g), padding);
    accumulate(w->grad.data(), grads.weight.data());
    if (tp.requires_grad(x)) accumulate(tp.grad(x), grads.input.data());
  });
}

Var relu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0 ? xv[i] : 0.0;
  return t.record(
      std::move(out),
      [x](Tape& tp, std::span<const double> g) {
        const Tensor& xv = tp.value(x);
        auto gx = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xv[i] > 0) gx[i] += g[i];
      },
      t.requires_grad(x));
}

Var sigmoid(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = logistic(xv[i]);
  const Var self{t.size()};
  return t.record(
      std::move(out),
      [x, self](Tape& tp, std::span<const double> g) {
        const Tensor& a = tp.value(self);
        auto gx = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * a[i] * (1 - a[i]);
      },
      t.requires_grad(x));
}

Var batch_norm(Tape& t, Var x, BatchNorm& bn, Mode mode) {
  const Tensor& xv = t.value(x);
  const Shape s = xv.shape();
  if (s.c != bn.channels()) {
    throw ShapeError("batch_norm: input channels (c=" + std::to_string(s.c) + ") do not match " +
                     std::to_string(bn.channels()));
  }
  BatchNorm* state = &bn;
  if (mode == Mode::train) {
    auto stats = std::make_shared<kernels::BatchNormStats>(
        kernels::batch_norm_train_forward(xv, bn.scale.value.values(), bn.shift.value.values(), bn.eps));
    const double count = static_cast<double>(s.n * s.plane());
    const double unbias = count > 1 ? count / (count - 1) : 1.0;
    for (std::size_t c = 0; c < s.c; ++c) {
      bn.running_mean[c] = (1 - bn.momentum) * bn.running_mean[c] + bn.momentum * stats->mean[c];
      bn.running_var[c] = (1 - bn.momentum) * bn.running_var[c] + bn.momentum * stats->var[c] * unbias;
    }
    bn.initialized = true;
    Tensor out = stats->output;
    return t.record(std::move(out), [x, state, stats](Tape& tp, std::span<const double> g) {
      auto grads = kernels::batch_norm_train_backward(*stats, state->scale.value.values(),
                                                      grad_tensor(stats->output.shape(), g));
      accumulate(state->scale.grad.data(), grads.scale);
      accumulate(state->shift.grad.data(), grads.shift);
      if (tp.requires_grad(x)) accumulate(tp.grad(x), grads.input.data());
    });
  }

  if (!bn.initialized) throw Error("batch_norm: eval mode before any train-mode call (running statistics unset)");
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double inv = 1.0 / std::sqrt(bn.running_var[c] + bn.eps);
      const double* src = xv.plane(n, c);
      double* dst = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i)
        dst[i] = bn.scale.value[c] * (src[i] - bn.running_mean[c]) * inv + bn.shift.value[c];
    }
  return t.record(std::move(out), [x, state, s](Tape& tp, std::span<const double> g) {
    const Tensor& xv = tp.value(x);
    const bool need_x = tp.requires_grad(x);
    for (std::size_t c = 0; c < s.c; ++c) {
      const double inv = 1.0 / std::sqrt(state->running_var[c] + state->eps);
      double gs = 0, gb = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const std::size_t base = (n * s.c + c) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) {
          gs += g[base + i] * (xv[base + i] - state->running_mean[c]) * inv;
          gb += g[base + i];
        }
        if (need_x) {
          auto gx = tp.grad(x);
          for (std::size_t i = 0; i < s.plane(); ++i) gx[base + i] += g[base + i] * state->scale.value[c] * inv;
        }
      }
      state->scale.grad[c] += gs;
      state->shift.grad[c] += gb;
    }
  });
}

Var max_pool2(Tape& t, Var x) {
  auto r = kernels::max_pool2_forward(t.value(x));
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(std::move(r.argmax));
  return t.record(
      std::move(r.output),
      [x, argmax](Tape& tp, std::span<const double> g) {
        const Shape in = tp.value(x).shape();
        const Tensor gi =
            kernels::max_pool2_backward(grad_tensor({in.n, in.c, in.h / 2, in.w / 2}, g), *argmax, in);
        accumulate(tp.grad(x), gi.data());
      },
      t.requires_grad(x));
}

Var dropout(Tape& t, Var x, double rate, Mode mode, std::uint64_t seed) {
  if (rate < 0 || rate >= 1) throw ConfigError("dropout: rate must be in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) return x;
  const Tensor& xv = t.value(x);
  auto mask = std::make_shared<std::vector<double>>(xv.size());
  std::mt19937_64 gen(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const double survivor = 1.0 / (1.0 - rate);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*mask)[i] = keep(gen) ? survivor : 0.0;
    out[i] = xv[i] * (*mask)[i];
  }
  return t.record(
      std::move(out),
      [x, mask](Tape& tp, std::span<const double> g) {
        auto gx = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
      },
      t.requires_grad(x));
}

Var concat_channels(Tape& t, std::span<const Var> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  if (xs.size() == 1) return xs[0];
  const Shape first = t.value(xs[0]).shape();
  std::size_t channels = 0;
  bool any_grad = false;
  for (const Var& v : xs) {
    const Shape s = t.value(v).shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: input " + s.str() + " does not match " + first.str() +
                       " in (n, h, w)");
    }
    channels += s.c;
    any_grad = any_grad || t.requires_grad(v);
  }
  Tensor out({first.n, channels, first.h, first.w});
  std::vector<Var> inputs(xs.begin(), xs.end());
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t c0 = 0;
    for (const Var& v : inputs) {
      const Tensor& src = t.value(v);
      for (std::size_t c = 0; c < src.shape().c; ++c)
        std::copy_n(src.plane(n, c), first.plane(), out.plane(n, c0 + c));
      c0 += src.shape().c;
    }
  }
  return t.record(
      std::move(out),
      [inputs, first, channels](Tape& tp, std::span<const double> g) {
        const std::size_t plane = first.plane();
        for (std::size_t n = 0; n < first.n; ++n) {
          std::size_t c0 = 0;
          for (const Var& v : inputs) {
            const std::size_t cs = tp.value(v).shape().c;
            if (tp.requires_grad(v)) {
              auto gv = tp.grad(v);
              for (std::size_t c = 0; c < cs; ++c) {
                const double* src = g.data() + (n * channels + c0 + c) * plane;
                double* dst = gv.data() + (n * cs + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
              }
            }
            c0 += cs;
          }
        }
      },
      any_grad);
}

Var bilinear_upsample(Tape& t, Var x) {
  Tensor out = tgvunet::bilinear_upsample(t.value(x));
  return t.record(
      std::move(out),
      [x](Tape& tp, std::span<const double> g) {
        const Shape in = tp.value(x).shape();
        const Tensor gi = kernels::bilinear_upsample2x_adjoint(grad_tensor({in.n, in.c, 2 * in.h, 2 * in.w}, g), in);
        accumulate(tp.grad(x), gi.data());
      },
      t.requires_grad(x));
}

Var transpose_conv_upsample(Tape& t, Var x, Param& weights, int stride) {
  Tensor out = kernels::conv_transpose2d_forward(t.value(x), weights.value, stride);
  Param* w = &weights;
  return t.record(std::move(out), [x, w, stride](Tape& tp, std::span<const double> g) {
    const Tensor& xv = tp.value(x);
    const Shape os = kernels::conv_transpose2d_output_shape(xv.shape(), w->value.shape(), stride);
    auto grads = kernels::conv_transpose2d_backward(xv, w->value, grad_tensor(os, g), stride);
    accumulate(w->grad.data(), grads.weight.data());
    if (tp.requires_grad(x)) accumulate(tp.grad(x), grads.input.data());
  });
}

Var sum(Tape& t, Var x) {
  double acc = 0;
  for (double v : t.value(x).data()) acc += v;
  return t.record(
      Tensor::scalar(acc),
      [x](Tape& tp, std::span<const double> g) {
        for (double& v : tp.grad(x)) v += g[0];
      },
      t.requires_grad(x));
}

Var weighted_sum(Tape& t, Var x, const Tensor& weights) {
  const Tensor& xv = t.value(x);
  require_same_shape(xv.shape(), weights.shape(), "weighted_sum");
  double acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += weights[i] * xv[i];
  return t.record(
      Tensor::scalar(acc),
      [x, weights](Tape& tp, std::span<const double> g) {
        auto gx = tp.grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * weights[i];
      },
      t.requires_grad(x));
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av.shape(), bv.shape(), "add");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return t.record(
      std::move(out),
      [a, b](Tape& tp, std::span<const double> g) {
        if (tp.requires_grad(a)) accumulate(tp.grad(a), g);
        if (tp.requires_grad(b)) accumulate(tp.grad(b), g);
      },
      t.requires_grad(a) || t.requires_grad(b));
}

Var scale(Tape& t, Var x, double k) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = k * xv[i];
  return t.record(
      std::move(out),
      [x, k](Tape& tp, std::span<const double> g) {
        auto gx = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += k * g[i];
      },
      t.requires_grad(x));
}

Var half_squared_error(Tape& t, Var x, const Tensor& target) {
  const Tensor& xv = t.value(x);
  require_same_shape(xv.shape(), target.shape(), "half_squared_error");
  double acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += 0.5 * (xv[i] - target[i]) * (xv[i] - target[i]);
  return t.record(
      Tensor::scalar(acc),
      [x, target](Tape& tp, std::span<const double> g) {
        const Tensor& xv = tp.value(x);
        auto gx = tp.grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * (xv[i] - target[i]);
      },
      t.requires_grad(x));
}

Var bce_loss(Tape& t, Var pred, const Tensor& target) {
  constexpr double lo = 1e-7, hi = 1 - 1e-7;
  const Tensor& p = t.value(pred);
  require_same_shape(p.shape(), target.shape(), "bce_loss");
  const double inv_n = 1.0 / static_cast<double>(p.size());
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], lo, hi);
    acc -= target[i] * std::log(q) + (1 - target[i]) * std::log(1 - q);
  }
  return t.record(
      Tensor::scalar(acc * inv_n),
      [pred, target, inv_n](Tape& tp, std::span<const double> g) {
        const Tensor& p = tp.value(pred);
        auto gp = tp.grad(pred);
        for (std::size_t i = 0; i < gp.size(); ++i) {
          if (p[i] < lo || p[i] > hi) continue;
          gp[i] += g[0] * inv_n * (-target[i] / p[i] + (1 - target[i]) / (1 - p[i]));
        }
      },
      t.requires_grad(pred));
}

namespace {

struct PlaneJob {
  std::size_t map;
  std::size_t n;
  std::size_t c;
};

}  // namespace

Var tgv_loss_term(Tape& t, std::span<const Var> maps, TGVParams& params) {
  if (maps.empty()) throw ShapeError("tgv_loss_term: no feature maps");
  const TGVSettings s = params.settings;
  std::vector<Var> inputs(maps.begin(), maps.end());
  std::vector<PlaneJob> jobs;
  for (std::size_t m = 0; m < inputs.size(); ++m) {
    const Shape sh = t.value(inputs[m]).shape();
    for (std::size_t n = 0; n < sh.n; ++n)
      for (std::size_t c = 0; c < sh.c; ++c) jobs.push_back({m, n, c});
  }

  const double p1 = params.p1(), p2 = params.p2();
  double energy = 0, fidelity = 0;
  if (s.gamma != 0.0) {
    std::vector<double> per_plane(jobs.size());
    const long count = static_cast<long>(jobs.size());
#pragma omp parallel for schedule(dynamic)
    for (long j = 0; j < count; ++j) {
      const PlaneJob& job = jobs[static_cast<std::size_t>(j)];
      const Tensor& m = t.value(inputs[job.map]);
      per_plane[static_cast<std::size_t>(j)] =
          tgv2_energy({m.plane(job.n, job.c), m.shape().plane()}, m.shape().h, m.shape().w, p1, p2, s).energy;
    }
    for (double e : per_plane) energy += e;
  }
  if (s.lambda != 0.0)
    for (const Var& v : inputs)
      for (double u : t.value(v).data()) fidelity += u * u;

  TGVParams* target = &params;
  return t.record(Tensor::scalar(s.gamma * energy + s.lambda * fidelity),
                  [inputs, jobs, target, s, p1, p2](Tape& tp, std::span<const double> g) {
                    const double up = g[0];
                    if (s.gamma != 0.0) {
                      // Allocate gradient buffers before entering the parallel region.
                      std::vector<std::span<double>> gmaps;
                      for (const Var& v : inputs) gmaps.push_back(tp.grad(v));
                      std::vector<double> dp1(jobs.size()), dp2(jobs.size());
                      const long count = static_cast<long>(jobs.size());
#pragma omp parallel for schedule(dynamic)
                      for (long j = 0; j < count; ++j) {
                        const PlaneJob& job = jobs[static_cast<std::size_t>(j)];
                        const Tensor& m = tp.value(inputs[job.map]);
                        const Shape& sh = m.shape();
                        auto r = tgv2_energy_grad({m.plane(job.n, job.c), sh.plane()}, sh.h, sh.w, p1, p2, s);
                        double* dst = gmaps[job.map].data() + (job.n * sh.c + job.c) * sh.plane();
                        for (std::size_t i = 0; i < sh.plane(); ++i) dst[i] += up * s.gamma * r.dv[i];
                        dp1[static_cast<std::size_t>(j)] = r.dp1;
                        dp2[static_cast<std::size_t>(j)] = r.dp2;
                      }
                      double sp1 = 0, sp2 = 0;
                      for (std::size_t j = 0; j < jobs.size(); ++j) {
                        sp1 += dp1[j];
                        sp2 += dp2[j];
                      }
                      // d softplus(x) / dx = logistic(x)
                      target->p1_raw.grad[0] += up * s.gamma * sp1 * logistic(target->p1_raw.value[0]);
                      target->p2_raw.grad[0] += up * s.gamma * sp2 * logistic(target->p2_raw.value[0]);
                    }
                    if (s.lambda != 0.0) {
                      for (const Var& v : inputs) {
                        const Tensor& u = tp.value(v);
                        auto gu = tp.grad(v);
                        for (std::size_t i = 0; i < u.size(); ++i) gu[i] += up * 2 * s.lambda * u[i];
                      }
                    }
                  });
}

}  // namespace ops
}  // namespace tgvunet
