// Second-order TGV energy with an unrolled inner solver.
//
// Discretisation, for an h x w plane v:
//   grid G of gh x gw = max(h-1,1) x max(w-1,1) cells;
//   grad v on G: dx = v[i][j+1] - v[i][j], dy = v[i+1][j] - v[i][j]
//     (a component is identically 0 when its axis has a single sample);
//   eps(w) on G with forward differences, zero at the last row / column:
//     s11 = Dx w1, s22 = Dy w2, s12 = (Dy w1 + Dx w2) / 2,
//     |s|^2 = s11^2 + s22^2 + 2 s12^2.
// Each pixelwise norm is passed through the Huber function H.
//
// The inner solver takes `inner_steps` steps w <- w - eta G(w) with
// eta = inner_lr * delta / (p1 + 8 p2). The Hessian of the smoothed energy is
// bounded by (p1 + 8 p2) / delta (|eps|^2 <= 8 |w|^2), so for inner_lr <= 1
// every step is non-expansive and the unrolled map differentiates stably.

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tgvunet/upsampling.hpp"

namespace tgvunet {

void TGVSettings::validate() const {
  if (!(gamma >= 0)) throw ConfigError("tgv.gamma must be >= 0");
  if (!(lambda >= 0)) throw ConfigError("tgv.lambda must be >= 0");
  if (!(p1_init > 0) || !(p2_init > 0)) throw ConfigError("tgv.p1_init and tgv.p2_init must be > 0");
  if (inner_steps < 1) throw ConfigError("tgv.inner_steps must be >= 1");
  if (!(inner_lr > 0) || inner_lr > 1) throw ConfigError("tgv.inner_lr must be in (0, 1]");
  if (!(huber_delta > 0)) throw ConfigError("tgv.huber_delta must be > 0");
}

double softplus(double x) { return x > 30 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double softplus_inverse(double y) {
  if (!(y > 0)) throw std::domain_error("softplus_inverse: argument must be > 0");
  return y > 30 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

TGVParams::TGVParams(TGVSettings s, const std::string& prefix)
    : p1_raw(prefix + ".p1_raw", Tensor::scalar(softplus_inverse(s.p1_init))),
      p2_raw(prefix + ".p2_raw", Tensor::scalar(softplus_inverse(s.p2_init))),
      settings(s) {
  settings.validate();
}

namespace {

using Field = std::vector<double>;

class TgvGrid {
 public:
  TgvGrid(std::size_t h, std::size_t w, double p1, double p2, const TGVSettings& s)
      : h_(h), w_(w), gh_(h > 1 ? h - 1 : 1), gw_(w > 1 ? w - 1 : 1), p1_(p1), p2_(p2), delta_(s.huber_delta) {
    eta_ = s.inner_lr * delta_ / (p1 + 8.0 * p2);
  }

  std::size_t cells() const { return gh_ * gw_; }
  double eta() const { return eta_; }
  double p1() const { return p1_; }
  double p2() const { return p2_; }

  void grad_v(std::span<const double> v, Field& dx, Field& dy) const {
    dx.assign(cells(), 0.0);
    dy.assign(cells(), 0.0);
    for (std::size_t i = 0; i < gh_; ++i)
      for (std::size_t j = 0; j < gw_; ++j) {
        if (w_ > 1) dx[i * gw_ + j] = v[i * w_ + j + 1] - v[i * w_ + j];
        if (h_ > 1) dy[i * gw_ + j] = v[(i + 1) * w_ + j] - v[i * w_ + j];
      }
  }

  // out += grad^T (ax, ay)
  void grad_v_adjoint(const Field& ax, const Field& ay, double scale, std::span<double> out) const {
    for (std::size_t i = 0; i < gh_; ++i)
      for (std::size_t j = 0; j < gw_; ++j) {
        const std::size_t g = i * gw_ + j;
        if (w_ > 1) {
          out[i * w_ + j + 1] += scale * ax[g];
          out[i * w_ + j] -= scale * ax[g];
        }
        if (h_ > 1) {
          out[(i + 1) * w_ + j] += scale * ay[g];
          out[i * w_ + j] -= scale * ay[g];
        }
      }
  }

  double dx_at(const Field& a, std::size_t i, std::size_t j) const {
    return j + 1 < gw_ ? a[i * gw_ + j + 1] - a[i * gw_ + j] : 0.0;
  }
  double dy_at(const Field& a, std::size_t i, std::size_t j) const {
    return i + 1 < gh_ ? a[(i + 1) * gw_ + j] - a[i * gw_ + j] : 0.0;
  }

  void sym_grad(const Field& w1, const Field& w2, Field& s11, Field& s22, Field& s12) const {
    s11.assign(cells(), 0.0);
    s22.assign(cells(), 0.0);
    s12.assign(cells(), 0.0);
    for (std::size_t i = 0; i < gh_; ++i)
      for (std::size_t j = 0; j < gw_; ++j) {
        const std::size_t g = i * gw_ + j;
        s11[g] = dx_at(w1, i, j);
        s22[g] = dy_at(w2, i, j);
        s12[g] = 0.5 * (dy_at(w1, i, j) + dx_at(w2, i, j));
      }
  }

  // (g1, g2) += eps^T (a11, a22, a12), where a12 multiplies s12.
  void sym_grad_adjoint(const Field& a11, const Field& a22, const Field& a12, Field& g1, Field& g2) const {
    for (std::size_t i = 0; i < gh_; ++i)
      for (std::size_t j = 0; j < gw_; ++j) {
        const std::size_t g = i * gw_ + j;
        if (j + 1 < gw_) {
          g1[g + 1] += a11[g];
          g1[g] -= a11[g];
          g2[g + 1] += 0.5 * a12[g];
          g2[g] -= 0.5 * a12[g];
        }
        if (i + 1 < gh_) {
          g2[g + gw_] += a22[g];
          g2[g] -= a22[g];
          g1[g + gw_] += 0.5 * a12[g];
          g1[g] -= 0.5 * a12[g];
        }
      }
  }

  double huber(double t) const { return t <= delta_ ? t * t / (2 * delta_) : t - 0.5 * delta_; }
  // H'(t) / t
  double huber_ratio(double t) const { return 1.0 / std::max(t, delta_); }

  struct Terms {
    double first = 0;   // sum H(|r|)
    double second = 0;  // sum H(|s|)
  };

  // Energy parts at w; also fills the residual r = w - grad v and s = eps(w).
  Terms terms(const Field& dx, const Field& dy, const Field& w1, const Field& w2) {
    Terms t;
    sym_grad(w1, w2, s11_, s22_, s12_);
    for (std::size_t g = 0; g < cells(); ++g) {
      const double r1 = w1[g] - dx[g], r2 = w2[g] - dy[g];
      t.first += huber(std::sqrt(r1 * r1 + r2 * r2));
      t.second += huber(std::sqrt(s11_[g] * s11_[g] + s22_[g] * s22_[g] + 2 * s12_[g] * s12_[g]));
    }
    return t;
  }

  // Split gradient of the energy w.r.t. w: first-order part (without p1) in
  // (f1, f2), second-order part (without p2) in (q1, q2).
  void grad_w_parts(const Field& dx, const Field& dy, const Field& w1, const Field& w2, Field& f1, Field& f2,
                    Field& q1, Field& q2) {
    const std::size_t n = cells();
    f1.assign(n, 0.0);
    f2.assign(n, 0.0);
    q1.assign(n, 0.0);
    q2.assign(n, 0.0);
    sym_grad(w1, w2, s11_, s22_, s12_);
    a11_.assign(n, 0.0);
    a22_.assign(n, 0.0);
    a12_.assign(n, 0.0);
    for (std::size_t g = 0; g < n; ++g) {
      const double r1 = w1[g] - dx[g], r2 = w2[g] - dy[g];
      const double fr = huber_ratio(std::sqrt(r1 * r1 + r2 * r2));
      f1[g] = fr * r1;
      f2[g] = fr * r2;
      const double fs = huber_ratio(std::sqrt(s11_[g] * s11_[g] + s22_[g] * s22_[g] + 2 * s12_[g] * s12_[g]));
      a11_[g] = fs * s11_[g];
      a22_[g] = fs * s22_[g];
      a12_[g] = fs * 2 * s12_[g];
    }
    sym_grad_adjoint(a11_, a22_, a12_, q1, q2);
  }

  // Jacobian of x -> x H'(|x|)/|x| applied to u, pixelwise on 2-vectors.
  void first_order_jvp(const Field& dx, const Field& dy, const Field& w1, const Field& w2, const Field& u1,
                       const Field& u2, Field& o1, Field& o2) const {
    o1.assign(cells(), 0.0);
    o2.assign(cells(), 0.0);
    for (std::size_t g = 0; g < cells(); ++g) {
      const double r1 = w1[g] - dx[g], r2 = w2[g] - dy[g];
      const double t = std::sqrt(r1 * r1 + r2 * r2);
      if (t <= delta_) {
        o1[g] = u1[g] / delta_;
        o2[g] = u2[g] / delta_;
      } else {
        const double proj = (r1 * u1[g] + r2 * u2[g]) / (t * t);
        o1[g] = (u1[g] - r1 * proj) / t;
        o2[g] = (u2[g] - r2 * proj) / t;
      }
    }
  }

  // eps^T J_s eps u, with J_s the Jacobian of s -> M s H'(|s|_M)/|s|_M.
  void second_order_hvp(const Field& w1, const Field& w2, const Field& u1, const Field& u2, Field& o1,
                        Field& o2) {
    const std::size_t n = cells();
    Field e11, e22, e12;
    sym_grad(w1, w2, s11_, s22_, s12_);
    sym_grad(u1, u2, e11, e22, e12);
    a11_.assign(n, 0.0);
    a22_.assign(n, 0.0);
    a12_.assign(n, 0.0);
    for (std::size_t g = 0; g < n; ++g) {
      const double m11 = e11[g], m22 = e22[g], m12 = 2 * e12[g];  // M q
      const double t = std::sqrt(s11_[g] * s11_[g] + s22_[g] * s22_[g] + 2 * s12_[g] * s12_[g]);
      if (t <= delta_) {
        a11_[g] = m11 / delta_;
        a22_[g] = m22 / delta_;
        a12_[g] = m12 / delta_;
      } else {
        const double sMq = s11_[g] * m11 + s22_[g] * m22 + s12_[g] * m12;
        const double k = sMq / (t * t * t);
        a11_[g] = m11 / t - s11_[g] * k;
        a22_[g] = m22 / t - s22_[g] * k;
        a12_[g] = m12 / t - 2 * s12_[g] * k;
      }
    }
    o1.assign(n, 0.0);
    o2.assign(n, 0.0);
    sym_grad_adjoint(a11_, a22_, a12_, o1, o2);
  }

 private:
  std::size_t h_, w_, gh_, gw_;
  double p1_, p2_, delta_, eta_;
  Field s11_, s22_, s12_, a11_, a22_, a12_;
};

double dot(const Field& a, const Field& b) { return std::inner_product(a.begin(), a.end(), b.begin(), 0.0); }

void check_input(std::span<const double> v, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || v.size() != h * w) throw ShapeError("tgv2_energy: plane size does not match h*w");
  if (h * w < 2) throw ShapeError("tgv2_energy: plane needs at least two pixels");
  for (double x : v)
    if (!std::isfinite(x)) throw Error("tgv2_energy: non-finite input value");
}

}  // namespace

TGVEnergy tgv2_energy(std::span<const double> v, std::size_t h, std::size_t w, double p1, double p2,
                      const TGVSettings& s) {
  check_input(v, h, w);
  TgvGrid grid(h, w, p1, p2, s);
  Field dx, dy, f1, f2, q1, q2;
  grid.grad_v(v, dx, dy);
  TGVEnergy out{0.0, dx, dy};
  const double eta = grid.eta();
  for (int k = 0; k < s.inner_steps; ++k) {
    grid.grad_w_parts(dx, dy, out.w1, out.w2, f1, f2, q1, q2);
    for (std::size_t g = 0; g < grid.cells(); ++g) {
      out.w1[g] -= eta * (p1 * f1[g] + p2 * q1[g]);
      out.w2[g] -= eta * (p1 * f2[g] + p2 * q2[g]);
    }
  }
  const auto t = grid.terms(dx, dy, out.w1, out.w2);
  out.energy = p1 * t.first + p2 * t.second;
  return out;
}

TGVEnergy tgv2_energy(const Tensor& v, const TGVParams& params) {
  const Shape& s = v.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("tgv2_energy: expects a single (1,1,h,w) plane, got " + s.str());
  return tgv2_energy(v.data(), s.h, s.w, params.p1(), params.p2(), params.settings);
}

TGVEnergyGrad tgv2_energy_grad(std::span<const double> v, std::size_t h, std::size_t w, double p1, double p2,
                               const TGVSettings& s) {
  check_input(v, h, w);
  TgvGrid grid(h, w, p1, p2, s);
  const std::size_t n = grid.cells();
  const int K = s.inner_steps;
  const double eta = grid.eta();
  const double deta_dp1 = -eta / (p1 + 8 * p2);
  const double deta_dp2 = -8 * eta / (p1 + 8 * p2);

  Field dx, dy, f1, f2, q1, q2;
  grid.grad_v(v, dx, dy);

  // Forward, keeping every iterate.
  std::vector<Field> w1s(static_cast<std::size_t>(K) + 1), w2s(static_cast<std::size_t>(K) + 1);
  w1s[0] = dx;
  w2s[0] = dy;
  for (int k = 0; k < K; ++k) {
    grid.grad_w_parts(dx, dy, w1s[k], w2s[k], f1, f2, q1, q2);
    w1s[k + 1] = w1s[k];
    w2s[k + 1] = w2s[k];
    for (std::size_t g = 0; g < n; ++g) {
      w1s[k + 1][g] -= eta * (p1 * f1[g] + p2 * q1[g]);
      w2s[k + 1][g] -= eta * (p1 * f2[g] + p2 * q2[g]);
    }
  }

  TGVEnergyGrad out;
  out.dv.assign(v.size(), 0.0);
  const Field& wk1 = w1s[K];
  const Field& wk2 = w2s[K];
  const auto t = grid.terms(dx, dy, wk1, wk2);
  out.energy = p1 * t.first + p2 * t.second;
  out.dp1 = t.first;
  out.dp2 = t.second;

  // Adjoint of w_K and the direct v path: E depends on v via r = w - grad v.
  grid.grad_w_parts(dx, dy, wk1, wk2, f1, f2, q1, q2);
  Field a1(n), a2(n);
  for (std::size_t g = 0; g < n; ++g) {
    a1[g] = p1 * f1[g] + p2 * q1[g];
    a2[g] = p1 * f2[g] + p2 * q2[g];
  }
  grid.grad_v_adjoint(f1, f2, -p1, out.dv);

  Field j1, j2, h1, h2;
  for (int k = K - 1; k >= 0; --k) {
    const Field& x1 = w1s[k];
    const Field& x2 = w2s[k];
    grid.grad_w_parts(dx, dy, x1, x2, f1, f2, q1, q2);
    // w_{k+1} = w_k - eta(p) (p1 f + p2 q)
    const double af = dot(a1, f1) + dot(a2, f2);
    const double aq = dot(a1, q1) + dot(a2, q2);
    const double ag = p1 * af + p2 * aq;
    out.dp1 += -deta_dp1 * ag - eta * af;
    out.dp2 += -deta_dp2 * ag - eta * aq;

    // v path through r = w - grad v inside f.
    grid.first_order_jvp(dx, dy, x1, x2, a1, a2, j1, j2);
    grid.grad_v_adjoint(j1, j2, eta * p1, out.dv);

    // a <- (I - eta H) a
    grid.second_order_hvp(x1, x2, a1, a2, h1, h2);
    for (std::size_t g = 0; g < n; ++g) {
      a1[g] -= eta * (p1 * j1[g] + p2 * h1[g]);
      a2[g] -= eta * (p1 * j2[g] + p2 * h2[g]);
    }
  }
  // w_0 = grad v
  grid.grad_v_adjoint(a1, a2, 1.0, out.dv);
  return out;
}

double tgv_loss_value(std::span<const Tensor> maps, const TGVParams& params) {
  const auto& s = params.settings;
  if (s.gamma == 0.0 && s.lambda == 0.0) return 0.0;
  double energy = 0, fidelity = 0;
  for (const Tensor& m : maps) {
    const Shape& sh = m.shape();
    if (s.gamma != 0.0) {
      for (std::size_t n = 0; n < sh.n; ++n)
        for (std::size_t c = 0; c < sh.c; ++c)
          energy += tgv2_energy({m.plane(n, c), sh.plane()}, sh.h, sh.w, params.p1(), params.p2(), s).energy;
    }
    if (s.lambda != 0.0)
      for (double u : m.data()) fidelity += u * u;
  }
  return s.gamma * energy + s.lambda * fidelity;
}

}  // namespace tgvunet
