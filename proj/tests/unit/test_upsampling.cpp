#include <doctest.h>

#include <cmath>
#include <random>

#include "tgvunet/ops.hpp"
#include "tgvunet/upsampling.hpp"

using namespace tgvunet;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (double& v : t.data()) v = u(g);
  return t;
}

// Same discretisation as the library, written out for one row: with w2 = 0
// the energy of a 1 x n plane is sum H(|w_j - dx_j|) + sum_{j<n-2} H(|w_{j+1} - w_j|).
double row_energy(const std::vector<double>& dx, const std::vector<double>& w, double p1, double p2, double delta) {
  auto H = [delta](double t) { return t <= delta ? t * t / (2 * delta) : t - 0.5 * delta; };
  double e = 0;
  for (std::size_t j = 0; j < dx.size(); ++j) e += p1 * H(std::abs(w[j] - dx[j]));
  for (std::size_t j = 0; j + 1 < dx.size(); ++j) e += p2 * H(std::abs(w[j + 1] - w[j]));
  return e;
}

}  // namespace

TEST_CASE("solve_bilinear_weights") {
  const std::array<Point2, 4> unit{{{0, 0}, {0, 1}, {1, 0}, {1, 1}}};
  BilinearWeights b = solve_bilinear_weights(unit, {0, 1, 2, 3});
  CHECK(b.b0 == doctest::Approx(0).epsilon(1e-14));
  CHECK(b.b1 == doctest::Approx(2));
  CHECK(b.b2 == doctest::Approx(1));
  CHECK(std::abs(b.b3) < 1e-14);

  const std::array<Point2, 4> rect{{{2, -1}, {2, 3}, {5, -1}, {5, 3}}};
  BilinearWeights c = solve_bilinear_weights(rect, {4.5, 4.5, 4.5, 4.5});
  CHECK(c.b0 == doctest::Approx(4.5));
  CHECK(std::abs(c.b1) < 1e-12);
  CHECK(std::abs(c.b2) < 1e-12);
  CHECK(std::abs(c.b3) < 1e-12);

  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int k = 0; k < 20; ++k) {
    const double x0 = u(g), y0 = u(g), x1 = x0 + 0.5 + std::abs(u(g)), y1 = y0 + 0.5 + std::abs(u(g));
    const std::array<Point2, 4> pts{{{x0, y0}, {x0, y1}, {x1, y0}, {x1, y1}}};
    const std::array<double, 4> f{u(g), u(g), u(g), u(g)};
    BilinearWeights w = solve_bilinear_weights(pts, f);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(w(pts[i].x1, pts[i].x2) - f[i]) < 1e-10);
  }

  const std::array<Point2, 4> dup{{{0, 0}, {0, 0}, {1, 0}, {1, 1}}};
  CHECK_THROWS_AS(solve_bilinear_weights(dup, {0, 1, 2, 3}), Error);
}

TEST_CASE("bilinear_upsample examples") {
  Tensor c({1, 2, 3, 5}, 0.7);
  const Tensor up = bilinear_upsample(c);
  for (double v : up.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));

  const Tensor row = bilinear_upsample(Tensor({1, 1, 1, 2}, {0, 2}));
  REQUIRE(row.shape() == Shape{1, 1, 2, 4});
  const std::vector<double> want{0, 0.5, 1.5, 2.0};
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(row.at(0, 0, 0, j) == doctest::Approx(want[j]));
    CHECK(row.at(0, 0, 1, j) == doctest::Approx(want[j]));
  }

  CHECK_THROWS_AS(bilinear_upsample(Tensor({1, 1, 0, 0})), ShapeError);
}

TEST_CASE("bilinear_upsample reproduces bilinear functions away from the clamp") {
  auto g = [](double x1, double x2) { return 1 + 2 * x1 + 3 * x2 + x1 * x2; };
  Tensor in({1, 1, 4, 4});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) in.at(0, 0, r, c) = g(static_cast<double>(c), static_cast<double>(r));
  const Tensor out = bilinear_upsample(in);
  for (std::size_t r = 1; r + 1 < 8; ++r)
    for (std::size_t c = 1; c + 1 < 8; ++c) {
      const double x1 = (c + 0.5) / 2 - 0.5, x2 = (r + 0.5) / 2 - 0.5;
      CHECK(std::abs(out.at(0, 0, r, c) - g(x1, x2)) < 1e-10);
    }
}

TEST_CASE("bilinear_upsample is linear") {
  const Tensor x = random_tensor({2, 3, 4, 5}, 1), y = random_tensor({2, 3, 4, 5}, 2);
  Tensor z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = -1.5 * x[i] + 0.25 * y[i];
  const Tensor ux = bilinear_upsample(x), uy = bilinear_upsample(y), uz = bilinear_upsample(z);
  for (std::size_t i = 0; i < uz.size(); ++i) CHECK(std::abs(uz[i] - (-1.5 * ux[i] + 0.25 * uy[i])) < 1e-12);
}

TEST_CASE("transpose_conv_upsample overlap counts") {
  // k = 3, stride 2, all-ones kernel, constant 1 input: each output pixel
  // sums the kernel taps that land on it, 1, 2 or 4 of them.
  const Tensor ones_in({1, 1, 4, 4}, 1.0);
  const Tensor out = transpose_conv_upsample(ones_in, Tensor({1, 1, 3, 3}, 1.0));
  REQUIRE(out.shape() == Shape{1, 1, 8, 8});
  bool seen1 = false, seen2 = false, seen4 = false;
  for (std::size_t r = 1; r + 1 < 8; ++r)
    for (std::size_t c = 1; c + 1 < 8; ++c) {
      const double v = out.at(0, 0, r, c);
      CHECK((v == 1.0 || v == 2.0 || v == 4.0));
      seen1 |= v == 1.0;
      seen2 |= v == 2.0;
      seen4 |= v == 4.0;
    }
  CHECK((seen1 && seen2 && seen4));

  // Independent scatter oracle for the uncropped output, then the same crop.
  const Tensor x = random_tensor({1, 2, 3, 3}, 5), w = random_tensor({2, 1, 3, 3}, 6);
  const std::size_t raw = (3 - 1) * 2 + 3;
  std::vector<double> full(raw * raw, 0.0);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = 0; b < 3; ++b) full[(2 * i + a) * raw + 2 * j + b] += x.at(0, c, i, j) * w.at(c, 0, a, b);
  const Tensor y = transpose_conv_upsample(x, w);
  REQUIRE(y.shape() == Shape{1, 1, 6, 6});
  // 7 -> 6: one extra row/col to remove, symmetric crop takes it from the start
  const std::size_t off = raw - 6;
  double worst = 0;
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 6; ++c) worst = std::max(worst, std::abs(y.at(0, 0, r, c) - full[(r + off) * raw + c + off]));
  CHECK(worst < 1e-14);

  const Tensor even = transpose_conv_upsample(Tensor({1, 1, 3, 3}, 1.0), Tensor({1, 1, 2, 2}, 1.0));
  for (double v : even.data()) CHECK(v == 1.0);

  CHECK_THROWS_AS(transpose_conv_upsample(ones_in, Tensor({1, 1, 1, 1}, 1.0)), ShapeError);
}

TEST_CASE("checkerboard_score") {
  CHECK(checkerboard_score(Tensor({1, 1, 6, 6}, 0.3)) == 0.0);
  Tensor cb({1, 1, 4, 4});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) cb.at(0, 0, r, c) = (r + c) % 2 ? 1.0 : -1.0;
  CHECK(checkerboard_score(cb) > 0.0);
  // parity means {-1, 1, 1, -1}: population variance 1
  CHECK(checkerboard_score(cb) == doctest::Approx(1.0));
  CHECK(checkerboard_score(bilinear_upsample(Tensor({1, 1, 3, 3}, 2.0))) == 0.0);
  CHECK(checkerboard_score(transpose_conv_upsample(Tensor({1, 1, 3, 3}, 1.0), Tensor({1, 1, 3, 3}, 1.0))) > 0.0);
  CHECK_THROWS_AS(checkerboard_score(Tensor({1, 1, 3, 8})), ShapeError);
}

TEST_CASE("TGVParams positivity and initial values") {
  TGVParams p;
  CHECK(p.p1() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(p.p2() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(TGVParams::order == 2);
  for (double raw : {-700.0, -50.0, 0.0, 50.0, 700.0}) {
    p.p1_raw.value[0] = raw;
    CHECK(p.p1() > 0.0);
    CHECK(std::isfinite(p.p1()));
  }
  TGVSettings bad;
  bad.huber_delta = 0;
  CHECK_THROWS_AS(TGVParams{bad}, ConfigError);
}

TEST_CASE("tgv2_energy null space") {
  const TGVSettings s;
  std::vector<double> flat(6 * 7, 0.42);
  CHECK(tgv2_energy(flat, 6, 7, 1.0, 1.0, s).energy == 0.0);

  std::mt19937_64 g(9);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int k = 0; k < 10; ++k) {
    const double a = u(g), b = u(g), c = u(g);
    std::vector<double> v(8 * 9);
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t q = 0; q < 9; ++q) v[r * 9 + q] = c + a * q + b * r;
    CHECK(tgv2_energy(v, 8, 9, 1.0, 1.0, s).energy <= 1e-6);
  }
}

TEST_CASE("tgv2_energy translation invariance and positivity") {
  const TGVSettings s;
  const Tensor v = random_tensor({1, 1, 7, 6}, 10);
  const double base = tgv2_energy(v.values(), 7, 6, 0.8, 1.4, s).energy;
  CHECK(base > 0.0);
  std::vector<double> shifted = v.values();
  for (double& x : shifted) x += 3.25;
  CHECK(std::abs(tgv2_energy(shifted, 7, 6, 0.8, 1.4, s).energy - base) < 1e-10);
}

TEST_CASE("tgv2_energy is non-decreasing in p1 and p2") {
  const TGVSettings s;
  const Tensor v = random_tensor({1, 1, 8, 8}, 11);
  double prev = -1;
  for (double p1 = 0.1; p1 < 3; p1 += 0.2) {
    const double e = tgv2_energy(v.values(), 8, 8, p1, 1.0, s).energy;
    CHECK(e >= prev - 1e-6);
    prev = e;
  }
  prev = -1;
  for (double p2 = 0.1; p2 < 3; p2 += 0.2) {
    const double e = tgv2_energy(v.values(), 8, 8, 1.0, p2, s).energy;
    CHECK(e >= prev - 1e-6);
    prev = e;
  }
}

TEST_CASE("tgv2_energy on a 1D step matches a brute-force grid search") {
  // [0,0,1,1], p1 = p2 = 1; w2 = 0 is optimal for a single row, so the search
  // runs over w1 in [-2, 2]^3 at step 0.01.
  TGVSettings s;
  s.inner_steps = 200;
  const std::vector<double> v{0, 0, 1, 1};
  const std::vector<double> dx{0, 1, 0};
  double best = 1e300;
  std::vector<double> w(3);
  for (int a = -200; a <= 200; ++a)
    for (int b = -200; b <= 200; ++b)
      for (int c = -200; c <= 200; ++c) {
        w[0] = a * 0.01;
        w[1] = b * 0.01;
        w[2] = c * 0.01;
        best = std::min(best, row_energy(dx, w, 1.0, 1.0, s.huber_delta));
      }
  const double e = tgv2_energy(v, 1, 4, 1.0, 1.0, s).energy;
  CHECK(best > 0.5);
  CHECK(std::abs(e - best) <= 0.05 * best);
}

TEST_CASE("tgv2_energy rejects non-finite input") {
  std::vector<double> v(9, 0.0);
  v[4] = std::nan("");
  CHECK_THROWS_AS(tgv2_energy(v, 3, 3, 1, 1, TGVSettings{}), Error);
  v[4] = INFINITY;
  CHECK_THROWS_AS(tgv2_energy(v, 3, 3, 1, 1, TGVSettings{}), Error);
}

TEST_CASE("tgv2_energy_grad matches central differences") {
  TGVSettings s;
  const Tensor v = random_tensor({1, 1, 5, 6}, 12);
  const double p1 = 0.9, p2 = 1.3, h = 1e-6;
  const TGVEnergyGrad g = tgv2_energy_grad(v.values(), 5, 6, p1, p2, s);
  CHECK(g.energy == doctest::Approx(tgv2_energy(v.values(), 5, 6, p1, p2, s).energy).epsilon(1e-14));
  auto E = [&](const std::vector<double>& x, double a, double b) { return tgv2_energy(x, 5, 6, a, b, s).energy; };
  std::vector<double> x = v.values();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = E(x, p1, p2);
    x[i] = keep - h;
    const double dn = E(x, p1, p2);
    x[i] = keep;
    const double num = (up - dn) / (2 * h);
    CHECK(std::abs(num - g.dv[i]) <= 1e-5 * std::max({std::abs(num), std::abs(g.dv[i]), 1e-3}));
  }
  const double n1 = (E(x, p1 + h, p2) - E(x, p1 - h, p2)) / (2 * h);
  const double n2 = (E(x, p1, p2 + h) - E(x, p1, p2 - h)) / (2 * h);
  CHECK(g.dp1 == doctest::Approx(n1).epsilon(1e-5));
  CHECK(g.dp2 == doctest::Approx(n2).epsilon(1e-5));
}

TEST_CASE("tgv_loss_term examples") {
  TGVSettings off;
  off.gamma = 0;
  off.lambda = 0;
  TGVParams zero(off);
  const Tensor m = random_tensor({2, 3, 6, 6}, 13);
  std::vector<Tensor> maps{m};
  CHECK(tgv_loss_value(maps, zero) == 0.0);

  TGVSettings on;
  on.gamma = 2.0;
  TGVParams p(on);
  std::vector<Tensor> flat{Tensor({1, 2, 5, 5}, -0.3)};
  CHECK(tgv_loss_value(flat, p) == 0.0);

  // gamma * sum of per-plane energies + lambda * sum u^2
  on.lambda = 0.5;
  TGVParams q(on);
  double want = 0, sq = 0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      want += tgv2_energy(std::span<const double>(m.plane(n, c), 36), 6, 6, q.p1(), q.p2(), on).energy;
  for (double v : m.data()) sq += v * v;
  CHECK(tgv_loss_value(maps, q) == doctest::Approx(2.0 * want + 0.5 * sq).epsilon(1e-13));

  Tape t;
  std::vector<Var> vars{t.constant(m)};
  CHECK(t.value(ops::tgv_loss_term(t, vars, q)).item() == doctest::Approx(tgv_loss_value(maps, q)).epsilon(1e-13));
  std::vector<Var> none;
  CHECK_THROWS_AS(ops::tgv_loss_term(t, none, q), ShapeError);
}
