#include <doctest.h>

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "tgvunet/kernels.hpp"

using namespace tgvunet;
namespace K = tgvunet::kernels;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor t(s);
  for (double& v : t.data()) v = u(g);
  return t;
}

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::vector<double> v(n);
  for (double& x : v) x = u(g);
  return v;
}

void close(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
  CHECK(worst < 1e-13);
}

void close(const std::vector<double>& a, const std::vector<double>& b) {
  close(Tensor({1, 1, 1, a.size()}, a), Tensor({1, 1, 1, b.size()}, b));
}

// Runs every parallel kernel once and concatenates all outputs.
std::vector<double> parallel_outputs(const Shape& s, std::uint64_t seed) {
  std::vector<double> all;
  auto put = [&](const Tensor& t) { all.insert(all.end(), t.data().begin(), t.data().end()); };
  const Tensor x = random_tensor(s, seed);
  const Tensor w = random_tensor({4, s.c, 3, 3}, seed + 1), b = random_tensor({1, 4, 1, 1}, seed + 2);
  const Tensor y = K::parallel::conv2d_forward(x, w, b, 1);
  put(y);
  const auto g = K::parallel::conv2d_backward(x, w, random_tensor(y.shape(), seed + 3), 1);
  put(g.input);
  put(g.weight);
  put(g.bias);
  const Tensor tw = random_tensor({s.c, 2, 3, 3}, seed + 4);
  const Tensor ty = K::parallel::conv_transpose2d_forward(x, tw, 2);
  put(ty);
  const auto tg = K::parallel::conv_transpose2d_backward(x, tw, random_tensor(ty.shape(), seed + 5), 2);
  put(tg.input);
  put(tg.weight);
  put(K::parallel::bilinear_upsample2x(x));
  const auto bn = K::parallel::batch_norm_train_forward(x, random_vec(s.c, seed + 6), random_vec(s.c, seed + 7), 1e-5);
  put(bn.output);
  put(K::parallel::batch_norm_train_backward(bn, random_vec(s.c, seed + 6), random_tensor(s, seed + 8)).input);
  return all;
}

}  // namespace

TEST_CASE("parallel kernels agree with the serial reference") {
  const Shape shapes[] = {{1, 1, 4, 4}, {2, 3, 6, 8}, {3, 5, 10, 6}};
  std::uint64_t seed = 1;
  for (const Shape& s : shapes) {
    CAPTURE(s.str());
    const Tensor x = random_tensor(s, seed++);
    for (int pad : {0, 1}) {
      const Tensor w = random_tensor({4, s.c, 3, 3}, seed++);
      const Tensor b = random_tensor({1, 4, 1, 1}, seed++);
      const Tensor y = K::serial::conv2d_forward(x, w, b, pad);
      close(y, K::parallel::conv2d_forward(x, w, b, pad));
      const Tensor go = random_tensor(y.shape(), seed++);
      const auto gs = K::serial::conv2d_backward(x, w, go, pad);
      const auto gp = K::parallel::conv2d_backward(x, w, go, pad);
      close(gs.input, gp.input);
      close(gs.weight, gp.weight);
      close(gs.bias, gp.bias);
    }

    const Tensor tw = random_tensor({s.c, 2, 3, 3}, seed++);
    const Tensor ty = K::serial::conv_transpose2d_forward(x, tw, 2);
    close(ty, K::parallel::conv_transpose2d_forward(x, tw, 2));
    const Tensor tgo = random_tensor(ty.shape(), seed++);
    const auto ts = K::serial::conv_transpose2d_backward(x, tw, tgo, 2);
    const auto tp = K::parallel::conv_transpose2d_backward(x, tw, tgo, 2);
    close(ts.input, tp.input);
    close(ts.weight, tp.weight);

    const Tensor up = K::serial::bilinear_upsample2x(x);
    close(up, K::parallel::bilinear_upsample2x(x));
    const Tensor ugo = random_tensor(up.shape(), seed++);
    close(K::serial::bilinear_upsample2x_adjoint(ugo, s), K::parallel::bilinear_upsample2x_adjoint(ugo, s));

    const auto ps = K::serial::max_pool2_forward(x);
    const auto pp = K::parallel::max_pool2_forward(x);
    CHECK(ps.output.values() == pp.output.values());
    CHECK(ps.argmax == pp.argmax);
    const Tensor pgo = random_tensor(ps.output.shape(), seed++);
    CHECK(K::serial::max_pool2_backward(pgo, ps.argmax, s).values() ==
          K::parallel::max_pool2_backward(pgo, pp.argmax, s).values());

    const auto scale = random_vec(s.c, seed++), shift = random_vec(s.c, seed++);
    const auto bs = K::serial::batch_norm_train_forward(x, scale, shift, 1e-5);
    const auto bp = K::parallel::batch_norm_train_forward(x, scale, shift, 1e-5);
    close(bs.output, bp.output);
    close(bs.mean, bp.mean);
    close(bs.var, bp.var);
    const Tensor bgo = random_tensor(s, seed++);
    const auto gbs = K::serial::batch_norm_train_backward(bs, scale, bgo);
    const auto gbp = K::parallel::batch_norm_train_backward(bp, scale, bgo);
    close(gbs.input, gbp.input);
    close(gbs.scale, gbp.scale);
    close(gbs.shift, gbp.shift);
  }
}

// Each output element belongs to one iteration, so the thread count cannot
// change the result, not even in the last bit.
TEST_CASE("parallel kernels are bit-identical across thread counts") {
  const int saved = omp_get_max_threads();
  for (const Shape& s : {Shape{2, 3, 6, 8}, Shape{4, 6, 8, 8}}) {
    omp_set_num_threads(1);
    const auto one = parallel_outputs(s, 77);
    omp_set_num_threads(4);
    const auto four = parallel_outputs(s, 77);
    omp_set_num_threads(3);
    const auto three = parallel_outputs(s, 77);
    CHECK(one == four);
    CHECK(one == three);
  }
  omp_set_num_threads(saved);
}

TEST_CASE("adjoint kernels are transposes of their forward maps") {
  // <A x, y> = <x, A^T y> for the linear maps
  const Tensor x = random_tensor({2, 2, 5, 3}, 50);
  const Tensor y = random_tensor({2, 2, 10, 6}, 51);
  const Tensor ax = K::bilinear_upsample2x(x);
  const Tensor aty = K::bilinear_upsample2x_adjoint(y, x.shape());
  double l = 0, r = 0;
  for (std::size_t i = 0; i < ax.size(); ++i) l += ax[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) r += x[i] * aty[i];
  CHECK(l == doctest::Approx(r).epsilon(1e-13));

  const Tensor w = random_tensor({2, 3, 3, 3}, 52);
  const Tensor tx = K::conv_transpose2d_forward(x, w, 2);
  const Tensor ty = random_tensor(tx.shape(), 53);
  const auto g = K::conv_transpose2d_backward(x, w, ty, 2);
  double l2 = 0, r2 = 0;
  for (std::size_t i = 0; i < tx.size(); ++i) l2 += tx[i] * ty[i];
  for (std::size_t i = 0; i < x.size(); ++i) r2 += x[i] * g.input[i];
  CHECK(l2 == doctest::Approx(r2).epsilon(1e-13));
}

TEST_CASE("bilinear taps use half-pixel centres with clamping") {
  const auto taps = K::bilinear_taps(3);
  REQUIRE(taps.size() == 6);
  // output 0 -> -0.25 clamps to 0; output 1 -> 0.25; output 5 -> 2.25 clamps to 2
  CHECK(taps[0].lo == 0);
  CHECK(taps[0].t * 1.0 + 0 == doctest::Approx(0.0));
  CHECK(taps[1].lo == 0);
  CHECK(taps[1].hi == 1);
  CHECK(taps[1].t == doctest::Approx(0.25));
  CHECK(taps[2].t == doctest::Approx(0.75));
  CHECK(taps[5].lo == 2);
  CHECK(taps[5].hi == 2);
}

TEST_CASE("kernel shape validation") {
  CHECK(K::conv2d_output_shape({1, 2, 5, 5}, {3, 2, 3, 3}, 3, 1) == Shape{1, 3, 5, 5});
  CHECK_THROWS_AS(K::conv2d_output_shape({1, 2, 5, 5}, {3, 2, 3, 3}, 2, 1), ShapeError);
  CHECK_THROWS_AS(K::conv2d_output_shape({1, 2, 5, 5}, {3, 2, 3, 3}, 3, -1), ShapeError);
  CHECK(K::conv_transpose2d_output_shape({1, 2, 4, 4}, {2, 5, 3, 3}, 2) == Shape{1, 5, 8, 8});
  CHECK_THROWS_AS(K::conv_transpose2d_output_shape({1, 2, 4, 4}, {3, 5, 3, 3}, 2), ShapeError);
}
