#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "tgvunet/gradcheck.hpp"
#include "tgvunet/network.hpp"

using namespace tgvunet;

namespace {

Tensor random_input(Shape s, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor t(s);
  for (double& v : t.data()) v = u(g);
  return t;
}

UNetPPConfig small(int depth, int base, UpsampleMode mode = UpsampleMode::bilinear_tgv) {
  UNetPPConfig c;
  c.depth = depth;
  c.base_channels = base;
  c.upsample_mode = mode;
  c.seed = 3;
  return c;
}

// conv weights c_out * c_in * k * k plus two batch norms (scale, shift)
std::size_t block_params(std::size_t cin, std::size_t cout) { return cout * cin * 9 + cout * cout * 9 + 4 * cout; }

}  // namespace

TEST_CASE("output keeps the input size and lies in (0, 1)") {
  Network net(small(4, 2));
  Tape t;
  const Tensor x = random_input({1, 1, 64, 64}, 1);
  auto out = net.forward(t, t.constant(x), Mode::train, 5);
  const Tensor& p = t.value(out.prob);
  CHECK(p.shape() == Shape{1, 1, 64, 64});
  for (double v : p.data()) {
    CHECK(v > 0);
    CHECK(v < 1);
  }
  const Tensor e = net.predict(x);
  CHECK(e.shape() == Shape{1, 1, 64, 64});
}

TEST_CASE("eval mode is a pure function of parameters and input") {
  Network net(small(3, 2));
  const Tensor x = random_input({2, 1, 16, 16}, 2);
  Tape t;
  net.forward(t, t.constant(x), Mode::train, 1);  // fills running stats
  const Tensor a = net.predict(x);
  const Tensor b = net.predict(x);
  CHECK(a.values() == b.values());
}

TEST_CASE("eval mode before any train pass throws") {
  Network net(small(2, 2));
  CHECK_THROWS_AS(net.predict(random_input({1, 1, 8, 8}, 3)), Error);
}

TEST_CASE("same seed builds bit-identical parameters") {
  Network a(small(3, 3)), b(small(3, 3));
  auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->value.values() == pb[i]->value.values());
  }
  auto c = small(3, 3);
  c.seed = 4;
  Network d(c);
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) differs |= pa[i]->value.values() != d.parameters()[i]->value.values();
  CHECK(differs);
}

TEST_CASE("invalid configurations") {
  CHECK_THROWS_AS(Network(small(1, 2)), ConfigError);
  CHECK_THROWS_AS(Network(small(2, 0)), ConfigError);
  auto c = small(2, 2);
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(Network{c}, ConfigError);
  CHECK_THROWS_AS(parse_upsample_mode("nearest"), ConfigError);
  CHECK(parse_upsample_mode("transpose_conv") == UpsampleMode::transpose_conv);
  CHECK(to_string(UpsampleMode::bilinear_tgv) == "bilinear_tgv");
}

TEST_CASE("indivisible spatial size throws") {
  Network net(small(3, 2));
  Tape t;
  CHECK_THROWS_AS(net.forward(t, t.constant(random_input({1, 1, 10, 12}, 4)), Mode::train), ShapeError);
  CHECK_THROWS_AS(net.forward(t, t.constant(random_input({1, 2, 8, 8}, 4)), Mode::train), ShapeError);
}

TEST_CASE("parameter count matches the closed form at depth 2, base 4") {
  // X00: 1 -> 4, X10: 4 -> 8, X01: (4 + 4) -> 4, head 4 -> 1 with bias.
  const std::size_t shared = block_params(1, 4) + block_params(4, 8) + block_params(8, 4) + 5;
  CHECK(shared == 196 + 896 + 448 + 5);
  // bilinear: 1x1 projection 8 -> 4 with bias, plus p1 and p2
  Network bil(small(2, 4));
  CHECK(bil.parameter_count() == shared + 8 * 4 + 4 + 2);
  CHECK(bil.parameter_count() == 1583);
  // transpose: 8 -> 4, 3x3, no bias
  Network tr(small(2, 4, UpsampleMode::transpose_conv));
  CHECK(tr.parameter_count() == shared + 8 * 4 * 9);
  CHECK(tr.parameter_count() == 1833);
}

TEST_CASE("switching the upsampler leaves every shared parameter identical") {
  Network bil(small(3, 3)), tr(small(3, 3, UpsampleMode::transpose_conv));
  std::map<std::string, const Param*> by_name;
  for (Param* p : tr.parameters()) by_name[p->name] = p;
  std::size_t shared = 0;
  for (Param* p : bil.parameters()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) continue;
    ++shared;
    CHECK(it->second->value.values() == p->value.values());
  }
  // two convs and two batch norms (scale, shift) per block, plus the head
  CHECK(shared == 6 * bil.blocks().size() + 2);
}

TEST_CASE("node input widths follow the nested skip rule") {
  const int depth = 4;
  Network net(small(depth, 2));
  const auto& cfg = net.config();
  for (int i = 0; i < depth; ++i)
    for (int j = 0; i + j < depth; ++j) {
      const ConvBlock& b = net.blocks()[net.node_index(i, j)];
      const std::size_t want = j == 0 ? (i == 0 ? 1 : cfg.channels(i - 1)) : j * cfg.channels(i) + cfg.channels(i);
      CHECK(b.in_channels == want);
      CHECK(b.out_channels == cfg.channels(i));
    }
}

TEST_CASE("decoder maps: one per upsampling edge, only after a forward") {
  Network d2(small(2, 2));
  CHECK_THROWS_AS(d2.collect_decoder_maps(), Error);
  Tape t;
  d2.forward(t, t.constant(random_input({1, 1, 8, 8}, 5)), Mode::train);
  CHECK(d2.collect_decoder_maps().size() == 1);
  CHECK(d2.collect_decoder_maps()[0].shape() == Shape{1, 2, 8, 8});

  Network d3(small(3, 2));
  Tape t3;
  d3.forward(t3, t3.constant(random_input({1, 1, 8, 8}, 6)), Mode::train);
  const auto& maps = d3.collect_decoder_maps();
  REQUIRE(maps.size() == 3);
  // feeding X01, X11, X02
  CHECK(maps[0].shape() == Shape{1, 2, 8, 8});
  CHECK(maps[1].shape() == Shape{1, 4, 4, 4});
  CHECK(maps[2].shape() == Shape{1, 2, 8, 8});
}

TEST_CASE("regulariser is zero for transpose conv and positive for bilinear") {
  const Tensor x = random_input({2, 1, 8, 8}, 7);
  Network tr(small(2, 2, UpsampleMode::transpose_conv));
  Tape t;
  auto out = tr.forward(t, t.constant(x), Mode::train);
  CHECK(t.value(tr.regularizer(t, out)).item() == 0.0);
  CHECK(tr.tgv().empty());

  Network bil(small(2, 2));
  Tape t2;
  auto out2 = bil.forward(t2, t2.constant(x), Mode::train);
  CHECK(t2.value(bil.regularizer(t2, out2)).item() > 0.0);
}

TEST_CASE("regulariser is per sample") {
  // a batch of two copies gives the same value as one copy
  const Tensor one = random_input({1, 1, 8, 8}, 8);
  Tensor two({2, 1, 8, 8});
  for (std::size_t i = 0; i < one.size(); ++i) two[i] = two[i + one.size()] = one[i];
  auto c = small(2, 2);
  c.dropout_rate = 0;
  Network a(c), b(c);
  Tape ta, tb;
  const double ra = ta.value(a.regularizer(ta, a.forward(ta, ta.constant(one), Mode::train))).item();
  const double rb = tb.value(b.regularizer(tb, b.forward(tb, tb.constant(two), Mode::train))).item();
  CHECK(rb == doctest::Approx(ra).epsilon(1e-12));
}

TEST_CASE("end-to-end gradient check at depth 2, base 2") {
  for (auto mode : {UpsampleMode::bilinear_tgv, UpsampleMode::transpose_conv}) {
    CAPTURE(to_string(mode));
    Network net(small(2, 2, mode));
    const Tensor x = random_input({2, 1, 8, 8}, 9);
    Tensor y({2, 1, 8, 8});
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > 0.5 ? 1.0 : 0.0;
    GradCheckOptions o;
    o.tolerance = 1e-3;
    auto rep = grad_check(
        [&](Tape& t) {
          auto out = net.forward(t, t.constant(x), Mode::train, 11);
          return ops::add(t, ops::bce_loss(t, out.prob, y), net.regularizer(t, out));
        },
        net.parameters(), o);
    CHECK(rep.passed);
    CHECK(rep.max_rel_error < 1e-3);
  }
}

TEST_CASE("checkpoint round trip restores predictions") {
  Network a(small(3, 2));
  const Tensor x = random_input({2, 1, 16, 16}, 12);
  Tape t;
  a.forward(t, t.constant(x), Mode::train, 2);
  for (Param* p : a.parameters())
    for (double& v : p->value.data()) v += 0.01;
  const Tensor want = a.predict(x);

  const Checkpoint ck = parse_checkpoint(serialize_checkpoint(a.to_checkpoint("cfg")));
  CHECK(ck.config_text == "cfg");
  auto other = small(3, 2);
  other.seed = 99;
  Network b(other);
  b.load(ck);
  CHECK(b.predict(x).values() == want.values());

  Network wrong(small(3, 3));
  CHECK_THROWS_AS(wrong.load(ck), ShapeError);
}

TEST_CASE("upsample probe matches the plain bilinear kernel on a constant") {
  Network net(small(2, 2));
  // projection of a constant map is a constant: bilinear adds no structure
  const Tensor c({1, 4, 4, 4}, 0.3);
  const Tensor y = net.upsample_probe(0, c);
  CHECK(y.shape() == Shape{1, 2, 8, 8});
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t i = 0; i < 64; ++i) CHECK(y.plane(0, ch)[i] == doctest::Approx(y.plane(0, ch)[0]).epsilon(1e-14));
  CHECK_THROWS_AS(net.upsample_probe(1, c), ShapeError);
}
