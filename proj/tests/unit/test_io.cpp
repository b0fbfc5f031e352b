#include <doctest.h>

#include <filesystem>

#include "tgvunet/checkpoint.hpp"
#include "tgvunet/config.hpp"
#include "tgvunet/gradcheck.hpp"

using namespace tgvunet;

TEST_CASE("config round trips through ini text") {
  RunConfig c;
  c.seed = 42;
  c.synthetic = 8;
  c.network.depth = 3;
  c.network.upsample_mode = UpsampleMode::transpose_conv;
  c.network.tgv.gamma = 0.1 + 0.2;  // not exactly representable in short decimal
  c.train.learning_rate = 1.0 / 3;
  c.train.val_fraction = 0;
  c.augment.noise_p = 0.25;
  const RunConfig back = parse_config(to_ini(c));
  CHECK(to_ini(back) == to_ini(c));
  CHECK(back.network.tgv.gamma == c.network.tgv.gamma);
  CHECK(back.train.learning_rate == c.train.learning_rate);
  CHECK(back.network.upsample_mode == UpsampleMode::transpose_conv);
  CHECK(back.seed == 42);
}

TEST_CASE("config errors name the offending key") {
  CHECK_THROWS_AS(parse_config("[train]\nepochz = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nowhere]\nx = 1\n"), ConfigError);
  try {
    parse_config("[train]\nlearning_rate = fast\n");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
  }
  RunConfig c;
  CHECK_THROWS_AS(set_config_value(c, "network", "upsample", "nearest"), ConfigError);
  set_config_value(c, "network", "depth", "3");
  CHECK(c.network.depth == 3);
  // overrides apply on top of a base
  CHECK(parse_config("[train]\nepochs = 7\n", c).network.depth == 3);
}

TEST_CASE("config validation") {
  RunConfig c;
  c.network.depth = 3;
  c.size = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.size = 32;
  c.validate();
  c.train.schedule.plateau_patience = 20;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("checkpoint round trip and corruption") {
  Checkpoint ck;
  ck.config_text = "[run]\nseed = 1\n";
  ck.arrays.emplace_back("a", Tensor({1, 2, 1, 3}, {1, -2, 3.5, 1e-300, -0.0, 7}));
  ck.arrays.emplace_back("b", Tensor::scalar(0.1));
  const std::string bytes = serialize_checkpoint(ck);
  CHECK(bytes.substr(0, 8) == "TGVUCKPT");
  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(back.config_text == ck.config_text);
  REQUIRE(back.arrays.size() == 2);
  CHECK(back.find("a")->values() == ck.arrays[0].second.values());
  CHECK(back.find("a")->shape() == Shape{1, 2, 1, 3});
  CHECK(back.find("missing") == nullptr);
  CHECK(serialize_checkpoint(back) == bytes);

  std::string flipped = bytes;
  flipped[40] ^= 1;
  CHECK_THROWS_AS(parse_checkpoint(flipped), DataError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
  CHECK_THROWS_AS(parse_checkpoint("NOTACKPT" + bytes.substr(8)), DataError);
  CHECK_THROWS_AS(parse_checkpoint(bytes + "x"), DataError);

  const auto path = std::filesystem::temp_directory_path() / "tgvunet_test.ckpt";
  save_checkpoint(path, ck);
  CHECK(serialize_checkpoint(load_checkpoint(path)) == bytes);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
}

TEST_CASE("gradient battery passes and catches a broken backward") {
  const auto good = run_gradcheck_battery();
  REQUIRE_FALSE(good.empty());
  for (const auto& r : good) {
    CAPTURE(r.name);
    CHECK(r.passed);
    CHECK(r.max_rel_error <= r.tolerance);
  }

  BatteryOptions bad;
  bad.corrupt_backward = true;
  bool any_failed = false;
  for (const auto& r : run_gradcheck_battery(bad)) any_failed |= !r.passed;
  CHECK(any_failed);
}
