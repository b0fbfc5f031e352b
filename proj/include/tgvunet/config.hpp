#pragma once

// Run configuration: INI sections per module, flags applied on top.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tgvunet/data.hpp"
#include "tgvunet/network.hpp"
#include "tgvunet/trainer.hpp"

namespace tgvunet {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  bool kfold = false;

  std::string data_root;
  std::size_t synthetic = 0;  // > 0: generate this many samples instead of loading
  std::size_t size = 32;      // side of synthetic images / crop size for loaded data (0 = keep)

  UNetPPConfig network;
  TrainConfig train;
  AugmentSpec augment;

  RunConfig();
  // Copies the root seed into the network and trainer configs.
  void resolve_seeds();
  // Throws ConfigError naming the first violated invariant.
  void validate() const;
};

// Sets [section] key = value; throws ConfigError for unknown keys or values
// that do not parse.
void set_config_value(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& value);

// INI text -> config. Unknown sections or keys are errors.
RunConfig parse_config(const std::string& ini_text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

// Every field, with doubles printed to round-trip exactly. Feeding the
// result back through parse_config reproduces the config.
std::string to_ini(const RunConfig& cfg);

}  // namespace tgvunet
