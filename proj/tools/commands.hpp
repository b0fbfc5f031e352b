#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "tgvunet/config.hpp"

namespace tgvunet::cli {

// (section, key, value) triples applied after the config file.
using Overrides = std::vector<std::array<std::string, 3>>;

RunConfig resolve_config(const std::string& config_path, const Overrides& overrides);

struct EvalOptions {
  std::string checkpoint;
  Overrides overrides;
  int combo = 0;  // 1..3 selects a COMBO preset over the dataset's sources
  std::size_t combo_total = 0;
};

struct PredictOptions {
  std::string checkpoint;
  std::vector<std::string> images;
  std::string out_dir = "predictions";
  double threshold = 0.5;
  bool overlay = false;
};

int cmd_train(const RunConfig& cfg);
int cmd_eval(const EvalOptions& opt);
int cmd_predict(const PredictOptions& opt);
int cmd_compare_upsampling(const RunConfig& cfg);
int cmd_gradcheck(std::optional<double> tolerance, bool inject_fault);
int cmd_stats(const std::string& root);

}  // namespace tgvunet::cli
