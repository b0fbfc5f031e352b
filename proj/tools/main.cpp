// tgvunet command line: train, eval, predict, compare-upsampling, gradcheck, stats.
//
// Exit codes: 0 success, 1 invalid arguments or configuration (or failed
// gradient checks), 2 runtime failure.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>

#include "commands.hpp"

using namespace tgvunet;

namespace {

struct RunFlag {
  const char* flag;
  const char* section;
  const char* key;
  const char* help;
};

const RunFlag kRunFlags[] = {
    {"--seed", "run", "seed", "root seed for every random stream"},
    {"--synthetic", "data", "synthetic", "generate N synthetic samples instead of loading --data"},
    {"--size", "data", "size", "synthetic image side / centre-crop size for loaded data"},
    {"--data", "data", "root", "dataset directory (images/, masks/, optional manifest.txt)"},
    {"--depth", "network", "depth", "encoder levels"},
    {"--base-channels", "network", "base_channels", "channels at level 0"},
    {"--upsample", "network", "upsample", "bilinear_tgv or transpose_conv"},
    {"--epochs", "train", "epochs", "maximum epochs"},
    {"--lr", "train", "learning_rate", "initial Adam learning rate"},
    {"--batch-size", "train", "batch_size", "mini-batch size"},
    {"--val-fraction", "train", "val_fraction", "hold-out fraction per source; 0 monitors the training set"},
    {"--gamma", "tgv", "gamma", "weight of the TGV term"},
    {"--threshold", "run", "threshold", "probability threshold for masks"},
    {"--out", "run", "out", "output directory"},
};

struct RunFlagValues {
  std::string config;
  std::map<std::string, std::string> values;
  bool kfold = false;

  cli::Overrides overrides() const {
    cli::Overrides o;
    for (const RunFlag& f : kRunFlags) {
      auto it = values.find(f.flag);
      if (it != values.end() && !it->second.empty()) o.push_back({f.section, f.key, it->second});
    }
    if (kfold) o.push_back({"run", "kfold", "true"});
    return o;
  }
};

void add_run_flags(CLI::App* sub, RunFlagValues& v, bool with_config, bool with_kfold) {
  if (with_config) sub->add_option("--config", v.config, "INI config file; flags override its values");
  for (const RunFlag& f : kRunFlags) sub->add_option(f.flag, v.values[f.flag], f.help);
  if (with_kfold) sub->add_flag("--kfold", v.kfold, "k-fold cross-validation instead of a 10% hold-out");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nested-skip segmentation network with bilinear + TGV decoder upsampling"};
  app.require_subcommand(1);

  RunFlagValues train_v, compare_v, eval_v;
  auto* train = app.add_subcommand("train", "train a network");
  add_run_flags(train, train_v, true, true);

  auto* compare = app.add_subcommand("compare-upsampling", "train both upsampling modes on the same data");
  add_run_flags(compare, compare_v, true, false);

  cli::EvalOptions eval_opt;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
  eval->add_option("--checkpoint", eval_opt.checkpoint, "checkpoint file")->required();
  add_run_flags(eval, eval_v, false, false);
  eval->add_option("--combo", eval_opt.combo, "assemble COMBO_1/2/3 from the dataset's sources")
      ->check(CLI::Range(1, 3));
  eval->add_option("--combo-total", eval_opt.combo_total, "COMBO size (default: dataset size)");

  cli::PredictOptions pred_opt;
  auto* predict = app.add_subcommand("predict", "write masks for images");
  predict->add_option("--checkpoint", pred_opt.checkpoint, "checkpoint file")->required();
  predict->add_option("images", pred_opt.images, "input images (.png/.pgm)")->required();
  predict->add_option("--out", pred_opt.out_dir, "output directory");
  predict->add_option("--threshold", pred_opt.threshold, "probability threshold");
  predict->add_flag("--overlay", pred_opt.overlay, "also write red-contour overlays");

  std::optional<double> tolerance;
  bool inject_fault = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  gradcheck->add_option("--tolerance", tolerance, "relative tolerance for every case");
  gradcheck->add_flag("--inject-fault", inject_fault, "double one backward pass (detector self-test)")->group("");

  std::string stats_root;
  auto* stats = app.add_subcommand("stats", "per-source pixel mean and std");
  stats->add_option("--data", stats_root, "dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return cli::cmd_train(cli::resolve_config(train_v.config, train_v.overrides()));
    if (*compare) return cli::cmd_compare_upsampling(cli::resolve_config(compare_v.config, compare_v.overrides()));
    if (*eval) {
      eval_opt.overrides = eval_v.overrides();
      return cli::cmd_eval(eval_opt);
    }
    if (*predict) return cli::cmd_predict(pred_opt);
    if (*gradcheck) return cli::cmd_gradcheck(tolerance, inject_fault);
    if (*stats) return cli::cmd_stats(stats_root);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
