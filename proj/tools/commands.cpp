#include "commands.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "tgvunet/checkpoint.hpp"
#include "tgvunet/gradcheck.hpp"
#include "tgvunet/upsampling.hpp"

namespace tgvunet::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

std::vector<Sample> load_samples(const RunConfig& cfg) {
  std::vector<Sample> samples;
  if (cfg.synthetic > 0) {
    samples = synth_blobs(cfg.synthetic, cfg.size, derive_seed(cfg.seed, "data"));
  } else {
    if (cfg.data_root.empty()) throw ConfigError("no dataset: pass --data DIR or --synthetic N");
    samples = load_dataset(cfg.data_root);
    if (cfg.size > 0)
      for (Sample& s : samples)
        if (s.height() != cfg.size || s.width() != cfg.size) s = crop_to_size(s, cfg.size, cfg.size);
  }
  if (samples.empty()) throw DataError("dataset is empty");
  return samples;
}

std::vector<Sample> pick(const std::vector<Sample>& all, const std::vector<std::size_t>& idx) {
  std::vector<Sample> out;
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

std::vector<std::string> sources_of(const std::vector<Sample>& s) {
  std::vector<std::string> tags;
  for (const Sample& x : s) tags.push_back(x.source);
  return tags;
}

// FNV-1a over the raw bytes of the encoder column X(i, 0).
std::uint64_t encoder_hash(Network& net) {
  std::string bytes;
  for (Param* p : net.parameters())
    if (p->name.rfind('X', 0) == 0 && p->name.find("_0.") != std::string::npos)
      bytes.append(reinterpret_cast<const char*>(p->value.data().data()), p->value.size() * sizeof(double));
  return hash_name(bytes);
}

struct HoldoutRun {
  TrainReport report;
  Evaluation train_eval;
  bool evaluated = false;
};

// Stratified hold-out training shared by train and compare-upsampling.
HoldoutRun train_holdout(Network& net, const RunConfig& cfg, const std::vector<Sample>& samples,
                         const fs::path& out_dir, bool verbose) {
  const Fold split = stratified_split(sources_of(samples), cfg.train.val_fraction, cfg.seed);
  const std::vector<Sample> train = pick(samples, split.train), val = pick(samples, split.val);
  TrainConfig tc = cfg.train;
  if (tc.batch_size > train.size()) {
    if (verbose)
      std::cerr << "note: batch_size " << tc.batch_size << " clamped to the training-set size " << train.size() << "\n";
    tc.batch_size = train.size();
  }
  const std::string config_text = to_ini(cfg);
  FitCallbacks cb;
  cb.on_best = [&](Network& n, const EpochRecord&) { save_checkpoint(out_dir / "best.ckpt", n.to_checkpoint(config_text)); };
  if (verbose)
    cb.on_epoch = [](const EpochRecord& e) {
      if (e.epoch == 1 || e.epoch % 10 == 0)
        std::printf("epoch %4d  train %.5f  val %.5f  lr %.3g  dice %.4f\n", e.epoch, e.train_loss, e.val_loss, e.lr,
                    e.dice);
    };
  HoldoutRun run;
  run.report = fit(net, train, val, tc, cfg.augment, cb);
  save_checkpoint(out_dir / "final.ckpt", net.to_checkpoint(config_text));
  if (!run.report.epochs.empty()) {
    run.train_eval = evaluate(net, train, tc.threshold, tc.batch_size, PipelineStage::test);
    run.evaluated = true;
  }
  return run;
}

std::string manifest_text(const RunConfig& cfg, const char* validation) {
  return std::string("# run manifest; usable as --config\n# validation = ") + validation + "\n" + to_ini(cfg);
}

RunConfig config_from_checkpoint(const Checkpoint& ck, const Overrides& overrides) {
  RunConfig cfg = parse_config(ck.config_text);
  for (const auto& [sec, key, val] : overrides) set_config_value(cfg, sec, key, val);
  cfg.resolve_seeds();
  cfg.validate();
  return cfg;
}

}  // namespace

RunConfig resolve_config(const std::string& config_path, const Overrides& overrides) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  for (const auto& [sec, key, val] : overrides) set_config_value(cfg, sec, key, val);
  cfg.resolve_seeds();
  cfg.validate();
  return cfg;
}

int cmd_train(const RunConfig& cfg) {
  const std::vector<Sample> samples = load_samples(cfg);
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  write_text(out / "run.ini", manifest_text(cfg, cfg.kfold ? "kfold" : "holdout"));

  if (!cfg.kfold) {
    Network net(cfg.network);
    const auto start = std::chrono::steady_clock::now();
    HoldoutRun run = train_holdout(net, cfg, samples, out, true);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text(out / "train_log.csv", report_csv(run.report));
    std::printf("epochs run: %zu%s, best epoch %d, final lr %.3g, %.1f s\n", run.report.epochs.size(),
                run.report.stopped_early ? " (early stop)" : "", run.report.best_epoch, run.report.schedule.current_lr,
                secs);
    for (const TGVParams& p : net.tgv()) std::printf("%s = %.6f, %s = %.6f\n", "p1", p.p1(), "p2", p.p2());
    if (run.evaluated) {
      const std::vector<MetricsRow> rows = {{"train", "-", cfg.train.threshold, run.train_eval.metrics}};
      write_text(out / "train_metrics.csv", metrics_csv(rows));
      write_text(out / "train_metrics.txt", metrics_table(rows));
      std::printf("final training Dice %.4f, IoU %.4f\n", run.train_eval.metrics.dsc, run.train_eval.metrics.jaccard);
    } else {
      std::printf("no epochs run; parameters are at initialisation\n");
    }
    return 0;
  }

  const auto folds = kfold_split(samples.size(), static_cast<std::size_t>(cfg.train.folds), cfg.seed);
  std::string summary = "fold,epochs,best_val_loss,dice,iou\n";
  double dice_sum = 0, iou_sum = 0, loss_sum = 0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const fs::path dir = out / ("fold_" + std::to_string(f));
    fs::create_directories(dir);
    Network net(cfg.network);
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "fold" + std::to_string(f));
    const std::vector<Sample> train = pick(samples, folds[f].train), val = pick(samples, folds[f].val);
    if (tc.batch_size > train.size()) tc.batch_size = train.size();
    const std::string config_text = to_ini(cfg);
    FitCallbacks cb;
    cb.on_best = [&](Network& n, const EpochRecord&) { save_checkpoint(dir / "best.ckpt", n.to_checkpoint(config_text)); };
    const TrainReport rep = fit(net, train, val, tc, cfg.augment, cb);
    write_text(dir / "train_log.csv", report_csv(rep));
    double dice = 0, iou = 0;
    if (!rep.epochs.empty()) {
      const Evaluation ev = evaluate(net, val, tc.threshold, tc.batch_size, PipelineStage::validation);
      dice = ev.metrics.dsc;
      iou = ev.metrics.jaccard;
    }
    char line[256];
    std::snprintf(line, sizeof(line), "%zu,%zu,%.10g,%.10g,%.10g\n", f, rep.epochs.size(), rep.schedule.best_val_loss,
                  dice, iou);
    summary += line;
    std::printf("fold %zu: val dice %.4f, iou %.4f\n", f, dice, iou);
    dice_sum += dice;
    iou_sum += iou;
    loss_sum += rep.schedule.best_val_loss;
  }
  const double k = static_cast<double>(folds.size());
  char line[256];
  std::snprintf(line, sizeof(line), "mean,,%.10g,%.10g,%.10g\n", loss_sum / k, dice_sum / k, iou_sum / k);
  summary += line;
  write_text(out / "folds.csv", summary);
  std::printf("%zu-fold mean validation Dice %.4f, IoU %.4f\n", folds.size(), dice_sum / k, iou_sum / k);
  return 0;
}

int cmd_eval(const EvalOptions& opt) {
  if (opt.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
  const Checkpoint ck = load_checkpoint(opt.checkpoint);
  const RunConfig cfg = config_from_checkpoint(ck, opt.overrides);
  Network net(cfg.network);
  net.load(ck);

  std::vector<Sample> samples = load_samples(cfg);
  std::string combo_name = "-";
  if (opt.combo != 0) {
    std::map<std::string, std::vector<Sample>> pools;
    for (const Sample& s : samples) pools[s.source].push_back(s);
    const std::size_t total = opt.combo_total > 0 ? opt.combo_total : samples.size();
    samples = make_combo(pools, combo_preset(opt.combo, total), derive_seed(cfg.seed, "combo"));
    combo_name = "COMBO_" + std::to_string(opt.combo);
  }
  const Evaluation ev = evaluate(net, samples, cfg.train.threshold, cfg.train.batch_size, PipelineStage::test);
  const std::string dataset = cfg.synthetic > 0 ? "synthetic" : fs::path(cfg.data_root).filename().string();
  const std::vector<MetricsRow> rows = {{dataset, combo_name, cfg.train.threshold, ev.metrics}};
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  write_text(out / "metrics.csv", metrics_csv(rows));
  write_text(out / "metrics.txt", metrics_table(rows));
  std::printf("%s", metrics_table(rows).c_str());
  return 0;
}

int cmd_predict(const PredictOptions& opt) {
  if (opt.checkpoint.empty()) throw ConfigError("predict: --checkpoint is required");
  if (opt.images.empty()) throw ConfigError("predict: no input images");
  if (!(opt.threshold >= 0 && opt.threshold <= 1)) throw ConfigError("predict: threshold must be in [0, 1]");
  const Checkpoint ck = load_checkpoint(opt.checkpoint);
  const RunConfig cfg = config_from_checkpoint(ck, {});
  Network net(cfg.network);
  net.load(ck);
  fs::create_directories(opt.out_dir);

  for (const std::string& path : opt.images) {
    const GrayImage img = read_gray(path);
    const std::size_t m = cfg.network.size_multiple();
    if (img.height % m != 0 || img.width % m != 0) {
      throw ShapeError(path + ": size " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                       " is not divisible by " + std::to_string(m) + "; crop it to " +
                       std::to_string(img.height / m * m) + "x" + std::to_string(img.width / m * m));
    }
    const Tensor prob = net.predict(from_gray(img));
    const Tensor mask = binarize(prob, opt.threshold);
    const std::string stem = fs::path(path).stem().string();
    write_gray(fs::path(opt.out_dir) / (stem + "_mask.png"), to_gray(mask));
    if (opt.overlay) {
      // red where a foreground pixel has a background 4-neighbour
      const std::size_t h = img.height, w = img.width;
      std::vector<std::uint8_t> rgb(3 * h * w);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t k = y * w + x;
          bool edge = false;
          if (mask[k] > 0.5)
            edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w || mask[k - w] < 0.5 || mask[k + w] < 0.5 ||
                   mask[k - 1] < 0.5 || mask[k + 1] < 0.5;
          rgb[3 * k] = edge ? 255 : img.pixels[k];
          rgb[3 * k + 1] = edge ? 0 : img.pixels[k];
          rgb[3 * k + 2] = edge ? 0 : img.pixels[k];
        }
      write_rgb(fs::path(opt.out_dir) / (stem + "_overlay.png"), h, w, rgb);
    }
    std::printf("%s -> %s_mask.png\n", path.c_str(), stem.c_str());
  }
  return 0;
}

int cmd_compare_upsampling(const RunConfig& base) {
  const std::vector<Sample> samples = load_samples(base);
  const fs::path out = base.out_dir;
  fs::create_directories(out);
  write_text(out / "run.ini", manifest_text(base, "holdout"));
  std::string csv = "mode,final_dice,final_iou,val_dice,probe_checkerboard,map_checkerboard,encoder_init_hash,wall_time_s\n";

  for (UpsampleMode mode : {UpsampleMode::bilinear_tgv, UpsampleMode::transpose_conv}) {
    RunConfig cfg = base;
    cfg.network.upsample_mode = mode;
    const fs::path dir = out / to_string(mode);
    fs::create_directories(dir);
    Network net(cfg.network);
    const std::uint64_t hash = encoder_hash(net);

    // Constant input through every upsampler at initialisation.
    double probe = 0;
    for (std::size_t e = 0; e < net.upsamplers().size(); ++e) {
      const std::size_t c = cfg.network.channels(net.upsamplers()[e].level + 1);
      probe = std::max(probe, checkerboard_score(net.upsample_probe(e, Tensor({1, c, 8, 8}, 1.0))));
    }

    const auto start = std::chrono::steady_clock::now();
    HoldoutRun run = train_holdout(net, cfg, samples, dir, false);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text(dir / "train_log.csv", report_csv(run.report));

    double map_score = 0;
    std::size_t scored = 0;
    if (run.evaluated) {
      net.predict(samples.front().image);
      for (const Tensor& m : net.collect_decoder_maps())
        if (m.shape().h >= 4 && m.shape().w >= 4) {
          map_score += checkerboard_score(m);
          ++scored;
        }
    }
    if (scored > 0) map_score /= static_cast<double>(scored);
    const double dice = run.evaluated ? run.train_eval.metrics.dsc : 0.0;
    const double iou = run.evaluated ? run.train_eval.metrics.jaccard : 0.0;
    const double val_dice = run.report.epochs.empty() ? 0.0 : run.report.epochs.back().dice;
    char line[512];
    std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f,%.6e,%.6e,%016llx,%.2f\n", to_string(mode).c_str(), dice, iou,
                  val_dice, probe, map_score, static_cast<unsigned long long>(hash), secs);
    csv += line;
    std::printf("%-15s dice %.4f  iou %.4f  probe checkerboard %.3e  map checkerboard %.3e  %.1f s\n",
                to_string(mode).c_str(), dice, iou, probe, map_score, secs);
  }
  write_text(out / "compare_upsampling.csv", csv);
  return 0;
}

int cmd_gradcheck(std::optional<double> tolerance, bool inject_fault) {
  BatteryOptions opt;
  opt.tolerance = tolerance;
  opt.corrupt_backward = inject_fault;
  const auto results = run_gradcheck_battery(opt);
  bool all = true;
  std::printf("%-28s %9s %12s %10s %8s  %s\n", "case", "elements", "max_rel_err", "tolerance", "seconds", "result");
  for (const BatteryResult& r : results) {
    std::printf("%-28s %9zu %12.3e %10.1e %8.2f  %s\n", r.name.c_str(), r.elements, r.max_rel_error, r.tolerance,
                r.seconds, r.passed ? "PASS" : "FAIL");
    all = all && r.passed;
  }
  std::printf("%s\n", all ? "all gradient checks passed" : "gradient check FAILED");
  return all ? 0 : 1;
}

int cmd_stats(const std::string& root) {
  if (root.empty()) throw ConfigError("stats: --data is required");
  const std::vector<Sample> samples = load_dataset(root);
  if (samples.empty()) throw DataError("stats: dataset " + root + " is empty");
  std::map<std::string, std::vector<Sample>> groups;
  for (const Sample& s : samples) groups[s.source].push_back(s);
  std::vector<PixelStats> parts;
  std::printf("%-16s %8s %8s %8s\n", "source", "images", "mean", "std");
  for (const auto& [src, group] : groups) {
    const PixelStats st = dataset_stats(group);
    parts.push_back(st);
    std::printf("%-16s %8zu %8.4f %8.4f\n", src.c_str(), group.size(), st.mean, st.std);
  }
  const PixelStats all = pool_stats(parts);
  std::printf("%-16s %8zu %8.4f %8.4f\n", "pooled", samples.size(), all.mean, all.std);
  return 0;
}

}  // namespace tgvunet::cli
