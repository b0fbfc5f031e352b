#include "tgvunet/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace tgvunet {

RunConfig::RunConfig() {
  augment.hflip_p = 0.5;
  augment.vflip_p = 0.5;
}

void RunConfig::resolve_seeds() {
  network.seed = derive_seed(seed, "init");
  train.seed = seed;
}

void RunConfig::validate() const {
  network.validate();
  train.validate();
  augment.validate();
  if (out_dir.empty()) throw ConfigError("run: out must not be empty");
  if (synthetic > 0 && size == 0) throw ConfigError("data: size must be > 0 with synthetic data");
  if (size > 0 && size % network.size_multiple() != 0) {
    throw ConfigError("data: size " + std::to_string(size) + " is not divisible by 2^(depth-1) = " +
                      std::to_string(network.size_multiple()));
  }
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

template <>
double parse_number<double>(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define DBL(sec, name, expr)                                                                        \
  Field {                                                                                           \
    sec, name, [](const RunConfig& c) { return fmt(c.expr); },                                      \
        [](RunConfig& c, const std::string& v) { c.expr = parse_number<double>(sec "." name, v); } \
  }
#define INT(sec, name, type, expr)                                                               \
  Field {                                                                                        \
    sec, name, [](const RunConfig& c) { return std::to_string(c.expr); },                        \
        [](RunConfig& c, const std::string& v) { c.expr = parse_number<type>(sec "." name, v); } \
  }
#define BOOL(sec, name, expr)                                                              \
  Field {                                                                                  \
    sec, name, [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.expr = parse_bool(sec "." name, v); }  \
  }
#define STR(sec, name, expr)                                                                  \
  Field {                                                                                     \
    sec, name, [](const RunConfig& c) { return c.expr; }, [](RunConfig& c, const std::string& v) { c.expr = v; } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      INT("run", "seed", std::uint64_t, seed),
      STR("run", "out", out_dir),
      BOOL("run", "kfold", kfold),
      DBL("run", "threshold", train.threshold),

      STR("data", "root", data_root),
      INT("data", "synthetic", std::size_t, synthetic),
      INT("data", "size", std::size_t, size),

      INT("network", "depth", int, network.depth),
      INT("network", "base_channels", int, network.base_channels),
      INT("network", "in_channels", int, network.in_channels),
      DBL("network", "dropout_rate", network.dropout_rate),
      Field{"network", "upsample", [](const RunConfig& c) { return to_string(c.network.upsample_mode); },
            [](RunConfig& c, const std::string& v) { c.network.upsample_mode = parse_upsample_mode(v); }},

      DBL("tgv", "gamma", network.tgv.gamma),
      DBL("tgv", "lambda", network.tgv.lambda),
      DBL("tgv", "p1_init", network.tgv.p1_init),
      DBL("tgv", "p2_init", network.tgv.p2_init),
      INT("tgv", "inner_steps", int, network.tgv.inner_steps),
      DBL("tgv", "inner_lr", network.tgv.inner_lr),
      DBL("tgv", "huber_delta", network.tgv.huber_delta),
      BOOL("tgv", "per_level", network.tgv_per_level),

      INT("train", "epochs", int, train.epochs),
      DBL("train", "learning_rate", train.learning_rate),
      INT("train", "batch_size", std::size_t, train.batch_size),
      DBL("train", "beta1", train.adam.beta1),
      DBL("train", "beta2", train.adam.beta2),
      DBL("train", "adam_eps", train.adam.eps),
      INT("train", "plateau_patience", int, train.schedule.plateau_patience),
      INT("train", "early_stop_patience", int, train.schedule.early_stop_patience),
      DBL("train", "min_improvement", train.schedule.min_improvement),
      INT("train", "folds", int, train.folds),
      DBL("train", "val_fraction", train.val_fraction),

      DBL("augment", "crop_p", augment.crop_p),
      DBL("augment", "crop_min_scale", augment.crop_min_scale),
      DBL("augment", "affine_p", augment.affine_p),
      DBL("augment", "max_rotation_deg", augment.max_rotation_deg),
      DBL("augment", "min_scale", augment.min_scale),
      DBL("augment", "max_scale", augment.max_scale),
      DBL("augment", "hflip_p", augment.hflip_p),
      DBL("augment", "vflip_p", augment.vflip_p),
      DBL("augment", "noise_p", augment.noise_p),
      DBL("augment", "noise_sigma", augment.noise_sigma),
      DBL("augment", "blur_p", augment.blur_p),
      DBL("augment", "blur_sigma", augment.blur_sigma),
      DBL("augment", "brightness_p", augment.brightness_p),
      DBL("augment", "brightness_delta", augment.brightness_delta),
      DBL("augment", "contrast_p", augment.contrast_p),
      DBL("augment", "contrast_range", augment.contrast_range),
  };
  return table;
}

#undef DBL
#undef INT
#undef BOOL
#undef STR

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& value) {
  for (const Field& f : fields())
    if (section == f.section && key == f.key) {
      f.set(cfg, value);
      return;
    }
  throw ConfigError("config: unknown key [" + section + "] " + key);
}

RunConfig parse_config(const std::string& ini_text, RunConfig base) {
  boost::property_tree::ptree tree;
  std::istringstream in(ini_text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' outside any [section]");
    for (const auto& [key, node] : body) set_config_value(base, section, key, node.get_value<std::string>());
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_ini(const RunConfig& cfg) {
  std::ostringstream out;
  std::string current;
  for (const Field& f : fields()) {
    if (current != f.section) {
      if (!current.empty()) out << '\n';
      current = f.section;
      out << '[' << current << "]\n";
    }
    out << f.key << " = " << f.get(cfg) << '\n';
  }
  return out.str();
}

}  // namespace tgvunet
