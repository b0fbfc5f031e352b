#include "tgvunet/network.hpp"

#include <cmath>
#include <random>
#include <set>

namespace tgvunet {

std::string to_string(UpsampleMode m) {
  return m == UpsampleMode::bilinear_tgv ? "bilinear_tgv" : "transpose_conv";
}

UpsampleMode parse_upsample_mode(const std::string& s) {
  if (s == "bilinear_tgv") return UpsampleMode::bilinear_tgv;
  if (s == "transpose_conv") return UpsampleMode::transpose_conv;
  throw ConfigError("upsample mode must be bilinear_tgv or transpose_conv, got '" + s + "'");
}

void UNetPPConfig::validate() const {
  if (depth < 2) throw ConfigError("network: depth must be >= 2, got " + std::to_string(depth));
  if (depth > 12) throw ConfigError("network: depth must be <= 12, got " + std::to_string(depth));
  if (base_channels < 1) throw ConfigError("network: base_channels must be >= 1");
  if (in_channels < 1) throw ConfigError("network: in_channels must be >= 1");
  if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ConfigError("network: dropout_rate must be in [0, 1)");
  tgv.validate();
}

namespace {

// He-style uniform bound sqrt(6 / fan_in), one generator per parameter name
// so the same name gets the same values whatever else the network contains.
Param he_uniform(const std::string& name, Shape s, std::size_t fan_in, std::uint64_t root) {
  Tensor t(s);
  std::mt19937_64 gen(derive_seed(root, name));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(gen);
  return Param(name, std::move(t));
}

Param zeros(const std::string& name, Shape s) { return Param(name, Tensor(s)); }

std::string node_name(int i, int j) { return "X" + std::to_string(i) + "_" + std::to_string(j); }

}  // namespace

std::size_t Network::node_index(int level, int col) const {
  std::size_t idx = 0;
  for (int j = 0; j < col; ++j) idx += static_cast<std::size_t>(cfg_.depth - j);
  return idx + static_cast<std::size_t>(level);
}

Network::Network(const UNetPPConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.depth;
  const std::uint64_t seed = cfg_.seed;

  for (int j = 0; j < d; ++j)
    for (int i = 0; i + j < d; ++i) {
      const std::size_t out = cfg_.channels(i);
      std::size_t in;
      if (j == 0) {
        in = i == 0 ? static_cast<std::size_t>(cfg_.in_channels) : cfg_.channels(i - 1);
      } else {
        // j skip inputs of width ch(i) plus one upsampled map of width ch(i)
        in = static_cast<std::size_t>(j) * out + out;
      }
      const std::string n = node_name(i, j);
      ConvBlock b;
      b.in_channels = in;
      b.out_channels = out;
      b.w1 = he_uniform(n + ".conv1.w", {out, in, 3, 3}, in * 9, seed);
      b.bn1 = BatchNorm(n + ".bn1", out);
      b.w2 = he_uniform(n + ".conv2.w", {out, out, 3, 3}, out * 9, seed);
      b.bn2 = BatchNorm(n + ".bn2", out);
      blocks_.push_back(std::move(b));
    }

  for (int j = 1; j < d; ++j)
    for (int i = 0; i + j < d; ++i) {
      Upsampler u;
      u.level = i;
      u.col = j;
      const std::size_t in = cfg_.channels(i + 1), out = cfg_.channels(i);
      const std::string n = "up" + std::to_string(i) + "_" + std::to_string(j);
      if (cfg_.upsample_mode == UpsampleMode::bilinear_tgv) {
        u.proj_w = he_uniform(n + ".proj.w", {out, in, 1, 1}, in, seed);
        u.proj_b = zeros(n + ".proj.b", {out, 1, 1, 1});
      } else {
        // Each output pixel of a stride-2 k=3 transposed conv sees on
        // average 9/4 taps per input channel.
        u.tconv_w = he_uniform(n + ".tconv.w", {in, out, 3, 3}, in * 9 / 4, seed);
      }
      ups_.push_back(std::move(u));
    }

  if (cfg_.upsample_mode == UpsampleMode::bilinear_tgv) {
    if (cfg_.tgv_per_level) {
      for (const Upsampler& u : ups_)
        tgv_.emplace_back(cfg_.tgv, "tgv.up" + std::to_string(u.level) + "_" + std::to_string(u.col));
    } else {
      tgv_.emplace_back(cfg_.tgv, "tgv");
    }
  }

  head_w = he_uniform("head.w", {1, cfg_.channels(0), 1, 1}, cfg_.channels(0), seed);
  head_b = zeros("head.b", {1, 1, 1, 1});
}

Var Network::block(Tape& t, Var x, ConvBlock& b, Mode mode) {
  Var h = ops::conv2d(t, x, b.w1, 1);
  h = ops::relu(t, ops::batch_norm(t, h, b.bn1, mode));
  h = ops::conv2d(t, h, b.w2, 1);
  return ops::relu(t, ops::batch_norm(t, h, b.bn2, mode));
}

Var Network::upsample(Tape& t, Var x, Upsampler& u) {
  if (cfg_.upsample_mode == UpsampleMode::bilinear_tgv)
    return ops::conv2d(t, ops::bilinear_upsample(t, x), u.proj_w, u.proj_b, 0);
  return ops::transpose_conv_upsample(t, x, u.tconv_w, 2);
}

ForwardOutput Network::forward(Tape& t, Var input, Mode mode, std::uint64_t dropout_seed) {
  const Shape s = t.value(input).shape();
  if (s.c != static_cast<std::size_t>(cfg_.in_channels)) {
    throw ShapeError("network: input has " + std::to_string(s.c) + " channels, expected " +
                     std::to_string(cfg_.in_channels));
  }
  const std::size_t m = cfg_.size_multiple();
  if (s.h == 0 || s.w == 0 || s.h % m != 0 || s.w % m != 0) {
    throw ShapeError("network: input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " is not divisible by " + std::to_string(m) + " (2^(depth-1)); crop or pad the image");
  }

  const int d = cfg_.depth;
  std::vector<Var> x(blocks_.size());
  for (int i = 0; i < d; ++i) {
    Var in = input;
    if (i > 0) {
      Var prev = x[node_index(i - 1, 0)];
      prev = ops::dropout(t, prev, cfg_.dropout_rate, mode, derive_seed(dropout_seed, "dropout" + std::to_string(i)));
      in = ops::max_pool2(t, prev);
    }
    x[node_index(i, 0)] = block(t, in, blocks_[node_index(i, 0)], mode);
  }

  ForwardOutput out;
  std::size_t edge = 0;
  for (int j = 1; j < d; ++j)
    for (int i = 0; i + j < d; ++i, ++edge) {
      std::vector<Var> parts;
      for (int k = 0; k < j; ++k) parts.push_back(x[node_index(i, k)]);
      const Var up = upsample(t, x[node_index(i + 1, j - 1)], ups_[edge]);
      out.decoder_maps.push_back(up);
      parts.push_back(up);
      x[node_index(i, j)] = block(t, ops::concat_channels(t, parts), blocks_[node_index(i, j)], mode);
    }

  out.prob = ops::sigmoid(t, ops::conv2d(t, x[node_index(0, d - 1)], head_w, head_b, 0));

  std::vector<Tensor> maps;
  for (Var v : out.decoder_maps) maps.push_back(t.value(v));
  last_maps_ = std::move(maps);
  return out;
}

Tensor Network::predict(const Tensor& input) {
  Tape t;
  const ForwardOutput out = forward(t, t.constant(input), Mode::eval);
  return t.value(out.prob);
}

Var Network::regularizer(Tape& t, const ForwardOutput& out) {
  if (tgv_.empty() || out.decoder_maps.empty()) return t.constant(Tensor::scalar(0.0));
  Var total;
  if (tgv_.size() == 1) {
    total = ops::tgv_loss_term(t, out.decoder_maps, tgv_[0]);
  } else {
    total = ops::tgv_loss_term(t, std::span<const Var>(&out.decoder_maps[0], 1), tgv_[0]);
    for (std::size_t k = 1; k < out.decoder_maps.size(); ++k)
      total = ops::add(t, total, ops::tgv_loss_term(t, std::span<const Var>(&out.decoder_maps[k], 1), tgv_[k]));
  }
  // per sample, like the mean bce it is added to
  const double n = static_cast<double>(t.value(out.decoder_maps[0]).shape().n);
  return n == 1 ? total : ops::scale(t, total, 1.0 / n);
}

const std::vector<Tensor>& Network::collect_decoder_maps() const {
  if (!last_maps_) throw Error("collect_decoder_maps: no forward pass has run yet");
  return *last_maps_;
}

Tensor Network::upsample_probe(std::size_t edge, const Tensor& x) {
  if (edge >= ups_.size()) throw ShapeError("upsample_probe: edge " + std::to_string(edge) + " out of range");
  Tape t;
  return t.value(upsample(t, t.constant(x), ups_[edge]));
}

std::vector<Param*> Network::parameters() {
  std::vector<Param*> ps;
  for (ConvBlock& b : blocks_)
    for (Param* p : {&b.w1, &b.bn1.scale, &b.bn1.shift, &b.w2, &b.bn2.scale, &b.bn2.shift})
      ps.push_back(p);
  for (Upsampler& u : ups_) {
    if (cfg_.upsample_mode == UpsampleMode::bilinear_tgv) {
      ps.push_back(&u.proj_w);
      ps.push_back(&u.proj_b);
    } else {
      ps.push_back(&u.tconv_w);
    }
  }
  ps.push_back(&head_w);
  ps.push_back(&head_b);
  for (TGVParams& p : tgv_) {
    ps.push_back(&p.p1_raw);
    ps.push_back(&p.p2_raw);
  }
  return ps;
}

std::size_t Network::parameter_count() {
  std::size_t n = 0;
  for (Param* p : parameters()) n += p->size();
  return n;
}

std::vector<BatchNorm*> Network::batch_norms() {
  std::vector<BatchNorm*> bns;
  for (ConvBlock& b : blocks_) {
    bns.push_back(&b.bn1);
    bns.push_back(&b.bn2);
  }
  return bns;
}

namespace {

std::string bn_base(const BatchNorm& bn) {
  const std::string& n = bn.scale.name;
  return n.substr(0, n.size() - std::string(".scale").size());
}

}  // namespace

Checkpoint Network::to_checkpoint(const std::string& config_text) {
  Checkpoint ck;
  ck.config_text = config_text;
  for (Param* p : parameters()) ck.arrays.emplace_back(p->name, p->value);
  for (BatchNorm* bn : batch_norms()) {
    const Shape s{1, bn->channels(), 1, 1};
    ck.arrays.emplace_back(bn_base(*bn) + ".running_mean", Tensor(s, bn->running_mean));
    ck.arrays.emplace_back(bn_base(*bn) + ".running_var", Tensor(s, bn->running_var));
  }
  return ck;
}

void Network::load(const Checkpoint& ck) {
  std::vector<std::string> problems;
  std::set<std::string> used;
  auto take = [&](const std::string& name, const Shape& want) -> const Tensor* {
    const Tensor* t = ck.find(name);
    if (!t) {
      problems.push_back("missing " + name + " " + want.str());
      return nullptr;
    }
    used.insert(name);
    if (t->shape() != want) {
      problems.push_back(name + ": checkpoint " + t->shape().str() + " vs network " + want.str());
      return nullptr;
    }
    return t;
  };

  std::vector<std::pair<Param*, const Tensor*>> params;
  for (Param* p : parameters()) params.emplace_back(p, take(p->name, p->value.shape()));
  std::vector<std::pair<BatchNorm*, std::pair<const Tensor*, const Tensor*>>> bns;
  for (BatchNorm* bn : batch_norms()) {
    const Shape s{1, bn->channels(), 1, 1};
    bns.push_back({bn, {take(bn_base(*bn) + ".running_mean", s), take(bn_base(*bn) + ".running_var", s)}});
  }
  for (const auto& [name, t] : ck.arrays)
    if (!used.count(name)) problems.push_back("unexpected " + name + " " + t.shape().str());

  if (!problems.empty()) {
    std::string msg = "checkpoint does not match the network:";
    for (const std::string& p : problems) msg += "\n  " + p;
    throw ShapeError(msg);
  }
  for (auto& [p, t] : params) p->value = *t;
  for (auto& [bn, stats] : bns) {
    bn->running_mean = stats.first->values();
    bn->running_var = stats.second->values();
    bn->initialized = true;
  }
}

}  // namespace tgvunet
