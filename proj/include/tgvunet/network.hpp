#pragma once

// Nested-skip encoder/decoder (UNet++ grid) with a switchable decoder
// upsampler.
//
// Node X(i, j), i + j <= depth - 1, i = level, j = column.
//   X(0, 0)  = block(input)
//   X(i, 0)  = block(pool(dropout(X(i-1, 0))))
//   X(i, j)  = block(concat(X(i, 0), ..., X(i, j-1), up(X(i+1, j-1))))
// block = [conv3x3, BN, ReLU] x 2, ch(i) = base * 2^i. The block convs
// carry no bias since the batch norm right after removes it anyway. Every
// up() maps ch(i+1) -> ch(i) at twice the resolution. Head: 1x1 conv on
// X(0, depth-1) then sigmoid.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tgvunet/checkpoint.hpp"
#include "tgvunet/ops.hpp"
#include "tgvunet/tape.hpp"
#include "tgvunet/upsampling.hpp"

namespace tgvunet {

enum class UpsampleMode { bilinear_tgv, transpose_conv };

std::string to_string(UpsampleMode m);
// Throws ConfigError for anything but "bilinear_tgv" / "transpose_conv".
UpsampleMode parse_upsample_mode(const std::string& s);

struct UNetPPConfig {
  int depth = 5;
  int base_channels = 16;
  int in_channels = 1;
  double dropout_rate = 0.2;
  UpsampleMode upsample_mode = UpsampleMode::bilinear_tgv;
  TGVSettings tgv;
  bool tgv_per_level = false;  // one (p1, p2) pair per upsampling edge
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t channels(int level) const { return static_cast<std::size_t>(base_channels) << level; }
  // Inputs must have h, w divisible by this.
  std::size_t size_multiple() const { return std::size_t{1} << (depth - 1); }
};

struct ConvBlock {
  Param w1;
  BatchNorm bn1;
  Param w2;
  BatchNorm bn2;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
};

// The upsampler feeding X(level, col) from X(level+1, col-1).
struct Upsampler {
  int level = 0;
  int col = 0;
  // bilinear_tgv: bilinear x2 then 1x1 conv.
  Param proj_w, proj_b;
  // transpose_conv: k=3 stride-2 transposed conv, no bias.
  Param tconv_w;
};

struct ForwardOutput {
  Var prob;
  // Upsampler outputs in evaluation order: by column, then level.
  std::vector<Var> decoder_maps;
};

class Network {
 public:
  explicit Network(const UNetPPConfig& cfg);

  const UNetPPConfig& config() const { return cfg_; }

  // Records a full pass. `dropout_seed` fixes the train-mode masks.
  ForwardOutput forward(Tape& t, Var input, Mode mode, std::uint64_t dropout_seed = 0);
  // Eval-mode probabilities, (n, 1, h, w).
  Tensor predict(const Tensor& input);

  // gamma/lambda-weighted TGV term over the decoder maps of `out`, divided
  // by the batch size; a constant zero in transpose_conv mode.
  Var regularizer(Tape& t, const ForwardOutput& out);

  // Values of the upsampler outputs from the most recent forward.
  // Throws Error before any forward.
  const std::vector<Tensor>& collect_decoder_maps() const;

  // Runs one upsampler on an arbitrary tensor of its input width.
  Tensor upsample_probe(std::size_t edge, const Tensor& x);

  std::vector<Param*> parameters();
  std::size_t parameter_count();
  std::vector<TGVParams>& tgv() { return tgv_; }
  const std::vector<ConvBlock>& blocks() const { return blocks_; }
  const std::vector<Upsampler>& upsamplers() const { return ups_; }
  std::size_t node_index(int level, int col) const;

  // Every param value plus batch-norm running statistics.
  Checkpoint to_checkpoint(const std::string& config_text);
  // Throws ShapeError listing missing / extra / mis-shaped arrays.
  void load(const Checkpoint& ck);

 private:
  Var block(Tape& t, Var x, ConvBlock& b, Mode mode);
  Var upsample(Tape& t, Var x, Upsampler& u);
  std::vector<BatchNorm*> batch_norms();

  UNetPPConfig cfg_;
  std::vector<ConvBlock> blocks_;  // indexed by node_index
  std::vector<Upsampler> ups_;     // by column, then level
  std::vector<TGVParams> tgv_;     // empty in transpose_conv mode
  Param head_w, head_b;
  std::optional<std::vector<Tensor>> last_maps_;
};

}  // namespace tgvunet
