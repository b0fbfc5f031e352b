#pragma once

// Differentiable layers recorded on a Tape. Each op computes its forward
// result with the kernels in kernels.hpp and registers an explicit backward.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tgvunet/tape.hpp"
#include "tgvunet/tensor.hpp"
#include "tgvunet/upsampling.hpp"

namespace tgvunet {

struct BatchNorm {
  Param scale;
  Param shift;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool initialized = false;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t channels);
  std::size_t channels() const { return running_mean.size(); }
};

namespace ops {

// weights (c_out, c_in, k, k), bias (c_out)
Var conv2d(Tape& t, Var x, Param& weights, Param& bias, int padding);
// Bias-free variant, used in front of batch norm (which cancels any bias).
Var conv2d(Tape& t, Var x, Param& weights, int padding);
Var relu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
// Train mode normalises with batch statistics and updates the running
// averages; eval mode uses the running averages and throws before any
// train-mode call.
Var batch_norm(Tape& t, Var x, BatchNorm& bn, Mode mode);
Var max_pool2(Tape& t, Var x);
// Inverted dropout; identity in eval mode or at rate 0.
Var dropout(Tape& t, Var x, double rate, Mode mode, std::uint64_t seed);
Var concat_channels(Tape& t, std::span<const Var> xs);
Var bilinear_upsample(Tape& t, Var x);
// weights (c_in, c_out, k, k)
Var transpose_conv_upsample(Tape& t, Var x, Param& weights, int stride = 2);

Var sum(Tape& t, Var x);
// sum(weights * x), weights a constant of x's shape.
Var weighted_sum(Tape& t, Var x, const Tensor& weights);
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, double k);
// 0.5 * sum (x - target)^2
Var half_squared_error(Tape& t, Var x, const Tensor& target);
// Mean binary cross-entropy; predictions are clamped to [1e-7, 1 - 1e-7].
Var bce_loss(Tape& t, Var pred, const Tensor& target);
// gamma * sum tgv2_energy over every (map, n, c) plane + lambda * sum u^2;
// differentiable w.r.t. the maps and params.p1_raw / p2_raw.
Var tgv_loss_term(Tape& t, std::span<const Var> maps, TGVParams& params);

}  // namespace ops
}  // namespace tgvunet
