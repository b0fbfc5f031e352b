#pragma once

// Decoder upsampling: closed-form bilinear interpolation, the second-order
// TGV energy with learnable balance weights, and the transposed-convolution
// baseline together with a parity-artifact score.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "tgvunet/tensor.hpp"

namespace tgvunet {

// g(x1, x2) = b0 + b1 x1 + b2 x2 + b3 x1 x2
struct BilinearWeights {
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0;

  double operator()(double x1, double x2) const { return b0 + b1 * x1 + b2 * x2 + b3 * x1 * x2; }
};

struct Point2 {
  double x1 = 0;
  double x2 = 0;
};

// Solves the 4x4 system [1 x1 x2 x1x2] B = f for the four sample points.
// Throws Error when the system is singular (repeated or degenerate points).
BilinearWeights solve_bilinear_weights(const std::array<Point2, 4>& coords, const std::array<double, 4>& values);

// (n, c, h, w) -> (n, c, 2h, 2w). Output pixel o samples the input at
// (o + 0.5) / 2 - 0.5 per axis, clamped to the border.
Tensor bilinear_upsample(const Tensor& input);

// Stride-2 transposed convolution, weights (c_in, c_out, k, k), output cropped
// to exactly 2h x 2w.
Tensor transpose_conv_upsample(const Tensor& input, const Tensor& weights, int stride = 2);

// Population variance of the four (row mod 2, col mod 2) class means,
// averaged over all (n, c) planes. Requires h, w >= 4.
double checkerboard_score(const Tensor& image);

// ---------------------------------------------------------------------------
// Second-order TGV

struct TGVSettings {
  double gamma = 1e-3;       // weight of the TGV energy in the loss
  double lambda = 0.0;       // weight of the sum-of-squares fidelity term
  double p1_init = 1.0;
  double p2_init = 1.0;
  int inner_steps = 10;      // unrolled gradient steps on w
  double inner_lr = 1.0;     // fraction of the 1/L stable step, in (0, 1]
  double huber_delta = 0.1;

  void validate() const;
};

double softplus(double x);
double softplus_inverse(double y);

// Learnable balance weights p1 = softplus(p1_raw), p2 = softplus(p2_raw).
struct TGVParams {
  static constexpr int order = 2;

  Param p1_raw;
  Param p2_raw;
  TGVSettings settings;

  explicit TGVParams(TGVSettings s = {}, const std::string& prefix = "tgv");

  double p1() const { return softplus(p1_raw.value[0]); }
  double p2() const { return softplus(p2_raw.value[0]); }
};

struct TGVEnergy {
  double energy = 0;
  // Final iterate of the inner solver, two components on the
  // max(h-1,1) x max(w-1,1) difference grid.
  std::vector<double> w1;
  std::vector<double> w2;
};

struct TGVEnergyGrad {
  double energy = 0;
  std::vector<double> dv;  // same layout as v
  double dp1 = 0;
  double dp2 = 0;
};

// Approximates min_w p1 sum H(|grad v - w|) + p2 sum H(|eps(w)|) by
// `inner_steps` gradient steps on w starting from grad v. H is the Huber
// function with the configured delta. v is one h x w plane.
TGVEnergy tgv2_energy(std::span<const double> v, std::size_t h, std::size_t w, double p1, double p2,
                      const TGVSettings& s);
TGVEnergy tgv2_energy(const Tensor& v, const TGVParams& params);

// Energy plus its exact derivative through the unrolled solver.
TGVEnergyGrad tgv2_energy_grad(std::span<const double> v, std::size_t h, std::size_t w, double p1, double p2,
                               const TGVSettings& s);

// gamma * sum over maps, batch and channels of tgv2_energy + lambda * sum u^2.
double tgv_loss_value(std::span<const Tensor> maps, const TGVParams& params);

}  // namespace tgvunet
