#pragma once

// Central finite-difference verification of tape gradients.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tgvunet/tape.hpp"
#include "tgvunet/tensor.hpp"

namespace tgvunet {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
};

struct ParamCheck {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0;
  double tolerance = 0;
  bool passed = false;
};

// Records a scalar loss on the tape. It must be a pure function of the
// Params' values (fixed dropout seeds, etc.) since it is re-run for every
// perturbation.
using LossBuilder = std::function<Var(Tape&)>;

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// Compares the tape gradient of every element of every param with
// (L(x + h) - L(x - h)) / 2h. Throws Error if the loss is not finite.
GradCheckReport grad_check(const LossBuilder& loss, const std::vector<Param*>& params,
                           const GradCheckOptions& opt = {});

struct BatteryOptions {
  // Replaces every per-case tolerance when set.
  std::optional<double> tolerance;
  // Test fixture: routes the conv2d case through an op whose backward
  // doubles the gradient, so the battery must fail.
  bool corrupt_backward = false;
  std::uint64_t seed = 7;
};

struct BatteryResult {
  std::string name;
  std::size_t elements = 0;
  double tolerance = 0;
  double max_rel_error = 0;
  bool passed = false;
  double seconds = 0;
};

// Every differentiable primitive, the TGV term (with p1/p2) and depth-2
// end-to-end networks in both upsampling modes.
std::vector<BatteryResult> run_gradcheck_battery(const BatteryOptions& opt = {});

}  // namespace tgvunet
