#pragma once

// Tensor-level compute kernels.
//
// Every kernel exists twice: `serial::` is a plain-loop reference kept for
// testing, `parallel::` is the OpenMP version used by the layers. Parallel
// kernels give each output plane (or weight slice) to exactly one iteration,
// so their results do not depend on the thread count.

#include <cstdint>
#include <vector>

#include "tgvunet/tensor.hpp"

namespace tgvunet::kernels {

struct Conv2dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

struct ConvTransposeGrads {
  Tensor input;
  Tensor weight;
};

struct PoolResult {
  Tensor output;
  // Flat in-plane index of the chosen input element for every output element.
  std::vector<std::uint32_t> argmax;
};

struct BatchNormStats {
  Tensor output;
  Tensor normalized;            // xhat, same shape as input
  std::vector<double> mean;     // per channel
  std::vector<double> var;      // biased, per channel
  std::vector<double> inv_std;  // 1 / sqrt(var + eps)
};

struct BatchNormGrads {
  Tensor input;
  std::vector<double> scale;
  std::vector<double> shift;
};

// Shape validation shared by both implementations.
Shape conv2d_output_shape(const Shape& input, const Shape& weight, std::size_t bias_len, int padding);
Shape conv_transpose2d_output_shape(const Shape& input, const Shape& weight, int stride);
// Rows/cols removed from the start of the raw transposed output.
std::size_t conv_transpose2d_crop(std::size_t kernel, int stride);

#define TGVUNET_KERNEL_DECLS                                                                               \
  Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, int padding);       \
  Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,         \
                              int padding);                                                                \
  Tensor conv_transpose2d_forward(const Tensor& input, const Tensor& weight, int stride);                   \
  ConvTransposeGrads conv_transpose2d_backward(const Tensor& input, const Tensor& weight,                  \
                                               const Tensor& grad_output, int stride);                     \
  Tensor bilinear_upsample2x(const Tensor& input);                                                         \
  Tensor bilinear_upsample2x_adjoint(const Tensor& grad_output, const Shape& input_shape);                  \
  PoolResult max_pool2_forward(const Tensor& input);                                                       \
  Tensor max_pool2_backward(const Tensor& grad_output, const std::vector<std::uint32_t>& argmax,           \
                            const Shape& input_shape);                                                     \
  BatchNormStats batch_norm_train_forward(const Tensor& input, const std::vector<double>& scale,           \
                                          const std::vector<double>& shift, double eps);                   \
  BatchNormGrads batch_norm_train_backward(const BatchNormStats& stats, const std::vector<double>& scale,  \
                                           const Tensor& grad_output);

namespace serial {
TGVUNET_KERNEL_DECLS
}  // namespace serial

namespace parallel {
TGVUNET_KERNEL_DECLS
}  // namespace parallel

#undef TGVUNET_KERNEL_DECLS

// The layers call these.
using parallel::batch_norm_train_backward;
using parallel::batch_norm_train_forward;
using parallel::bilinear_upsample2x;
using parallel::bilinear_upsample2x_adjoint;
using parallel::conv2d_backward;
using parallel::conv2d_forward;
using parallel::conv_transpose2d_backward;
using parallel::conv_transpose2d_forward;
using parallel::max_pool2_backward;
using parallel::max_pool2_forward;

// Half-pixel-centre source taps for one axis of a 2x upsample: output index o
// reads lo/hi with weight t on hi. Clamped at the borders.
struct BilinearTap {
  std::size_t lo;
  std::size_t hi;
  double t;
};
std::vector<BilinearTap> bilinear_taps(std::size_t in_size);

}  // namespace tgvunet::kernels
