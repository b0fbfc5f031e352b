#include <algorithm>
#include <cmath>
#include <utility>

#include "tgvunet/kernels.hpp"
#include "tgvunet/upsampling.hpp"

namespace tgvunet {

BilinearWeights solve_bilinear_weights(const std::array<Point2, 4>& coords, const std::array<double, 4>& values) {
  double a[4][5];
  double scale = 0;
  for (int r = 0; r < 4; ++r) {
    const auto [x1, x2] = coords[r];
    a[r][0] = 1.0;
    a[r][1] = x1;
    a[r][2] = x2;
    a[r][3] = x1 * x2;
    a[r][4] = values[r];
    for (int c = 0; c < 4; ++c) scale = std::max(scale, std::abs(a[r][c]));
  }
  // Gaussian elimination with partial pivoting.
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) <= 1e-12 * scale) {
      throw Error("solve_bilinear_weights: singular system (points are repeated or do not span a bilinear patch)");
    }
    if (piv != col)
      for (int c = 0; c < 5; ++c) std::swap(a[col][c], a[piv][c]);
    for (int r = col + 1; r < 4; ++r) {
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 5; ++c) a[r][c] -= f * a[col][c];
    }
  }
  double b[4];
  for (int r = 3; r >= 0; --r) {
    double acc = a[r][4];
    for (int c = r + 1; c < 4; ++c) acc -= a[r][c] * b[c];
    b[r] = acc / a[r][r];
  }
  return {b[0], b[1], b[2], b[3]};
}

Tensor bilinear_upsample(const Tensor& input) {
  if (input.empty()) throw ShapeError("bilinear_upsample: empty tensor " + input.shape().str());
  return kernels::bilinear_upsample2x(input);
}

Tensor transpose_conv_upsample(const Tensor& input, const Tensor& weights, int stride) {
  return kernels::conv_transpose2d_forward(input, weights, stride);
}

}  // namespace tgvunet
