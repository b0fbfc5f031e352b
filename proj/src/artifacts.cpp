#include "tgvunet/upsampling.hpp"

namespace tgvunet {

double checkerboard_score(const Tensor& image) {
  const Shape& s = image.shape();
  if (s.h < 4 || s.w < 4) throw ShapeError("checkerboard_score: needs h, w >= 4, got " + s.str());
  double total = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* p = image.plane(n, c);
      // Means are accumulated as offsets from the first pixel so a constant
      // plane yields four bit-identical means.
      const double ref = p[0];
      double sum[4] = {0, 0, 0, 0};
      double count[4] = {0, 0, 0, 0};
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          const std::size_t k = (y % 2) * 2 + (x % 2);
          sum[k] += p[y * s.w + x] - ref;
          count[k] += 1;
        }
      double mean[4];
      for (int k = 0; k < 4; ++k) mean[k] = sum[k] / count[k];
      // Population variance of four values via pairwise differences.
      double acc = 0;
      for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) acc += (mean[i] - mean[j]) * (mean[i] - mean[j]);
      total += acc / 16.0;
    }
  return total / static_cast<double>(s.n * s.c);
}

}  // namespace tgvunet
