#include <algorithm>
#include <cmath>
#include <numbers>

#include "tgvunet/data.hpp"

namespace tgvunet {

void AugmentSpec::validate() const {
  for (double p : {crop_p, affine_p, hflip_p, vflip_p, noise_p, blur_p, brightness_p, contrast_p})
    if (!(p >= 0 && p <= 1)) throw ConfigError("augment: probabilities must be in [0, 1]");
  if (!(crop_min_scale > 0 && crop_min_scale <= 1)) throw ConfigError("augment: crop_min_scale must be in (0, 1]");
  if (!(min_scale > 0 && min_scale <= max_scale)) throw ConfigError("augment: need 0 < min_scale <= max_scale");
  if (!(max_rotation_deg >= 0)) throw ConfigError("augment: max_rotation_deg must be >= 0");
  if (!(noise_sigma >= 0) || !(blur_sigma > 0) || !(brightness_delta >= 0))
    throw ConfigError("augment: noise_sigma, brightness_delta must be >= 0 and blur_sigma > 0");
  if (!(contrast_range >= 0 && contrast_range < 1)) throw ConfigError("augment: contrast_range must be in [0, 1)");
}

bool AugmentSpec::any() const {
  return crop_p > 0 || affine_p > 0 || hflip_p > 0 || vflip_p > 0 || noise_p > 0 || blur_p > 0 ||
         brightness_p > 0 || contrast_p > 0;
}

namespace {

struct Plane {
  std::size_t h, w;
  double* d;
  double at_clamped(long y, long x) const {
    y = std::clamp<long>(y, 0, static_cast<long>(h) - 1);
    x = std::clamp<long>(x, 0, static_cast<long>(w) - 1);
    return d[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  }
  double bilinear(double y, double x) const {
    const double fy = std::floor(y), fx = std::floor(x);
    const double ty = y - fy, tx = x - fx;
    const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
    const double top = at_clamped(y0, x0) + tx * (at_clamped(y0, x0 + 1) - at_clamped(y0, x0));
    const double bot = at_clamped(y0 + 1, x0) + tx * (at_clamped(y0 + 1, x0 + 1) - at_clamped(y0 + 1, x0));
    return top + ty * (bot - top);
  }
  // Outside the plane reads as 0.
  double nearest(double y, double x) const {
    const long yi = std::lround(y), xi = std::lround(x);
    if (yi < 0 || xi < 0 || yi >= static_cast<long>(h) || xi >= static_cast<long>(w)) return 0.0;
    return d[static_cast<std::size_t>(yi) * w + static_cast<std::size_t>(xi)];
  }
};

// out(y, x) = in(src(y, x)); image bilinear, mask nearest.
template <typename Map>
void resample(Sample& s, Map src) {
  const std::size_t h = s.height(), w = s.width();
  Tensor img = s.image, msk = s.mask;
  const Plane pi{h, w, img.data().data()}, pm{h, w, msk.data().data()};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const auto [sy, sx] = src(static_cast<double>(y), static_cast<double>(x));
      s.image[y * w + x] = pi.bilinear(sy, sx);
      s.mask[y * w + x] = pm.nearest(sy, sx);
    }
}

void flip(Tensor& t, bool horizontal) {
  const std::size_t h = t.shape().h, w = t.shape().w;
  for (std::size_t y = 0; y < h; ++y) {
    double* row = t.data().data() + y * w;
    if (horizontal) std::reverse(row, row + w);
  }
  if (!horizontal)
    for (std::size_t y = 0; y < h / 2; ++y)
      std::swap_ranges(t.data().data() + y * w, t.data().data() + (y + 1) * w, t.data().data() + (h - 1 - y) * w);
}

void gaussian_blur(Tensor& t, double sigma) {
  const std::size_t h = t.shape().h, w = t.shape().w;
  const long r = static_cast<long>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double norm = 0;
  for (long i = -r; i <= r; ++i) norm += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= norm;
  Tensor tmp = t;
  const Plane src{h, w, tmp.data().data()};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0;
      for (long i = -r; i <= r; ++i)
        acc += k[static_cast<std::size_t>(i + r)] * src.at_clamped(static_cast<long>(y), static_cast<long>(x) + i);
      t[y * w + x] = acc;
    }
  Tensor tmp2 = t;
  const Plane src2{h, w, tmp2.data().data()};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0;
      for (long i = -r; i <= r; ++i)
        acc += k[static_cast<std::size_t>(i + r)] * src2.at_clamped(static_cast<long>(y) + i, static_cast<long>(x));
      t[y * w + x] = acc;
    }
}

}  // namespace

Sample augment(const Sample& in, const AugmentSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  Sample s = in;
  const std::size_t h = s.height(), w = s.width();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto fire = [&](double p) { return p > 0 && u01(rng) < p; };

  if (fire(spec.crop_p)) {
    const double k = spec.crop_min_scale + (1 - spec.crop_min_scale) * u01(rng);
    const double ch = k * static_cast<double>(h), cw = k * static_cast<double>(w);
    const double top = (static_cast<double>(h) - ch) * u01(rng);
    const double left = (static_cast<double>(w) - cw) * u01(rng);
    resample(s, [&](double y, double x) {
      return std::pair{top + (y + 0.5) * k - 0.5, left + (x + 0.5) * k - 0.5};
    });
  }
  if (fire(spec.affine_p)) {
    const double theta = (2 * u01(rng) - 1) * spec.max_rotation_deg * std::numbers::pi / 180.0;
    const double scale = spec.min_scale + (spec.max_scale - spec.min_scale) * u01(rng);
    const double cy = (static_cast<double>(h) - 1) / 2, cx = (static_cast<double>(w) - 1) / 2;
    const double c = std::cos(theta) / scale, sn = std::sin(theta) / scale;
    resample(s, [&](double y, double x) {
      const double dy = y - cy, dx = x - cx;
      return std::pair{cy + c * dy - sn * dx, cx + sn * dy + c * dx};
    });
  }
  if (fire(spec.hflip_p)) {
    flip(s.image, true);
    flip(s.mask, true);
  }
  if (fire(spec.vflip_p)) {
    flip(s.image, false);
    flip(s.mask, false);
  }
  if (fire(spec.noise_p)) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (double& v : s.image.data()) v += noise(rng);
  }
  if (fire(spec.blur_p)) gaussian_blur(s.image, spec.blur_sigma);
  if (fire(spec.brightness_p)) {
    const double delta = (2 * u01(rng) - 1) * spec.brightness_delta;
    for (double& v : s.image.data()) v += delta;
  }
  if (fire(spec.contrast_p)) {
    const double f = 1 + (2 * u01(rng) - 1) * spec.contrast_range;
    double mean = 0;
    for (double v : s.image.data()) mean += v;
    mean /= static_cast<double>(s.image.size());
    for (double& v : s.image.data()) v = mean + f * (v - mean);
  }
  for (double& v : s.image.data()) v = std::clamp(v, 0.0, 1.0);
  return s;
}

}  // namespace tgvunet
