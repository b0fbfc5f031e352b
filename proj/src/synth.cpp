#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "tgvunet/data.hpp"

namespace tgvunet {

namespace {

struct Blob {
  double cy, cx, ry, rx, angle, contrast;
};

void draw(Tensor& image, Tensor& mask, const Blob& b, std::size_t size) {
  const double c = std::cos(b.angle), s = std::sin(b.angle);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) - b.cy, dx = static_cast<double>(x) - b.cx;
      const double u = (c * dx + s * dy) / b.rx, v = (-s * dx + c * dy) / b.ry;
      const double d = std::sqrt(u * u + v * v);
      // soft edge: half contrast on the boundary d = 1
      const double soft = 1.0 / (1.0 + std::exp(-6.0 * (1.0 - d)));
      image[y * size + x] += b.contrast * soft;
      if (d <= 1.0) mask[y * size + x] = 1.0;
    }
}

}  // namespace

std::vector<Sample> synth_blobs(std::size_t count, std::size_t size, std::uint64_t seed, const SynthParams& p) {
  if (count > 0 && size < 8) throw ConfigError("synth_blobs: size must be >= 8");
  if (p.min_blobs < 1 || p.max_blobs < p.min_blobs) throw ConfigError("synth_blobs: need 1 <= min_blobs <= max_blobs");
  if (!(p.min_radius > 0 && p.min_radius <= p.max_radius && p.max_radius < 0.5))
    throw ConfigError("synth_blobs: need 0 < min_radius <= max_radius < 0.5");
  if (p.slices_per_volume < 1) throw ConfigError("synth_blobs: slices_per_volume must be >= 1");

  std::vector<Sample> out;
  const double n = static_cast<double>(size);
  for (std::size_t k = 0; k < count; ++k) {
    std::mt19937_64 gen(derive_seed(seed, "synth/" + std::to_string(k)));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Sample smp;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) throw Error("synth_blobs: could not meet the foreground constraint");
      Tensor image({1, 1, size, size}, p.background);
      Tensor mask({1, 1, size, size});

      // low-frequency texture
      for (int wave = 0; wave < 3; ++wave) {
        const double fy = (0.5 + 2.5 * u01(gen)) * 2 * std::numbers::pi / n;
        const double fx = (0.5 + 2.5 * u01(gen)) * 2 * std::numbers::pi / n;
        const double ph = 2 * std::numbers::pi * u01(gen);
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x)
            image[y * size + x] += p.texture / 3 * std::sin(fy * static_cast<double>(y) + fx * static_cast<double>(x) + ph);
      }

      std::uniform_int_distribution<int> nblobs(p.min_blobs, p.max_blobs);
      const int nb = nblobs(gen);
      auto random_blob = [&](double rmin, double rmax, double contrast) {
        Blob b;
        b.ry = (rmin + (rmax - rmin) * u01(gen)) * n;
        b.rx = (rmin + (rmax - rmin) * u01(gen)) * n;
        const double margin = std::max(b.ry, b.rx);
        b.cy = margin + (n - 1 - 2 * margin) * u01(gen);
        b.cx = margin + (n - 1 - 2 * margin) * u01(gen);
        b.angle = std::numbers::pi * u01(gen);
        b.contrast = contrast;
        return b;
      };
      for (int b = 0; b < nb; ++b)
        draw(image, mask, random_blob(p.min_radius, p.max_radius, p.blob_intensity - p.background), size);
      if (u01(gen) < p.tiny_blob_p) {
        const double r = std::max(p.min_radius * 0.5, 1.5 / n);
        draw(image, mask, random_blob(r, r * 1.3, 0.5 * (p.blob_intensity - p.background)), size);
      }

      std::normal_distribution<double> noise(0.0, p.noise);
      for (double& v : image.data()) v = std::clamp(v + (p.noise > 0 ? noise(gen) : 0.0), 0.0, 1.0);

      double fg = 0;
      for (double m : mask.data()) fg += m;
      fg /= static_cast<double>(mask.size());
      if (fg > 0 && fg < 0.5) {
        smp.image = std::move(image);
        smp.mask = std::move(mask);
        break;
      }
    }
    const std::size_t vol = k / static_cast<std::size_t>(p.slices_per_volume);
    const std::size_t slice = k % static_cast<std::size_t>(p.slices_per_volume);
    char num[48];
    std::snprintf(num, sizeof(num), "%03zu_%03zu", vol, slice);
    smp.stem = p.source + num;
    smp.source = p.source;
    smp.volume_id = volume_from_stem(smp.stem);
    out.push_back(std::move(smp));
  }
  return out;
}

}  // namespace tgvunet
