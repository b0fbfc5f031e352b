#pragma once

// Samples, raster I/O, dataset directories, COMBO test-set assembly,
// augmentation, statistics and the synthetic blob generator.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "tgvunet/tensor.hpp"

namespace tgvunet {

// image in [0, 1] and mask in {0, 1}, both (1, 1, h, w).
struct Sample {
  Tensor image;
  Tensor mask;
  std::string stem;
  std::string source = "default";
  std::string volume_id;

  std::size_t height() const { return image.shape().h; }
  std::size_t width() const { return image.shape().w; }
  // Throws DataError when the shapes differ or the mask is not binary.
  void validate() const;
};

// "<prefix>_<n>" -> "<prefix>"; a stem without '_' is its own volume.
std::string volume_from_stem(const std::string& stem);

// ---------------------------------------------------------------------------
// 8-bit grayscale rasters (binary PGM "P5" or PNG)

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

GrayImage read_gray(const std::filesystem::path& path);
// Format chosen by extension (.png or .pgm).
void write_gray(const std::filesystem::path& path, const GrayImage& img);

// Interleaved 8-bit RGB, .png or binary .ppm.
void write_rgb(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& rgb);

// [0, 1] plane -> rounded 8-bit values.
GrayImage to_gray(const Tensor& plane);
Tensor from_gray(const GrayImage& img);

// ---------------------------------------------------------------------------
// Dataset directories: <root>/images/<stem>.{png,pgm}, <root>/masks/<stem>.{png,pgm}
// and an optional <root>/manifest.txt with "stem,source,volume_id" lines.

// Sorted by stem; masks thresholded at 128. Throws DataError naming the file
// or stem on any inconsistency.
std::vector<Sample> load_dataset(const std::filesystem::path& root);
void write_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples,
                   const std::string& extension = ".pgm");

struct CropAnchor {
  bool center = true;
  std::size_t top = 0;
  std::size_t left = 0;
};

Sample crop_to_size(const Sample& s, std::size_t height, std::size_t width, CropAnchor anchor = {});

// ---------------------------------------------------------------------------
// COMBO test-set assembly

struct ComboSpec {
  std::vector<std::pair<std::string, double>> proportions;
  std::size_t total = 0;

  void validate() const;
};

// COMBO_1 80/10/10, COMBO_2 60/20/20, COMBO_3 50/25/25 over
// tcia / five_patients / elcap.
ComboSpec combo_preset(int which, std::size_t total);

// Largest-remainder rounding of proportions * total; sums to total exactly.
// Ties go to the earlier source.
std::vector<std::size_t> combo_counts(const ComboSpec& spec);

// Draws combo_counts samples without replacement from each source pool,
// skipping stems in `exclude`. Throws DataError naming a short pool.
std::vector<Sample> make_combo(const std::map<std::string, std::vector<Sample>>& pools, const ComboSpec& spec,
                               std::uint64_t seed, const std::set<std::string>& exclude = {});

// ---------------------------------------------------------------------------
// Augmentation (training only)

struct AugmentSpec {
  double crop_p = 0;
  double crop_min_scale = 0.8;  // side fraction kept before resizing back
  double affine_p = 0;
  double max_rotation_deg = 15;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double hflip_p = 0;
  double vflip_p = 0;
  double noise_p = 0;
  double noise_sigma = 0.05;
  double blur_p = 0;
  double blur_sigma = 0.8;
  double brightness_p = 0;
  double brightness_delta = 0.1;
  double contrast_p = 0;
  double contrast_range = 0.2;  // factor in [1 - r, 1 + r]

  void validate() const;
  bool any() const;
};

// Applies each enabled transform with its probability in a fixed order
// (crop, affine, hflip, vflip, noise, blur, brightness, contrast).
// Geometric transforms move image and mask together (mask by nearest
// neighbour); the image is clipped to [0, 1].
Sample augment(const Sample& s, const AugmentSpec& spec, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Statistics

struct PixelStats {
  double mean = 0;
  double std = 0;
  std::size_t count = 0;
};

// Population moments of all image pixels. Throws DataError when empty.
PixelStats dataset_stats(const std::vector<Sample>& samples);
// Pools per-group moments into one.
PixelStats pool_stats(const std::vector<PixelStats>& parts);

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthParams {
  int min_blobs = 1;
  int max_blobs = 4;
  double min_radius = 0.08;  // fraction of the image side
  double max_radius = 0.18;
  double blob_intensity = 0.75;
  double background = 0.25;
  double texture = 0.06;
  double noise = 0.02;
  double tiny_blob_p = 0.3;  // chance of one extra small low-contrast blob
  int slices_per_volume = 4;
  std::string source = "synthetic";
};

// Soft-edged elliptical blobs over a textured background; masks mark blob
// interiors and always have foreground fraction in (0, 0.5).
std::vector<Sample> synth_blobs(std::size_t count, std::size_t size, std::uint64_t seed,
                                const SynthParams& p = {});

}  // namespace tgvunet
