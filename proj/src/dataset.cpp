#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tgvunet/data.hpp"

namespace tgvunet {

namespace fs = std::filesystem;

void Sample::validate() const {
  if (image.shape() != mask.shape())
    throw DataError("sample '" + stem + "': image " + image.shape().str() + " and mask " + mask.shape().str() +
                    " differ");
  if (image.shape().n != 1 || image.shape().c != 1)
    throw DataError("sample '" + stem + "': expected a single plane, got " + image.shape().str());
  for (double m : mask.data())
    if (m != 0.0 && m != 1.0) throw DataError("sample '" + stem + "': mask is not binary");
}

std::string volume_from_stem(const std::string& stem) {
  const auto pos = stem.rfind('_');
  return pos == std::string::npos || pos == 0 ? stem : stem.substr(0, pos);
}

namespace {

bool is_raster(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ".png" || e == ".pgm";
}

std::map<std::string, fs::path> list_rasters(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::exists(dir)) return out;
  if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_raster(entry.path())) continue;
    const std::string stem = entry.path().stem().string();
    if (!out.emplace(stem, entry.path()).second)
      throw DataError("two files share the stem '" + stem + "' in " + dir.string());
  }
  return out;
}

struct ManifestEntry {
  std::string source;
  std::string volume_id;
};

std::map<std::string, ManifestEntry> read_manifest(const fs::path& path) {
  std::map<std::string, ManifestEntry> out;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 3 || cols[0].empty())
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'stem,source,volume_id'");
    out[cols[0]] = {cols[1], cols[2]};
  }
  return out;
}

}  // namespace

std::vector<Sample> load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  const auto images = list_rasters(root / "images");
  const auto masks = list_rasters(root / "masks");
  for (const auto& [stem, p] : masks)
    if (!images.count(stem)) throw DataError("mask " + p.string() + " has no image (stem '" + stem + "')");

  std::map<std::string, ManifestEntry> manifest;
  if (fs::exists(root / "manifest.txt")) manifest = read_manifest(root / "manifest.txt");
  for (const auto& [stem, e] : manifest)
    if (!images.count(stem)) throw DataError("manifest names stem '" + stem + "' which has no image");

  std::vector<Sample> out;
  for (const auto& [stem, ipath] : images) {
    const auto m = masks.find(stem);
    if (m == masks.end()) throw DataError("image " + ipath.string() + " has no mask (stem '" + stem + "')");
    const GrayImage gi = read_gray(ipath);
    const GrayImage gm = read_gray(m->second);
    if (gi.height != gm.height || gi.width != gm.width) {
      throw DataError("stem '" + stem + "': image is " + std::to_string(gi.height) + "x" + std::to_string(gi.width) +
                      " but mask is " + std::to_string(gm.height) + "x" + std::to_string(gm.width));
    }
    Sample s;
    s.stem = stem;
    s.image = from_gray(gi);
    s.mask = Tensor(s.image.shape());
    for (std::size_t i = 0; i < gm.pixels.size(); ++i) s.mask[i] = gm.pixels[i] >= 128 ? 1.0 : 0.0;
    const auto e = manifest.find(stem);
    if (e != manifest.end()) {
      s.source = e->second.source.empty() ? "default" : e->second.source;
      s.volume_id = e->second.volume_id.empty() ? volume_from_stem(stem) : e->second.volume_id;
    } else {
      s.volume_id = volume_from_stem(stem);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const fs::path& root, const std::vector<Sample>& samples, const std::string& extension) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::ofstream manifest(root / "manifest.txt", std::ios::trunc);
  if (!manifest) throw DataError("cannot write " + (root / "manifest.txt").string());
  for (const Sample& s : samples) {
    s.validate();
    if (s.stem.empty()) throw DataError("write_dataset: sample without a stem");
    write_gray(root / "images" / (s.stem + extension), to_gray(s.image));
    write_gray(root / "masks" / (s.stem + extension), to_gray(s.mask));
    manifest << s.stem << ',' << s.source << ',' << s.volume_id << '\n';
  }
}

Sample crop_to_size(const Sample& s, std::size_t height, std::size_t width, CropAnchor anchor) {
  const std::size_t h = s.height(), w = s.width();
  if (height > h || width > w) {
    throw ShapeError("crop_to_size: target " + std::to_string(height) + "x" + std::to_string(width) +
                     " is larger than source " + std::to_string(h) + "x" + std::to_string(w));
  }
  std::size_t top = anchor.top, left = anchor.left;
  if (anchor.center) {
    top = (h - height) / 2;
    left = (w - width) / 2;
  } else if (top + height > h || left + width > w) {
    throw ShapeError("crop_to_size: window at (" + std::to_string(top) + ", " + std::to_string(left) +
                     ") leaves the source");
  }
  Sample out = s;
  out.image = Tensor({1, 1, height, width});
  out.mask = Tensor({1, 1, height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      out.image[y * width + x] = s.image[(top + y) * w + left + x];
      out.mask[y * width + x] = s.mask[(top + y) * w + left + x];
    }
  return out;
}

void ComboSpec::validate() const {
  if (proportions.empty()) throw ConfigError("combo: no sources");
  double sum = 0;
  for (const auto& [src, q] : proportions) {
    if (!(q >= 0)) throw ConfigError("combo: proportion for '" + src + "' must be >= 0");
    sum += q;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("combo: proportions sum to " + std::to_string(sum) + ", not 1");
}

ComboSpec combo_preset(int which, std::size_t total) {
  static const double table[3][3] = {{0.8, 0.1, 0.1}, {0.6, 0.2, 0.2}, {0.5, 0.25, 0.25}};
  if (which < 1 || which > 3) throw ConfigError("combo preset must be 1, 2 or 3, got " + std::to_string(which));
  const double* q = table[which - 1];
  return {{{"tcia", q[0]}, {"five_patients", q[1]}, {"elcap", q[2]}}, total};
}

std::vector<std::size_t> combo_counts(const ComboSpec& spec) {
  spec.validate();
  const std::size_t k = spec.proportions.size();
  std::vector<std::size_t> counts(k);
  std::vector<double> rem(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double q = spec.proportions[i].second * static_cast<double>(spec.total);
    counts[i] = static_cast<std::size_t>(std::floor(q + 1e-9));
    rem[i] = q - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t j = 0; assigned < spec.total; ++j, ++assigned) ++counts[order[j % k]];
  return counts;
}

std::vector<Sample> make_combo(const std::map<std::string, std::vector<Sample>>& pools, const ComboSpec& spec,
                               std::uint64_t seed, const std::set<std::string>& exclude) {
  const auto counts = combo_counts(spec);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const std::string& src = spec.proportions[i].first;
    if (counts[i] == 0) continue;
    std::vector<const Sample*> candidates;
    const auto pool = pools.find(src);
    if (pool != pools.end())
      for (const Sample& s : pool->second)
        if (!exclude.count(s.stem)) candidates.push_back(&s);
    if (candidates.size() < counts[i]) {
      throw DataError("combo: source '" + src + "' needs " + std::to_string(counts[i]) + " samples but only " +
                      std::to_string(candidates.size()) + " are available after exclusions");
    }
    std::mt19937_64 gen(derive_seed(seed, "combo/" + src));
    std::shuffle(candidates.begin(), candidates.end(), gen);
    candidates.resize(counts[i]);
    std::sort(candidates.begin(), candidates.end(), [](const Sample* a, const Sample* b) { return a->stem < b->stem; });
    for (const Sample* s : candidates) out.push_back(*s);
  }
  return out;
}

PixelStats dataset_stats(const std::vector<Sample>& samples) {
  PixelStats st;
  double sum = 0;
  for (const Sample& s : samples) {
    for (double v : s.image.data()) sum += v;
    st.count += s.image.size();
  }
  if (st.count == 0) throw DataError("dataset_stats: no pixels");
  st.mean = sum / static_cast<double>(st.count);
  double ss = 0;
  for (const Sample& s : samples)
    for (double v : s.image.data()) ss += (v - st.mean) * (v - st.mean);
  st.std = std::sqrt(ss / static_cast<double>(st.count));
  return st;
}

PixelStats pool_stats(const std::vector<PixelStats>& parts) {
  PixelStats out;
  double sum = 0;
  for (const PixelStats& p : parts) {
    sum += p.mean * static_cast<double>(p.count);
    out.count += p.count;
  }
  if (out.count == 0) throw DataError("pool_stats: no pixels");
  out.mean = sum / static_cast<double>(out.count);
  double ss = 0;
  for (const PixelStats& p : parts)
    ss += static_cast<double>(p.count) * (p.std * p.std + (p.mean - out.mean) * (p.mean - out.mean));
  out.std = std::sqrt(ss / static_cast<double>(out.count));
  return out;
}

}  // namespace tgvunet
