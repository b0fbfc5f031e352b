#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tgvunet/data.hpp"

namespace tgvunet {

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string magic = pgm_token(in);
  if (magic != "P5" && magic != "P2") throw DataError(path.string() + ": not a PGM file (magic '" + magic + "')");
  GrayImage img;
  std::size_t maxval = 0;
  try {
    img.width = std::stoul(pgm_token(in));
    img.height = std::stoul(pgm_token(in));
    maxval = std::stoul(pgm_token(in));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PGM header");
  }
  if (maxval == 0 || maxval > 255) throw DataError(path.string() + ": only 8-bit PGM is supported");
  img.pixels.resize(img.width * img.height);
  if (magic == "P5") {
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) throw DataError(path.string() + ": truncated PGM data");
  } else {
    for (auto& p : img.pixels) {
      int v;
      if (!(in >> v) || v < 0 || v > static_cast<int>(maxval)) throw DataError(path.string() + ": bad PGM value");
      p = static_cast<std::uint8_t>(v);
    }
  }
  if (maxval != 255)
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::lround(p * 255.0 / static_cast<double>(maxval)));
  return img;
}

GrayImage read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw DataError(path.string() + ": " + png.message);
  png.format = PNG_FORMAT_GRAY;
  GrayImage img;
  img.width = png.width;
  img.height = png.height;
  img.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw DataError(path.string() + ": " + msg);
  }
  return img;
}

}  // namespace

GrayImage read_gray(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw DataError("cannot open " + path.string());
  const std::string e = lower_ext(path);
  if (e == ".png") return read_png(path);
  if (e == ".pgm") return read_pgm(path);
  throw DataError(path.string() + ": unsupported extension (expected .png or .pgm)");
}

void write_gray(const std::filesystem::path& path, const GrayImage& img) {
  if (img.pixels.size() != img.width * img.height) throw ShapeError("write_gray: pixel count does not match size");
  const std::string e = lower_ext(path);
  if (e == ".png") {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width);
    png.height = static_cast<png_uint_32>(img.height);
    png.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr))
      throw DataError(path.string() + ": " + png.message);
    return;
  }
  if (e != ".pgm") throw DataError(path.string() + ": unsupported extension (expected .png or .pgm)");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void write_rgb(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != 3 * height * width) throw ShapeError("write_rgb: pixel count does not match size");
  const std::string e = lower_ext(path);
  if (e == ".png") {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(width);
    png.height = static_cast<png_uint_32>(height);
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.c_str(), 0, rgb.data(), 0, nullptr))
      throw DataError(path.string() + ": " + png.message);
    return;
  }
  if (e != ".ppm") throw DataError(path.string() + ": unsupported extension (expected .png or .ppm)");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

GrayImage to_gray(const Tensor& plane) {
  const Shape& s = plane.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("to_gray: expected a single plane, got " + s.str());
  GrayImage img{s.h, s.w, std::vector<std::uint8_t>(s.plane())};
  for (std::size_t i = 0; i < s.plane(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(plane[i], 0.0, 1.0) * 255.0));
  return img;
}

Tensor from_gray(const GrayImage& img) {
  Tensor t({1, 1, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] / 255.0;
  return t;
}

}  // namespace tgvunet
