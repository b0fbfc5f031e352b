#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tgvunet {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that violate an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Configuration values that violate a module invariant.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable / inconsistent files on disk.
class DataError : public Error {
 public:
  using Error::Error;
};

enum class Mode { train, eval };

// (batch, channel, height, width)
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense row-major rank-4 array of doubles with an optional gradient buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) { return data_[index(n, c, y, x)]; }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const { return data_[index(n, c, y, x)]; }

  // Pointer to the start of plane (n, c).
  double* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const double* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  bool has_grad() const { return !grad_.empty(); }
  // Allocates a zero gradient buffer on first use.
  std::span<double> grad();
  std::span<const double> grad() const { return grad_; }
  void zero_grad();
  void drop_grad() { grad_.clear(); }

  void fill(double v);
  bool all_finite() const;
  double item() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

// A learnable tensor with gradient and Adam moments.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;
  std::int64_t step_count = 0;

  Param() = default;
  Param(std::string name, Tensor init);

  std::size_t size() const { return value.size(); }
  void zero_grad() { grad.fill(0.0); }
};

// Throws ShapeError unless a == b, naming the context.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

// Stable 64-bit FNV-1a over a string, used to derive per-consumer seeds.
std::uint64_t hash_name(std::string_view name);

// Derives an independent seed for a named consumer of randomness.
std::uint64_t derive_seed(std::uint64_t root, std::string_view consumer);

}  // namespace tgvunet
