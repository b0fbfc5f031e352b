#include "tgvunet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace tgvunet {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
  }
}

std::span<double> Tensor::grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() {
  if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_.str());
  return data_[0];
}

Param::Param(std::string name_, Tensor init)
    : name(std::move(name_)),
      value(std::move(init)),
      grad(value.shape()),
      m(value.shape()),
      v(value.shape()) {}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a == b) return;
  std::string msg = std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str();
  const char* dims[] = {"n", "c", "h", "w"};
  const std::size_t av[] = {a.n, a.c, a.h, a.w};
  const std::size_t bv[] = {b.n, b.c, b.h, b.w};
  for (int i = 0; i < 4; ++i) {
    if (av[i] != bv[i]) msg += std::string(" [") + dims[i] + ": " + std::to_string(av[i]) + " != " + std::to_string(bv[i]) + "]";
  }
  throw ShapeError(msg);
}

std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view consumer) {
  const std::uint64_t h = hash_name(consumer);
  std::seed_seq seq{static_cast<std::uint32_t>(root), static_cast<std::uint32_t>(root >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace tgvunet
