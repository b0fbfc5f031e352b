#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "tgvunet/tensor.hpp"

namespace tgvunet {

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

// Reverse-mode recording of layer outputs. Each recorded op stores its output
// and a closure that, given the output gradient, accumulates gradients into
// its inputs (other tape entries or Params).
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::span<const double> grad_output)>;

  // A value no gradient flows into.
  Var constant(Tensor value);
  // A leaf bound to `p`: backward adds into p.grad. Used to differentiate
  // with respect to network inputs.
  Var input(Param& p);
  Var record(Tensor value, Backward backward, bool requires_grad = true);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  std::span<double> grad(Var v) { return nodes_.at(v.id).value.grad(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d root = 1 (root must hold a single element) and runs every
  // recorded closure in reverse order.
  void backward(Var root);

 private:
  struct Node {
    Tensor value;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

}  // namespace tgvunet
