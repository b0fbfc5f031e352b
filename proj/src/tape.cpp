#include "tgvunet/tape.hpp"

namespace tgvunet {

Var Tape::constant(Tensor value) {
  nodes_.push_back({std::move(value), nullptr, false});
  return {nodes_.size() - 1};
}

Var Tape::input(Param& p) {
  Param* target = &p;
  return record(
      p.value,
      [target](Tape&, std::span<const double> g) {
        for (std::size_t i = 0; i < g.size(); ++i) target->grad[i] += g[i];
      },
      true);
}

Var Tape::record(Tensor value, Backward backward, bool requires_grad) {
  nodes_.push_back({std::move(value), std::move(backward), requires_grad});
  return {nodes_.size() - 1};
}

void Tape::backward(Var root) {
  Node& r = nodes_.at(root.id);
  if (r.value.size() != 1) throw ShapeError("backward: root must be a scalar, got " + r.value.shape().str());
  r.value.grad()[0] = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.backward || !node.value.has_grad()) continue;
    // The closure may allocate gradients of earlier nodes; those live in
    // separate buffers, so this span stays valid.
    node.backward(*this, node.value.grad());
  }
}

}  // namespace tgvunet
