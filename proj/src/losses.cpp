#include "tgvunet/ops.hpp"
#include "tgvunet/training.hpp"

namespace tgvunet {

Var total_loss(Tape& t, Var pred, const Tensor& target, std::span<const Var> decoder_maps, TGVParams& tgv) {
  const Var fit = ops::bce_loss(t, pred, target);
  if (decoder_maps.empty()) return fit;
  return ops::add(t, fit, ops::tgv_loss_term(t, decoder_maps, tgv));
}

}  // namespace tgvunet
