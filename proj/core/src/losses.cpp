#include "rma/losses.hpp"

#include <stdexcept>

namespace rma {

Var fas_score_loss(const Var& score) { return mul_scalar(sum(score), -1.0); }

Var fas_score_loss(Tape& tape, const TapModel& fas, const Var& x) {
  return fas_score_loss(forward_with_taps(tape, fas, x, {}).output);
}

Var reference_specific_loss(const Var& h, const Tensor& h_ref) {
  return l2_norm(h - h.tape()->leaf(h_ref));
}

Var reference_specific_loss(Tape& tape, const TapModel& fas, const Var& x,
                            const Tensor& x_ref, std::size_t k) {
  const std::size_t layers[] = {k};
  const auto ref = tap_values(fas, x_ref, layers).at(k);
  return reference_specific_loss(forward_with_taps(tape, fas, x, layers).taps.at(k), ref);
}

Var rib_layer_loss(const Var& h, int alpha) {
  if (alpha != -1 && alpha != 1) {
    throw std::invalid_argument("rib_layer_loss: alpha must be -1 or +1, got " +
                                std::to_string(alpha));
  }
  return mul_scalar(mean(h), static_cast<double>(alpha));
}

Var rib_layer_loss(Tape& tape, const TapModel& fas, const Var& x, std::size_t k, int alpha) {
  const std::size_t layers[] = {k};
  return rib_layer_loss(forward_with_taps(tape, fas, x, layers).taps.at(k), alpha);
}

Var fas_multi_layer_loss(const std::map<std::size_t, Var>& taps,
                         std::span<const std::size_t> layers, const AlphaMap& alphas) {
  if (layers.empty()) throw std::invalid_argument("fas_multi_layer_loss: empty layer set");
  Var total;
  for (auto k : layers) {
    auto it = alphas.find(k);
    if (it == alphas.end()) {
      throw std::invalid_argument("fas_multi_layer_loss: no alpha resolved for layer " +
                                  std::to_string(k));
    }
    auto term = rib_layer_loss(taps.at(k), it->second);
    total = total.valid() ? total + term : term;
  }
  return total;
}

Var fas_multi_layer_loss(Tape& tape, const TapModel& fas, const Var& x,
                         std::span<const std::size_t> layers, const AlphaMap& alphas) {
  return fas_multi_layer_loss(forward_with_taps(tape, fas, x, layers).taps, layers, alphas);
}

FeatureTargets fr_target_features(const TapModel& fr, const Tensor& x_t,
                                  std::span<const std::size_t> layers) {
  Tape tape;
  auto out = forward_with_taps(tape, fr, tape.leaf(x_t), layers);
  FeatureTargets targets;
  for (auto k : layers) targets[k] = l2_normalize(flatten(out.taps.at(k))).value();
  return targets;
}

Var feature_alignment_term(const Var& h, const Tensor& target) {
  return sq_l2_norm(l2_normalize(flatten(h)) - h.tape()->leaf(target));
}

Var fr_mfa_loss(const std::map<std::size_t, Var>& taps, const FeatureTargets& targets) {
  if (targets.empty()) throw std::invalid_argument("fr_mfa_loss: empty layer set");
  Var total;
  for (const auto& [k, target] : targets) {
    auto term = feature_alignment_term(taps.at(k), target);
    total = total.valid() ? total + term : term;
  }
  return total;
}

Var fr_mfa_loss(Tape& tape, const TapModel& fr, const Var& x, const FeatureTargets& targets) {
  std::vector<std::size_t> layers;
  for (const auto& [k, t] : targets) layers.push_back(k);
  return fr_mfa_loss(forward_with_taps(tape, fr, x, layers).taps, targets);
}

Var fr_single_level_loss(Tape& tape, const TapModel& fr, const Var& x, const Tensor& x_t,
                         std::size_t r) {
  const std::size_t layers[] = {r};
  return fr_mfa_loss(tape, fr, x, fr_target_features(fr, x_t, layers));
}

Var fr_vanilla_loss(Tape& tape, const TapModel& fr, const Var& x, const Tensor& x_t) {
  return fr_single_level_loss(tape, fr, x, x_t, fr.num_layers());
}

double eval_loss(const std::function<Var(Tape&, const Var&)>& loss, const Tensor& x) {
  Tape tape;
  return loss(tape, tape.leaf(x)).value().item();
}

std::pair<double, Tensor> loss_and_grad(const std::function<Var(Tape&, const Var&)>& loss,
                                        const Tensor& x) {
  Tape tape;
  auto xv = tape.leaf(x, true);
  auto l = loss(tape, xv);
  return {l.value().item(), tape.backward(l).of(xv)};
}

}  // namespace rma
