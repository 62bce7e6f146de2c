#pragma once

// Attack losses. All of them are losses to minimize with respect to the
// adversarial image. Each loss has a Var form that works on activations
// already recorded on a tape (so one forward pass can feed several losses)
// and a model-level form that runs the forward pass itself.

#include <functional>
#include <map>
#include <span>
#include <vector>

#include "rma/model.hpp"

namespace rma {

/// Layer index -> chosen sign in {-1, +1}.
using AlphaMap = std::map<std::size_t, int>;

/// Unit-normalized flattened features of a fixed image, keyed by layer.
using FeatureTargets = std::map<std::size_t, Tensor>;

/// -score, where `score` is the pre-sigmoid FAS logit.
Var fas_score_loss(const Var& score);
Var fas_score_loss(Tape& tape, const TapModel& fas, const Var& x);

/// ||h - h_ref||_2 for the layer activations of the adversarial and the
/// reference image.
Var reference_specific_loss(const Var& h, const Tensor& h_ref);
Var reference_specific_loss(Tape& tape, const TapModel& fas, const Var& x,
                            const Tensor& x_ref, std::size_t k);

/// alpha * mean(flatten(h)). Throws std::invalid_argument unless alpha is -1 or +1.
Var rib_layer_loss(const Var& h, int alpha);
Var rib_layer_loss(Tape& tape, const TapModel& fas, const Var& x, std::size_t k, int alpha);

/// Sum over `layers` of rib_layer_loss with the sign from `alphas`. Throws
/// std::invalid_argument when a layer has no sign.
Var fas_multi_layer_loss(const std::map<std::size_t, Var>& taps,
                         std::span<const std::size_t> layers, const AlphaMap& alphas);
Var fas_multi_layer_loss(Tape& tape, const TapModel& fas, const Var& x,
                         std::span<const std::size_t> layers, const AlphaMap& alphas);

/// Normalized flattened activations of `x_t` at each layer, computed once
/// per pair.
FeatureTargets fr_target_features(const TapModel& fr, const Tensor& x_t,
                                  std::span<const std::size_t> layers);

/// ||l2_normalize(flatten(h)) - target||^2.
Var feature_alignment_term(const Var& h, const Tensor& target);

/// Sum of feature_alignment_term over every layer in `targets`. Throws
/// std::invalid_argument when `targets` is empty.
Var fr_mfa_loss(const std::map<std::size_t, Var>& taps, const FeatureTargets& targets);
Var fr_mfa_loss(Tape& tape, const TapModel& fr, const Var& x, const FeatureTargets& targets);

/// Single-layer alignment at layer r.
Var fr_single_level_loss(Tape& tape, const TapModel& fr, const Var& x, const Tensor& x_t,
                         std::size_t r);

/// Alignment of the final embeddings; equals 2 - 2 cos(F(x), F(x_t)).
Var fr_vanilla_loss(Tape& tape, const TapModel& fr, const Var& x, const Tensor& x_t);

/// Value-only helpers on a fresh tape.
double eval_loss(const std::function<Var(Tape&, const Var&)>& loss, const Tensor& x);
/// Value and gradient with respect to x.
std::pair<double, Tensor> loss_and_grad(const std::function<Var(Tape&, const Var&)>& loss,
                                        const Tensor& x);

}  // namespace rma
