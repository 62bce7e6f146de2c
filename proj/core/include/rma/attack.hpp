#pragma once

// Projected sign-step attacks against an FR surrogate F and an FAS
// surrogate G: the FR baselines (embedding / single-layer / multi-level
// alignment), the FAS baselines (score, reference-specific intermediate
// loss, reference-free intermediate biasing with a Prime stage) and the
// joint attacks (plain sum and loss-reduction-balanced).

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rma/losses.hpp"
#include "rma/model.hpp"

namespace rma {

enum class Method {
  kFim,            // FR: final embedding alignment
  kFimMfa,         // FR: multi-level alignment
  kMfaRib,         // joint, unweighted sum of the FR and FAS gradients
  kRma,            // joint, balanced by loss reduction
  kVanillaFas,     // FAS: negated score
  kRsFas,          // FAS: intermediate distance to a reference live image
  kRibOnly,        // FAS: reference-free intermediate biasing
  kSingleLevelFr,  // FR: alignment at one intermediate layer
};

const char* method_name(Method m);
/// Throws std::invalid_argument listing the valid names.
Method parse_method(const std::string& name);
const std::vector<Method>& all_methods();
bool uses_fr(Method m);
bool uses_fas(Method m);
bool uses_prime(Method m);

struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double step = 1.0 / 255.0;
  std::size_t iters = 50;
  std::size_t prime_iters = 10;
  double eps_stab = 1e-8;
  /// Empty means the model's default layer set.
  std::vector<std::size_t> fr_layers;
  std::vector<std::size_t> fas_layers;
  /// Layer of the reference-specific loss; defaults to the deepest
  /// non-final layer of the FAS set.
  std::optional<std::size_t> rs_layer;
  /// Layer of the single-level FR loss; defaults to the deepest non-final
  /// layer of the FR set.
  std::optional<std::size_t> single_level_layer;
  std::uint64_t seed = 0;
  /// Replaces the balanced weights of the joint attack by constants.
  std::optional<std::pair<double, double>> fixed_weights;

  /// Throws std::invalid_argument on a violated range.
  void validate() const;
};

/// Layer sets and single layers after defaults are applied.
struct ResolvedLayers {
  std::vector<std::size_t> fr;
  std::vector<std::size_t> fas;
  std::size_t rs = 0;
  std::size_t single_level = 0;
};

/// Only the sides used by `method` are resolved and validated.
ResolvedLayers resolve_layers(const AttackConfig& config, const TapModel& fr,
                              const TapModel& fas, Method method);

struct AttackResult {
  Tensor x_adv;
  /// One entry per iteration, measured at the iterate before its update.
  /// A trace is empty when the method does not use that side.
  std::vector<double> fr_loss_trace;
  std::vector<double> fas_loss_trace;
  /// Effective weights on the FR and FAS gradients per iteration.
  std::vector<double> fr_weight_trace;
  std::vector<double> fas_weight_trace;
  AlphaMap alphas;
  /// Losses at the returned image (NaN when the side is unused).
  double final_fr_loss = 0.0;
  double final_fas_loss = 0.0;
  double wall_seconds = 0.0;
};

class AttackAbortedError : public std::runtime_error {
 public:
  AttackAbortedError(const std::string& what, std::size_t iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Clamp to [x_src - eps, x_src + eps], then to [0, 1]. The box edges are
/// nudged inward by at most one ulp so that |x - x_src| <= eps also holds
/// when evaluated in floating point.
Tensor project_linf(const Tensor& x, const Tensor& x_src, double epsilon);

/// True when every pixel is in [0, 1] and within epsilon of x_src.
bool within_budget(const Tensor& x, const Tensor& x_src, double epsilon);

/// Zero-reduction fallback is (0.5, 0.5).
std::pair<double, double> agm_weights(double lf_1, double lf_t, double lg_1, double lg_t,
                                      double eps_stab);

/// lambda_fr * grad_fr + lambda_fas * grad_fas, elementwise.
Tensor balanced_gradient(const Tensor& grad_fr, const Tensor& grad_fas, double lambda_fr,
                         double lambda_fas);

struct PrimeOutcome {
  int alpha = -1;
  /// Mean of the score loss over the probe iterates, for alpha = -1 and +1.
  /// Both are zero when the probes were skipped.
  double mean_minus = 0.0;
  double mean_plus = 0.0;
  std::size_t probe_iterations = 0;
};

enum class Stage { kPrime, kMain };

struct IterateEvent {
  Stage stage = Stage::kMain;
  std::size_t iteration = 0;  // 1-based
  std::size_t layer = 0;      // probed layer in the Prime stage
  int alpha = 0;              // probed sign in the Prime stage
  const Tensor* before = nullptr;
  const Tensor* after = nullptr;
  double fr_weight = 0.0;
  double fas_weight = 0.0;
};

using IterateObserver = std::function<void(const IterateEvent&)>;

PrimeOutcome prime_select(const Tensor& x_src, const TapModel& fas, std::size_t k,
                          const AttackConfig& config, const IterateObserver& observer = {});
int prime_select_alpha(const Tensor& x_src, const TapModel& fas, std::size_t k,
                       const AttackConfig& config);

/// Runs `config.iters` projected sign steps from x_src. Throws
/// AttackAbortedError when a loss becomes non-finite and std::logic_error if
/// an iterate ever leaves the budget.
AttackResult attack(const Tensor& x_src, const Tensor& x_tgt, const TapModel& fr,
                    const TapModel& fas, const AttackConfig& config, Method method,
                    const IterateObserver& observer = {});

}  // namespace rma
