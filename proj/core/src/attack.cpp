#include "rma/attack.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "rma/model_zoo.hpp"

namespace rma {

const char* method_name(Method m) {
  switch (m) {
    case Method::kFim: return "FIM";
    case Method::kFimMfa: return "FIM+MFA";
    case Method::kMfaRib: return "MFA+RIB";
    case Method::kRma: return "RMA";
    case Method::kVanillaFas: return "Vanilla-FAS";
    case Method::kRsFas: return "RS-FAS";
    case Method::kRibOnly: return "RIB-only";
    case Method::kSingleLevelFr: return "Single-level-FR";
  }
  return "unknown";
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = {
      Method::kFim,        Method::kFimMfa, Method::kMfaRib,  Method::kRma,
      Method::kVanillaFas, Method::kRsFas,  Method::kRibOnly, Method::kSingleLevelFr};
  return methods;
}

Method parse_method(const std::string& name) {
  std::string valid;
  for (auto m : all_methods()) {
    if (name == method_name(m)) return m;
    valid += valid.empty() ? "" : ", ";
    valid += method_name(m);
  }
  throw std::invalid_argument("unknown attack method '" + name + "' (valid: " + valid + ")");
}

bool uses_fr(Method m) {
  switch (m) {
    case Method::kVanillaFas:
    case Method::kRsFas:
    case Method::kRibOnly:
      return false;
    default:
      return true;
  }
}

bool uses_fas(Method m) {
  return m == Method::kMfaRib || m == Method::kRma || !uses_fr(m);
}

bool uses_prime(Method m) {
  return m == Method::kMfaRib || m == Method::kRma || m == Method::kRibOnly;
}

void AttackConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("attack config: " + what); };
  if (!(epsilon > 0.0 && epsilon <= 1.0)) fail("epsilon must be in (0, 1]");
  if (!(step > 0.0 && step <= epsilon)) fail("step must satisfy 0 < step <= epsilon");
  if (iters < 1) fail("iters must be >= 1");
  if (prime_iters < 1) fail("prime_iters must be >= 1");
  if (!(eps_stab > 0.0)) fail("eps_stab must be > 0");
  if (fixed_weights && (fixed_weights->first < 0.0 || fixed_weights->second < 0.0)) {
    fail("fixed weights must be nonnegative");
  }
}

namespace {

std::size_t deepest_intermediate(const std::vector<std::size_t>& layers, const TapModel& m,
                                 const char* what) {
  std::size_t best = 0;
  for (auto k : layers)
    if (k < m.num_layers() && k > best) best = k;
  if (best == 0) {
    throw std::invalid_argument(std::string("no intermediate layer available for the ") + what +
                                " loss on '" + m.name() + "'");
  }
  return best;
}

void check_layers(const std::vector<std::size_t>& layers, const TapModel& m) {
  if (layers.empty()) throw std::invalid_argument("empty layer set for '" + m.name() + "'");
  for (auto k : layers) m.check_index(k);
}

}  // namespace

ResolvedLayers resolve_layers(const AttackConfig& config, const TapModel& fr,
                              const TapModel& fas, Method method) {
  ResolvedLayers r;
  if (uses_fr(method)) {
    r.fr = config.fr_layers.empty() ? default_fr_layers(fr) : config.fr_layers;
    check_layers(r.fr, fr);
    if (method == Method::kSingleLevelFr) {
      r.single_level = config.single_level_layer.value_or(0);
      if (r.single_level == 0) r.single_level = deepest_intermediate(r.fr, fr, "single-level");
      fr.check_index(r.single_level);
    }
  }
  if (uses_fas(method)) {
    r.fas = config.fas_layers.empty() ? default_fas_layers(fas) : config.fas_layers;
    check_layers(r.fas, fas);
    if (method == Method::kRsFas) {
      r.rs = config.rs_layer.value_or(0);
      if (r.rs == 0) r.rs = deepest_intermediate(r.fas, fas, "reference-specific");
      fas.check_index(r.rs);
    }
  }
  return r;
}

Tensor project_linf(const Tensor& x, const Tensor& x_src, double epsilon) {
  if (x.shape() != x_src.shape()) {
    throw ShapeError("project_linf: " + shape_string(x.shape()) + " vs " +
                     shape_string(x_src.shape()));
  }
  Tensor out = x;
  auto o = out.mutable_data();
  const auto s = x_src.data();
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < o.size(); ++i) {
    double lo = s[i] - epsilon;
    double hi = s[i] + epsilon;
    while (s[i] - lo > epsilon) lo = std::nextafter(lo, inf);
    while (hi - s[i] > epsilon) hi = std::nextafter(hi, -inf);
    double v = std::min(std::max(o[i], lo), hi);
    o[i] = std::min(std::max(v, 0.0), 1.0);
  }
  return out;
}

bool within_budget(const Tensor& x, const Tensor& x_src, double epsilon) {
  if (x.shape() != x_src.shape()) return false;
  const auto a = x.data();
  const auto s = x_src.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i] >= 0.0 && a[i] <= 1.0 && std::abs(a[i] - s[i]) <= epsilon)) return false;
  }
  return true;
}

std::pair<double, double> agm_weights(double lf_1, double lf_t, double lg_1, double lg_t,
                                      double eps_stab) {
  if (!(eps_stab > 0.0)) throw std::invalid_argument("agm_weights: eps_stab must be > 0");
  const double d_fr = std::max(lf_1 - lf_t, 0.0);
  const double d_fas = std::max(lg_1 - lg_t, 0.0);
  if (d_fr == 0.0 && d_fas == 0.0) return {0.5, 0.5};
  const double denom = d_fas + d_fr + eps_stab;
  return {d_fas / denom, d_fr / denom};
}

Tensor balanced_gradient(const Tensor& grad_fr, const Tensor& grad_fas, double lambda_fr,
                         double lambda_fas) {
  if (grad_fr.shape() != grad_fas.shape()) {
    throw ShapeError("balanced_gradient: " + shape_string(grad_fr.shape()) + " vs " +
                     shape_string(grad_fas.shape()));
  }
  if (lambda_fr < 0.0 || lambda_fas < 0.0) {
    throw std::invalid_argument("balanced_gradient: weights must be nonnegative");
  }
  std::vector<double> g(grad_fr.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = lambda_fr * grad_fr[i] + lambda_fas * grad_fas[i];
  }
  return Tensor(grad_fr.shape(), std::move(g));
}

namespace {

using LossFn = std::function<Var(Tape&, const Var&)>;

Tensor sign_step(const Tensor& x, const Tensor& grad, const Tensor& x_src,
                 const AttackConfig& config) {
  const auto dir = sign(grad);
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] - config.step * dir[i];
  auto next = project_linf(Tensor(x.shape(), std::move(v)), x_src, config.epsilon);
  if (!within_budget(next, x_src, config.epsilon)) {
    throw std::logic_error("attack iterate left the L-inf / [0,1] budget");
  }
  return next;
}

}  // namespace

PrimeOutcome prime_select(const Tensor& x_src, const TapModel& fas, std::size_t k,
                          const AttackConfig& config, const IterateObserver& observer) {
  config.validate();
  fas.check_index(k);
  PrimeOutcome out;
  if (k == fas.num_layers()) return out;

  const std::size_t layers[] = {k};
  double means[2] = {0.0, 0.0};
  const int candidates[2] = {-1, 1};
  for (int c = 0; c < 2; ++c) {
    const int alpha = candidates[c];
    Tensor x = x_src;
    double total = 0.0;
    for (std::size_t t = 1; t <= config.prime_iters; ++t) {
      Tape tape;
      auto xv = tape.leaf(x, true);
      auto h = forward_with_taps(tape, fas, xv, layers).taps.at(k);
      auto grad = tape.backward(rib_layer_loss(h, alpha)).of(xv);
      Tensor next = sign_step(x, grad, x_src, config);
      if (observer) {
        IterateEvent ev;
        ev.stage = Stage::kPrime;
        ev.iteration = t;
        ev.layer = k;
        ev.alpha = alpha;
        ev.before = &x;
        ev.after = &next;
        observer(ev);
      }
      x = std::move(next);
      total += eval_loss([&](Tape& tp, const Var& v) { return fas_score_loss(tp, fas, v); }, x);
      ++out.probe_iterations;
    }
    means[c] = total / static_cast<double>(config.prime_iters);
  }
  out.mean_minus = means[0];
  out.mean_plus = means[1];
  out.alpha = out.mean_plus < out.mean_minus ? 1 : -1;
  return out;
}

int prime_select_alpha(const Tensor& x_src, const TapModel& fas, std::size_t k,
                       const AttackConfig& config) {
  return prime_select(x_src, fas, k, config).alpha;
}

AttackResult attack(const Tensor& x_src, const Tensor& x_tgt, const TapModel& fr,
                    const TapModel& fas, const AttackConfig& config, Method method,
                    const IterateObserver& observer) {
  config.validate();
  if (x_src.shape() != x_tgt.shape()) {
    throw ShapeError("attack: source " + shape_string(x_src.shape()) + " vs target " +
                     shape_string(x_tgt.shape()));
  }
  const auto start = std::chrono::steady_clock::now();
  const bool fr_side = uses_fr(method);
  const bool fas_side = uses_fas(method);
  const auto layers = resolve_layers(config, fr, fas, method);

  AttackResult result;
  LossFn fr_loss, fas_loss;
  if (fr_side) {
    std::vector<std::size_t> e;
    switch (method) {
      case Method::kFim: e = {fr.num_layers()}; break;
      case Method::kSingleLevelFr: e = {layers.single_level}; break;
      default: e = layers.fr; break;
    }
    auto targets = fr_target_features(fr, x_tgt, e);
    fr_loss = [&fr, targets = std::move(targets)](Tape& tape, const Var& x) {
      return fr_mfa_loss(tape, fr, x, targets);
    };
  }
  if (fas_side) {
    if (method == Method::kVanillaFas) {
      fas_loss = [&fas](Tape& tape, const Var& x) { return fas_score_loss(tape, fas, x); };
    } else if (method == Method::kRsFas) {
      const std::size_t k = layers.rs;
      const std::size_t one[] = {k};
      auto ref = tap_values(fas, x_tgt, one).at(k);
      fas_loss = [&fas, k, ref = std::move(ref)](Tape& tape, const Var& x) {
        const std::size_t taps[] = {k};
        return reference_specific_loss(forward_with_taps(tape, fas, x, taps).taps.at(k), ref);
      };
    } else {
      try {
        for (auto k : layers.fas) result.alphas[k] = prime_select(x_src, fas, k, config, observer).alpha;
      } catch (const NonFiniteError& e) {
        throw AttackAbortedError(std::string(method_name(method)) + " attack aborted in the Prime stage: " + e.what(), 0);
      }
      fas_loss = [&fas, s = layers.fas, alphas = result.alphas](Tape& tape, const Var& x) {
        return fas_multi_layer_loss(tape, fas, x, s, alphas);
      };
    }
  }

  const std::size_t T = config.iters;
  if (fr_side) result.fr_loss_trace.reserve(T);
  if (fas_side) result.fas_loss_trace.reserve(T);
  result.fr_weight_trace.reserve(T);
  result.fas_weight_trace.reserve(T);

  Tensor x = x_src;
  double lf_1 = 0.0, lg_1 = 0.0;
  std::size_t t = 1;
  try {
    for (; t <= T; ++t) {
      double lf = 0.0, lg = 0.0;
      Tensor gf, gg;
      if (fr_side) {
        std::tie(lf, gf) = loss_and_grad(fr_loss, x);
        result.fr_loss_trace.push_back(lf);
      }
      if (fas_side) {
        std::tie(lg, gg) = loss_and_grad(fas_loss, x);
        result.fas_loss_trace.push_back(lg);
      }
      if (t == 1) {
        lf_1 = lf;
        lg_1 = lg;
      }
      double wf = fr_side ? 1.0 : 0.0;
      double wg = fas_side ? 1.0 : 0.0;
      if (method == Method::kRma) {
        std::tie(wf, wg) = config.fixed_weights ? *config.fixed_weights
                                                : agm_weights(lf_1, lf, lg_1, lg, config.eps_stab);
      }
      result.fr_weight_trace.push_back(wf);
      result.fas_weight_trace.push_back(wg);
      const Tensor g = fr_side && fas_side ? balanced_gradient(gf, gg, wf, wg) : fr_side ? gf : gg;
      Tensor next = sign_step(x, g, x_src, config);
      if (observer) {
        IterateEvent ev;
        ev.stage = Stage::kMain;
        ev.iteration = t;
        ev.before = &x;
        ev.after = &next;
        ev.fr_weight = wf;
        ev.fas_weight = wg;
        observer(ev);
      }
      x = std::move(next);
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    result.final_fr_loss = fr_side ? eval_loss(fr_loss, x) : nan;
    result.final_fas_loss = fas_side ? eval_loss(fas_loss, x) : nan;
  } catch (const NonFiniteError& e) {
    std::ostringstream msg;
    msg << method_name(method) << " attack aborted at iteration " << t << ": " << e.what();
    if (!result.fr_loss_trace.empty()) msg << "; last FR loss " << result.fr_loss_trace.back();
    if (!result.fas_loss_trace.empty()) msg << "; last FAS loss " << result.fas_loss_trace.back();
    throw AttackAbortedError(msg.str(), t);
  }
  result.x_adv = std::move(x);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace rma
