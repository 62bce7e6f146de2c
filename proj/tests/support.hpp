#pragma once

// Shared generators and oracles for the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "rma/attack.hpp"
#include "rma/data_synth.hpp"
#include "rma/losses.hpp"
#include "rma/model_zoo.hpp"
#include "rma/rng.hpp"
#include "rma/tape.hpp"

namespace rma::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (auto& e : v) e = rng.uniform(lo, hi);
  return Tensor(shape, std::move(v));
}

/// Values in +-[lo, hi]: bounded away from zero so relu kinks stay out of
/// finite-difference reach.
inline Tensor away_from_zero(const Shape& shape, Rng& rng, double lo = 0.1, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (auto& e : v) e = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return Tensor(shape, std::move(v));
}

inline Tensor random_image(Rng& rng, double lo = 0.05, double hi = 0.95) {
  return random_tensor(image_shape(), rng, lo, hi);
}

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// ||a - b|| / max(||a||, ||b||), and 0 when both are (near) zero.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double scale = std::max(norm(a), norm(b));
  return scale < 1e-12 ? norm(d) : norm(d) / scale;
}

using ScalarFn = std::function<double(const Tensor&)>;

/// Central differences of f at x along each direction.
inline std::vector<double> directional_fd(const ScalarFn& f, const Tensor& x,
                                          const std::vector<Tensor>& dirs, double h) {
  std::vector<double> out;
  for (const auto& d : dirs) {
    Tensor xp = x, xm = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      xp[i] += h * d[i];
      xm[i] -= h * d[i];
    }
    out.push_back((f(xp) - f(xm)) / (2.0 * h));
  }
  return out;
}

inline std::vector<double> directional_analytic(const Tensor& grad, const std::vector<Tensor>& dirs) {
  std::vector<double> out;
  for (const auto& d : dirs) {
    double s = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) s += grad[i] * d[i];
    out.push_back(s);
  }
  return out;
}

/// Random Gaussian directions plus a handful of coordinate axes.
inline std::vector<Tensor> probe_directions(const Shape& shape, Rng& rng, std::size_t gaussian,
                                            std::size_t axes) {
  std::vector<Tensor> dirs;
  const std::size_t n = shape_size(shape);
  for (std::size_t g = 0; g < gaussian; ++g) {
    std::vector<double> v(n);
    for (auto& e : v) e = rng.normal();
    dirs.emplace_back(shape, std::move(v));
  }
  for (std::size_t a = 0; a < axes; ++a) {
    Tensor t = Tensor::zeros(shape);
    t[rng.below(n)] = 1.0;
    dirs.push_back(std::move(t));
  }
  return dirs;
}

/// Relative error between the tape gradient of `loss` at x and central
/// differences along random directions.
inline double loss_gradcheck(const std::function<Var(Tape&, const Var&)>& loss, const Tensor& x,
                             Rng& rng, double h = 1e-6) {
  Tape tape;
  auto xv = tape.leaf(x, true);
  const auto grad = tape.backward(loss(tape, xv)).of(xv);
  auto value = [&](const Tensor& p) {
    Tape t;
    return loss(t, t.leaf(p)).value().item();
  };
  const auto dirs = probe_directions(x.shape(), rng, 4, 8);
  return relative_error(directional_analytic(grad, dirs), directional_fd(value, x, dirs, h));
}

struct PrimitiveCase {
  const char* name;
  OpKind kind;
  std::vector<Tensor> inputs;
  OpParams params;
};

/// One random instance of every primitive, sized for full finite differences.
inline std::vector<PrimitiveCase> primitive_cases(Rng& rng) {
  std::vector<PrimitiveCase> cases;
  auto p = [](auto f) {
    OpParams o;
    f(o);
    return o;
  };
  cases.push_back({"matmul", OpKind::kMatMul, {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}, {}});
  cases.push_back({"matvec", OpKind::kMatMul, {random_tensor({3, 4}, rng), random_tensor({4}, rng)}, {}});
  cases.push_back({"conv2d", OpKind::kConv2d,
                   {random_tensor({2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)}, {}});
  cases.push_back({"conv2d_stride2", OpKind::kConv2d,
                   {random_tensor({2, 7, 7}, rng), random_tensor({2, 2, 3, 3}, rng), random_tensor({2}, rng)},
                   p([](OpParams& o) { o.stride = 2; })});
  cases.push_back({"add", OpKind::kAdd, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}, {}});
  cases.push_back({"sub", OpKind::kSub, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}, {}});
  cases.push_back({"relu", OpKind::kRelu, {away_from_zero({2, 5}, rng)}, {}});
  cases.push_back({"mean", OpKind::kMean, {random_tensor({2, 3, 2}, rng)}, {}});
  cases.push_back({"sum", OpKind::kSum, {random_tensor({7}, rng)}, {}});
  cases.push_back({"mul_scalar", OpKind::kMulScalar, {random_tensor({4}, rng)},
                   p([&](OpParams& o) { o.scalar = rng.uniform(-2.0, 2.0); })});
  cases.push_back({"flatten", OpKind::kFlatten, {random_tensor({2, 2, 3}, rng)}, {}});
  cases.push_back({"reshape", OpKind::kReshape, {random_tensor({2, 6}, rng)},
                   p([](OpParams& o) { o.shape = {3, 4}; })});
  cases.push_back({"l2_normalize", OpKind::kL2Normalize, {away_from_zero({6}, rng)}, {}});
  cases.push_back({"sq_l2_norm", OpKind::kSqL2Norm, {random_tensor({5}, rng)}, {}});
  cases.push_back({"l2_norm", OpKind::kL2Norm, {away_from_zero({5}, rng)}, {}});
  cases.push_back({"avg_pool2d", OpKind::kAvgPool2d, {random_tensor({2, 4, 6}, rng)}, {}});
  cases.push_back({"softmax_xent", OpKind::kSoftmaxXent, {random_tensor({5}, rng, -3.0, 3.0)},
                   p([&](OpParams& o) { o.label = rng.below(5); })});
  cases.push_back({"sigmoid_bce", OpKind::kSigmoidBce, {random_tensor({1}, rng, -4.0, 4.0)},
                   p([&](OpParams& o) { o.scalar = rng.below(2) ? 1.0 : 0.0; })});
  return cases;
}

/// Worst relative error over the inputs of one primitive: the VJP of a
/// random cotangent against full central differences of <cotangent, f>.
inline double primitive_gradcheck(const PrimitiveCase& c, Rng& rng, double h = 1e-6) {
  std::vector<const Tensor*> ptrs;
  for (const auto& t : c.inputs) ptrs.push_back(&t);
  const Tensor out = evaluate_op(c.kind, ptrs, c.params);
  const Tensor cot = random_tensor(out.shape(), rng);
  const auto vjp = differentiate_op(c.kind, ptrs, out, cot, c.params,
                                    std::vector<bool>(c.inputs.size(), true));
  double worst = 0.0;
  for (std::size_t k = 0; k < c.inputs.size(); ++k) {
    std::vector<double> fd(c.inputs[k].size());
    for (std::size_t i = 0; i < fd.size(); ++i) {
      auto probe = [&](double delta) {
        std::vector<Tensor> moved = c.inputs;
        moved[k][i] += delta;
        std::vector<const Tensor*> mp;
        for (const auto& t : moved) mp.push_back(&t);
        const Tensor o = evaluate_op(c.kind, mp, c.params);
        double s = 0.0;
        for (std::size_t j = 0; j < o.size(); ++j) s += cot[j] * o[j];
        return s;
      };
      fd[i] = (probe(h) - probe(-h)) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(vjp[k].values(), fd));
  }
  return worst;
}

struct LossCase {
  const char* name;
  std::function<Var(Tape&, const Var&)> loss;
};

/// Every attack loss on freshly initialized surrogates, with its fixed
/// images drawn from `rng`.
inline std::vector<LossCase> attack_loss_cases(const TapModel& fr, const TapModel& fas, Rng& rng) {
  const Tensor x_ref = random_image(rng);
  const Tensor x_t = random_image(rng);
  const auto fr_layers = default_fr_layers(fr);
  const auto fas_layers = default_fas_layers(fas);
  const std::size_t k = fas_layers[1];
  const std::size_t r = fr_layers[1];
  AlphaMap alphas;
  for (auto l : fas_layers) alphas[l] = rng.below(2) ? 1 : -1;
  const auto targets = fr_target_features(fr, x_t, fr_layers);
  const int alpha = alphas.at(k);
  return {
      {"score", [&fas](Tape& t, const Var& x) { return fas_score_loss(t, fas, x); }},
      {"reference_specific", [&fas, x_ref, k](Tape& t, const Var& x) { return reference_specific_loss(t, fas, x, x_ref, k); }},
      {"rib_layer", [&fas, k, alpha](Tape& t, const Var& x) { return rib_layer_loss(t, fas, x, k, alpha); }},
      {"fas_multi_layer", [&fas, fas_layers, alphas](Tape& t, const Var& x) { return fas_multi_layer_loss(t, fas, x, fas_layers, alphas); }},
      {"fr_vanilla", [&fr, x_t](Tape& t, const Var& x) { return fr_vanilla_loss(t, fr, x, x_t); }},
      {"fr_single_level", [&fr, x_t, r](Tape& t, const Var& x) { return fr_single_level_loss(t, fr, x, x_t, r); }},
      {"fr_mfa", [&fr, targets](Tape& t, const Var& x) { return fr_mfa_loss(t, fr, x, targets); }},
  };
}

/// Small corpus that still clears the calibration minimums.
inline CorpusParams small_corpus_params(std::uint64_t seed = 3) {
  CorpusParams p;
  p.seed = seed;
  p.n_identities = 24;
  p.images_per_identity_per_liveness = 6;
  return p;
}

inline ZooParams quick_zoo_params() {
  ZooParams z;
  z.fr_epochs = 2;
  z.fas_epochs = 2;
  return z;
}

struct LinearTailOutcome {
  int predicted_alpha = 0;
  int selected_alpha = 0;
  std::size_t nonsaturated = 0;
  std::size_t violations = 0;  // non-saturated steps with w . (h_t - h_{t-1}) <= 0
};

/// Same-sign random w at layer k of the monotone trunk. Raising every
/// activation raises the score iff w > 0, so the predicted alpha is
/// -sign(w). Then runs a RIB descent with the selected alpha and checks the
/// score-direction condition at every step that moved the image.
inline LinearTailOutcome linear_tail_trial(std::uint64_t seed, std::size_t k, std::size_t steps = 50) {
  Rng rng(seed);
  const double sgn = rng.below(2) ? 1.0 : -1.0;
  std::vector<double> w(linear_tail_trunk_width(k));
  for (auto& e : w) e = sgn * rng.uniform(0.05, 1.0);
  const auto model = make_linear_tail_fas(k, w, rng.uniform(-0.5, 0.5));
  const Tensor x_src = random_image(rng, 0.1, 0.9);
  AttackConfig cfg;
  LinearTailOutcome out;
  out.predicted_alpha = sgn > 0 ? -1 : 1;
  out.selected_alpha = prime_select_alpha(x_src, model, k, cfg);

  const std::size_t taps[] = {k};
  Tensor x = x_src;
  Tensor h_prev = tap_values(model, x, taps).at(k);
  for (std::size_t t = 0; t < steps; ++t) {
    Tape tape;
    auto xv = tape.leaf(x, true);
    const auto h = forward_with_taps(tape, model, xv, taps).taps.at(k);
    const auto g = tape.backward(rib_layer_loss(h, out.selected_alpha)).of(xv);
    const auto s = sign(g);
    Tensor next = x;
    for (std::size_t i = 0; i < x.size(); ++i) next[i] -= cfg.step * s[i];
    next = project_linf(next, x_src, cfg.epsilon);
    if (next == x) continue;
    ++out.nonsaturated;
    const Tensor h_next = tap_values(model, next, taps).at(k);
    double dot = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) dot += w[j] * (h_next[j] - h_prev[j]);
    if (!(dot > 0.0)) ++out.violations;
    x = std::move(next);
    h_prev = h_next;
  }
  return out;
}

struct QuickWorld {
  Corpus corpus;
  Zoo zoo;
};

/// Briefly trained zoo on the small corpus, built once per test binary.
inline const QuickWorld& quick_world() {
  static const QuickWorld w = [] {
    QuickWorld q;
    q.corpus = gen_corpus(small_corpus_params());
    q.zoo = make_zoo(7, q.corpus, quick_zoo_params());
    return q;
  }();
  return w;
}

}  // namespace rma::testing
