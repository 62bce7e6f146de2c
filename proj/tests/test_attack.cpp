#include <doctest.h>

#include <cmath>
#include <limits>

#include "rma/attack.hpp"
#include "rma/eval.hpp"
#include "support.hpp"

using namespace rma;
using rma::testing::quick_world;
using rma::testing::random_image;

namespace {

double max_dev(const Tensor& x, const Tensor& src) {
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - src[i]));
  return m;
}

// Second, independently written Prime probe: the mean score loss over the
// probe iterates of a sign descent on alpha * mean(h_k).
double probe_mean(const Tensor& x_src, const TapModel& fas, std::size_t k, int alpha, const AttackConfig& cfg) {
  const std::size_t taps[] = {k};
  Tensor x = x_src;
  double total = 0.0;
  for (std::size_t t = 0; t < cfg.prime_iters; ++t) {
    Tape tape;
    auto xv = tape.leaf(x, true);
    auto h = forward_with_taps(tape, fas, xv, taps).taps.at(k);
    auto loss = mul_scalar(mean(flatten(h)), static_cast<double>(alpha));
    const auto g = tape.backward(loss).of(xv);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0);
      x[i] = std::clamp(x[i] - cfg.step * s, x_src[i] - cfg.epsilon, x_src[i] + cfg.epsilon);
      x[i] = std::clamp(x[i], 0.0, 1.0);
    }
    total += -predict(fas, x)[0];
  }
  return total / static_cast<double>(cfg.prime_iters);
}

}  // namespace

TEST_SUITE("attack_engine") {

TEST_CASE("method names round-trip") {
  for (auto m : all_methods()) CHECK(parse_method(method_name(m)) == m);
  CHECK(all_methods().size() == 8);
  CHECK_THROWS_WITH_AS(parse_method("PGD"), doctest::Contains("RIB-only"), std::invalid_argument);
  CHECK(uses_fr(Method::kRma));
  CHECK(uses_fas(Method::kRma));
  CHECK_FALSE(uses_fas(Method::kFim));
  CHECK_FALSE(uses_fr(Method::kRibOnly));
  CHECK(uses_prime(Method::kMfaRib));
  CHECK_FALSE(uses_prime(Method::kRsFas));
}

TEST_CASE("config validation") {
  AttackConfig c;
  CHECK_NOTHROW(c.validate());
  c.step = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.iters = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.eps_stab = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.fixed_weights = std::make_pair(-1.0, 1.0);
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("projection examples") {
  const Tensor src = Tensor::vector({0.5, 0.5, 0.02, 0.98});
  const auto p = project_linf(Tensor::vector({0.9, 0.45, -0.5, 1.5}), src, 0.1);
  CHECK(p[0] == doctest::Approx(0.6));
  CHECK(p[1] == 0.45);
  CHECK(p[2] == 0.0);
  CHECK(p[3] == 1.0);
  CHECK(project_linf(src, src, 0.1) == src);
  CHECK_THROWS_AS(project_linf(Tensor::vector({0.1}), src, 0.1), ShapeError);
}

TEST_CASE("projection property: idempotent and inside both boxes in floating point") {
  Rng rng(17);
  for (int rep = 0; rep < 300; ++rep) {
    const double eps = rng.uniform(1e-4, 0.2);
    const auto src = rma::testing::random_tensor({50}, rng, 0.0, 1.0);
    const auto x = rma::testing::random_tensor({50}, rng, -0.5, 1.5);
    const auto p = project_linf(x, src, eps);
    CHECK(within_budget(p, src, eps));
    CHECK(project_linf(p, src, eps) == p);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - src[i]) <= eps);
  }
}

TEST_CASE("AGM weights") {
  const auto w0 = agm_weights(1.0, 1.0, 2.0, 2.0, 1e-8);
  CHECK(w0.first == 0.5);
  CHECK(w0.second == 0.5);
  // Rising losses count as zero reduction.
  CHECK(agm_weights(1.0, 1.5, 2.0, 3.0, 1e-8) == std::make_pair(0.5, 0.5));
  const auto w = agm_weights(4.0, 1.0, 2.0, 1.0, 1e-12);  // d' = 3, d* = 1
  CHECK(w.first == doctest::Approx(0.25));
  CHECK(w.second == doctest::Approx(0.75));

  Rng rng(3);
  for (int rep = 0; rep < 2000; ++rep) {
    const double eps = std::pow(10.0, rng.uniform(-12.0, 0.0));
    const auto [a, b] = agm_weights(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5), eps);
    CHECK(a >= 0.0);
    CHECK(b >= 0.0);
    CHECK(a + b <= 1.0);
  }
}

TEST_CASE("balanced gradient linearity") {
  Rng rng(4);
  const auto gf = rma::testing::random_tensor({10}, rng);
  const auto gg = rma::testing::random_tensor({10}, rng);
  CHECK(balanced_gradient(gf, gg, 1.0, 0.0) == gf);
  const auto both = balanced_gradient(gf, gg, 1.0, 1.0);
  for (std::size_t i = 0; i < 10; ++i) CHECK(both[i] == gf[i] + gg[i]);
  const auto a = balanced_gradient(gf, gg, 0.3, 0.6);
  const auto b = balanced_gradient(gf, gg, 0.9, 1.8);
  for (std::size_t i = 0; i < 10; ++i) CHECK(b[i] == doctest::Approx(3.0 * a[i]).epsilon(1e-12));
  CHECK_THROWS(balanced_gradient(gf, rma::testing::random_tensor({9}, rng), 1, 1));
  CHECK_THROWS(balanced_gradient(gf, gg, -1, 1));
}

TEST_CASE("Prime on the final score layer returns -1 without probing") {
  const auto& fas = quick_world().zoo.fas_surrogate;
  Rng rng(5);
  const auto out = prime_select(random_image(rng), fas, fas.num_layers(), AttackConfig{});
  CHECK(out.alpha == -1);
  CHECK(out.probe_iterations == 0);
}

TEST_CASE("Prime agrees with an independent probe loop on a trained model") {
  const auto& w = quick_world();
  const auto& fas = w.zoo.fas_surrogate;
  AttackConfig cfg;
  std::size_t checked = 0;
  for (auto idx : w.corpus.indices(Split::kEval, Liveness::kSpoof)) {
    if (checked == 6) break;
    const auto& x = w.corpus.images[idx].pixels;
    for (auto k : default_fas_layers(fas)) {
      if (k == fas.num_layers()) continue;
      const auto out = prime_select(x, fas, k, cfg);
      const double m = probe_mean(x, fas, k, -1, cfg);
      const double p = probe_mean(x, fas, k, 1, cfg);
      CHECK(out.mean_minus == doctest::Approx(m).epsilon(1e-12));
      CHECK(out.mean_plus == doctest::Approx(p).epsilon(1e-12));
      CHECK(out.alpha == (p < m ? 1 : -1));
      CHECK(out.probe_iterations == 2 * cfg.prime_iters);
    }
    ++checked;
  }
}

TEST_CASE("linear tail: Prime follows the sign analysis and RIB descent raises w . h") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t k = 1 + seed % linear_tail_trunk_depth();
    const auto o = rma::testing::linear_tail_trial(seed, k);
    CAPTURE(seed);
    CHECK(o.selected_alpha == o.predicted_alpha);
    CHECK(o.nonsaturated > 0);
    CHECK(o.violations == 0);
  }
}

TEST_CASE("zero gradient is a fixed point") {
  const std::size_t k = 2;
  const auto fas = make_linear_tail_fas(k, std::vector<double>(linear_tail_trunk_width(k), 0.0), 0.0);
  const auto fr = quick_world().zoo.fr_surrogate;
  Rng rng(6);
  const auto x = random_image(rng);
  AttackConfig cfg;
  cfg.iters = 1;
  cfg.fas_layers = {k, k + 1};
  CHECK(attack(x, random_image(rng), fr, fas, cfg, Method::kVanillaFas).x_adv == x);
}

TEST_CASE("every method keeps every iterate inside the budget") {
  const auto& w = quick_world();
  const auto pairs = negative_pairs(w.corpus, 3, 1);
  AttackConfig cfg;
  cfg.iters = 12;
  for (auto m : all_methods()) {
    for (const auto& p : pairs) {
      const auto& xs = w.corpus.images[p.source].pixels;
      std::size_t events = 0, bad = 0;
      auto r = attack(xs, w.corpus.images[p.target].pixels, w.zoo.fr_surrogate, w.zoo.fas_surrogate, cfg, m,
                      [&](const IterateEvent& ev) {
                        ++events;
                        if (!within_budget(*ev.after, xs, cfg.epsilon)) ++bad;
                      });
      CAPTURE(method_name(m));
      CHECK(bad == 0);
      CHECK(events >= cfg.iters);
      CHECK(within_budget(r.x_adv, xs, cfg.epsilon));
      CHECK(max_dev(r.x_adv, xs) <= cfg.epsilon);
      CHECK(r.fr_weight_trace.size() == cfg.iters);
      CHECK(r.fr_loss_trace.size() == (uses_fr(m) ? cfg.iters : 0));
      CHECK(r.fas_loss_trace.size() == (uses_fas(m) ? cfg.iters : 0));
      CHECK(std::isnan(r.final_fas_loss) == !uses_fas(m));
      CHECK(r.alphas.empty() == !uses_prime(m));
    }
  }
}

TEST_CASE("RMA weights start balanced and stay normalized; unit weights reproduce MFA+RIB") {
  const auto& w = quick_world();
  AttackConfig cfg;
  cfg.iters = 15;
  for (const auto& p : negative_pairs(w.corpus, 3, 2)) {
    const auto& xs = w.corpus.images[p.source].pixels;
    const auto& xt = w.corpus.images[p.target].pixels;
    const auto r = attack(xs, xt, w.zoo.fr_surrogate, w.zoo.fas_surrogate, cfg, Method::kRma);
    CHECK(r.fr_weight_trace.front() == 0.5);
    CHECK(r.fas_weight_trace.front() == 0.5);
    for (std::size_t t = 0; t < cfg.iters; ++t) {
      CHECK(r.fr_weight_trace[t] >= 0.0);
      CHECK(r.fas_weight_trace[t] >= 0.0);
      CHECK(r.fr_weight_trace[t] + r.fas_weight_trace[t] <= 1.0);
    }
    auto unit = cfg;
    unit.fixed_weights = std::make_pair(1.0, 1.0);
    const auto forced = attack(xs, xt, w.zoo.fr_surrogate, w.zoo.fas_surrogate, unit, Method::kRma);
    const auto joint = attack(xs, xt, w.zoo.fr_surrogate, w.zoo.fas_surrogate, cfg, Method::kMfaRib);
    CHECK(forced.x_adv == joint.x_adv);
    CHECK(forced.fr_loss_trace == joint.fr_loss_trace);
    CHECK(forced.fas_loss_trace == joint.fas_loss_trace);
  }
}

TEST_CASE("FIM and single-level FR with the embedding layer coincide") {
  const auto& w = quick_world();
  const auto p = negative_pairs(w.corpus, 1, 3).front();
  AttackConfig cfg;
  cfg.iters = 5;
  cfg.single_level_layer = w.zoo.fr_surrogate.num_layers();
  const auto& xs = w.corpus.images[p.source].pixels;
  const auto& xt = w.corpus.images[p.target].pixels;
  CHECK(attack(xs, xt, w.zoo.fr_surrogate, w.zoo.fas_surrogate, cfg, Method::kFim).x_adv ==
        attack(xs, xt, w.zoo.fr_surrogate, w.zoo.fas_surrogate, cfg, Method::kSingleLevelFr).x_adv);
}

TEST_CASE("layer resolution defaults and errors") {
  const auto& z = quick_world().zoo;
  AttackConfig cfg;
  const auto r = resolve_layers(cfg, z.fr_surrogate, z.fas_surrogate, Method::kRsFas);
  CHECK(r.fas == default_fas_layers(z.fas_surrogate));
  CHECK(r.rs == default_fas_layers(z.fas_surrogate)[1]);
  CHECK(r.fr.empty());
  const auto s = resolve_layers(cfg, z.fr_surrogate, z.fas_surrogate, Method::kSingleLevelFr);
  CHECK(s.single_level == default_fr_layers(z.fr_surrogate)[1]);
  cfg.fas_layers = {z.fas_surrogate.num_layers() + 3};
  CHECK_THROWS(resolve_layers(cfg, z.fr_surrogate, z.fas_surrogate, Method::kRibOnly));
  CHECK_NOTHROW(resolve_layers(cfg, z.fr_surrogate, z.fas_surrogate, Method::kFim));
  cfg = {};
  cfg.fas_layers = {z.fas_surrogate.num_layers()};
  CHECK_THROWS(resolve_layers(cfg, z.fr_surrogate, z.fas_surrogate, Method::kRsFas));
}

TEST_CASE("attack is deterministic") {
  const auto& w = quick_world();
  const auto p = negative_pairs(w.corpus, 1, 4).front();
  AttackConfig cfg;
  cfg.iters = 6;
  const auto& xs = w.corpus.images[p.source].pixels;
  const auto& xt = w.corpus.images[p.target].pixels;
  const auto a = attack(xs, xt, w.zoo.fr_surrogate, w.zoo.fas_surrogate, cfg, Method::kRma);
  const auto b = attack(xs, xt, w.zoo.fr_surrogate, w.zoo.fas_surrogate, cfg, Method::kRma);
  CHECK(a.x_adv == b.x_adv);
  CHECK(a.alphas == b.alphas);
}

TEST_CASE("a non-finite loss aborts the attack") {
  const std::size_t k = linear_tail_trunk_depth();
  const auto fas = make_linear_tail_fas(k, std::vector<double>(linear_tail_trunk_width(k), 1e308), 0.0);
  Rng rng(8);
  const auto x = random_image(rng);
  AttackConfig cfg;
  cfg.iters = 3;
  cfg.fas_layers = {k, k + 1};
  CHECK_THROWS_AS(attack(x, x, quick_world().zoo.fr_surrogate, fas, cfg, Method::kVanillaFas), AttackAbortedError);
  CHECK_THROWS_AS(attack(x, x, quick_world().zoo.fr_surrogate, fas, cfg, Method::kRibOnly), AttackAbortedError);
}

TEST_CASE("small-step descent lowers each loss over five iterations") {
  const auto& w = quick_world();
  const auto pairs = negative_pairs(w.corpus, 40, 5);
  AttackConfig cfg;
  cfg.step = 1.0 / 1020.0;
  cfg.iters = 5;
  for (auto m : all_methods()) {
    if (m == Method::kMfaRib || m == Method::kRma) continue;  // sums of two losses
    std::size_t lowered = 0;
    for (const auto& p : pairs) {
      const auto r = attack(w.corpus.images[p.source].pixels, w.corpus.images[p.target].pixels, w.zoo.fr_surrogate,
                            w.zoo.fas_surrogate, cfg, m);
      const double before = uses_fr(m) ? r.fr_loss_trace.front() : r.fas_loss_trace.front();
      const double after = uses_fr(m) ? r.final_fr_loss : r.final_fas_loss;
      lowered += after < before;
    }
    CAPTURE(method_name(m));
    CHECK(lowered >= 36);
  }
}

}  // TEST_SUITE
