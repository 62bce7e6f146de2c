#include <doctest.h>

#include <cmath>

#include "rma/eval.hpp"
#include "rma/model_zoo.hpp"
#include "support.hpp"

using namespace rma;
using rma::testing::random_image;

namespace {

std::vector<std::size_t> all_layers(const TapModel& m) {
  std::vector<std::size_t> v;
  for (std::size_t i = 1; i <= m.num_layers(); ++i) v.push_back(i);
  return v;
}

std::vector<ArchSpec> every_arch() {
  std::vector<ArchSpec> a{fr_surrogate_arch(), fas_surrogate_arch()};
  for (auto& x : fr_target_archs()) a.push_back(x);
  for (auto& x : fas_target_archs()) a.push_back(x);
  return a;
}

}  // namespace

TEST_SUITE("model_zoo") {

TEST_CASE("heads: unit-norm FR embeddings and scalar FAS scores") {
  Rng rng(3);
  for (const auto& arch : every_arch()) {
    const auto m = build_model(arch, 17);
    CAPTURE(arch.name);
    for (int i = 0; i < 5; ++i) {
      const auto y = predict(m, random_image(rng, 0.0, 1.0));
      if (arch.head == HeadKind::kFrEmbedding) {
        double n = 0.0;
        for (double v : y.data()) n += v * v;
        CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-9);
        CHECK(y.size() == 32);
      } else {
        CHECK(y.size() == 1);
      }
    }
  }
}

TEST_CASE("default tap sets name two blocks and the final layer") {
  const auto fr = build_model(fr_surrogate_arch(), 1);
  const auto fas = build_model(fas_surrogate_arch(), 1);
  const auto e = default_fr_layers(fr);
  const auto s = default_fas_layers(fas);
  CHECK(e.size() == 3);
  CHECK(s.size() == 3);
  CHECK(e.back() == fr.num_layers());
  CHECK(s.back() == fas.num_layers());
  CHECK(fr.tap_label(e[0]) == "block2");
  CHECK(fas.tap_label(s[1]) == "block3");
}

TEST_CASE("taps agree with segments and with the final output") {
  Rng rng(8);
  for (const auto& arch : every_arch()) {
    const auto m = build_model(arch, 4);
    const auto x = random_image(rng);
    const auto layers = all_layers(m);
    const auto taps = tap_values(m, x, layers);
    CHECK(taps.at(m.num_layers()) == predict(m, x));
    for (std::size_t k = 1; k < m.num_layers(); ++k) {
      const auto h = Segment(m, 1, k).apply(x);
      CHECK(h == taps.at(k));
      CHECK(Segment(m, k + 1, m.num_layers()).apply(h) == predict(m, x));
    }
    Tape tape;
    const auto out = forward_with_taps(tape, m, tape.leaf(x), {});
    CHECK(out.taps.empty());
    CHECK(out.output.value() == predict(m, x));
  }
}

TEST_CASE("bad tap indices are rejected") {
  const auto m = build_model(fas_surrogate_arch(), 1);
  CHECK_THROWS_AS(m.check_index(0), InvalidLayerError);
  CHECK_THROWS_AS(m.check_index(m.num_layers() + 1), InvalidLayerError);
  CHECK_THROWS_AS(Segment(m, 3, 2), InvalidLayerError);
}

TEST_CASE("weight files round-trip bit-exactly") {
  for (const auto& arch : every_arch()) {
    const auto m = build_model(arch, 9);
    const auto bytes = encode_model(m);
    CHECK(decode_model(bytes) == m);
    CHECK(encode_model(decode_model(bytes)) == bytes);
  }
  const auto bytes = encode_model(build_model(fr_surrogate_arch(), 2));
  CHECK_THROWS(decode_model(std::string_view(bytes).substr(0, bytes.size() / 2)));
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS(decode_model(bad));
}

TEST_CASE("surrogates and targets differ") {
  const auto fr = build_model(fr_surrogate_arch(), 1);
  for (const auto& a : fr_target_archs()) CHECK_FALSE(build_model(a, 1) == fr);
  const auto fas = build_model(fas_surrogate_arch(), 1);
  for (const auto& a : fas_target_archs()) CHECK_FALSE(build_model(a, 1) == fas);
  CHECK_FALSE(build_model(fr_surrogate_arch(), 1) == build_model(fr_surrogate_arch(), 2));
}

TEST_CASE("zero epochs leaves the model unchanged; training is deterministic") {
  auto p = rma::testing::small_corpus_params();
  p.n_identities = 8;
  p.images_per_identity_per_liveness = 2;
  const auto c = gen_corpus(p);
  const auto init = build_model(fas_surrogate_arch(), 5);
  TrainParams tp;
  tp.epochs = 0;
  CHECK(train(init, c, tp) == init);
  tp.epochs = 1;
  tp.seed = 3;
  const auto a = train(init, c, tp);
  const auto b = train(init, c, tp);
  CHECK(a == b);
  CHECK_FALSE(a == init);
  tp.objective = Objective::kIdentityClassification;
  const auto fr_init = build_model(fr_surrogate_arch(), 5);
  CHECK(train(fr_init, c, tp) == train(fr_init, c, tp));
}

TEST_CASE("make_zoo with the same seed reproduces every weight") {
  auto p = rma::testing::small_corpus_params();
  p.n_identities = 8;
  p.images_per_identity_per_liveness = 2;
  const auto c = gen_corpus(p);
  ZooParams z;
  z.fr_epochs = 1;
  z.fas_epochs = 1;
  const auto a = make_zoo(4, c, z);
  const auto b = make_zoo(4, c, z);
  CHECK(a.fr_surrogate == b.fr_surrogate);
  CHECK(a.fas_surrogate == b.fas_surrogate);
  REQUIRE(a.fr_targets.size() == 3);
  REQUIRE(a.fas_targets.size() == 2);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.fr_targets[i] == b.fr_targets[i]);
  for (std::size_t i = 0; i < 2; ++i) CHECK(a.fas_targets[i] == b.fas_targets[i]);
  CHECK(a.fr_models().size() == 4);
  CHECK(a.fas_models().front() == &a.fas_surrogate);
}

TEST_CASE("linear tail: score is w . h_k + b") {
  Rng rng(12);
  for (std::size_t k = 1; k <= linear_tail_trunk_depth(); ++k) {
    const std::size_t n = linear_tail_trunk_width(k);
    const auto ones = make_linear_tail_fas(k, std::vector<double>(n, 1.0), 0.0);
    const auto x = random_image(rng);
    const std::size_t taps[] = {k};
    const auto h = tap_values(ones, x, taps).at(k);
    double s = 0.0;
    for (double v : h.data()) s += v;
    CHECK(predict(ones, x)[0] == doctest::Approx(s).epsilon(1e-12));

    // Linearity: bumping h_j by delta moves the score by w_j * delta.
    std::vector<double> w(n);
    for (auto& e : w) e = rng.uniform(-1.0, 1.0);
    const auto m = make_linear_tail_fas(k, w, 0.3);
    const auto j = rng.below(n);
    Tensor bumped = h;
    bumped[j] += 0.25;
    const auto base = Segment(m, k + 1, k + 1).apply(h)[0];
    const auto moved = Segment(m, k + 1, k + 1).apply(bumped)[0];
    CHECK(moved - base == doctest::Approx(w[j] * 0.25).epsilon(1e-9));
  }
  CHECK_THROWS_AS(make_linear_tail_fas(1, {1.0, 2.0}, 0.0), ShapeError);
  CHECK_THROWS_AS(make_linear_tail_fas(linear_tail_trunk_depth() + 1, {}, 0.0), InvalidLayerError);
}

TEST_CASE("linear tail trunk is monotone in every pixel") {
  Rng rng(13);
  const std::size_t k = linear_tail_trunk_depth();
  const auto m = make_linear_tail_fas(k, std::vector<double>(linear_tail_trunk_width(k), 1.0), 0.0);
  const std::size_t taps[] = {k};
  for (int rep = 0; rep < 10; ++rep) {
    const auto x = random_image(rng);
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(1.0, y[i] + rng.uniform(0.0, 0.05));
    const auto hx = tap_values(m, x, taps).at(k);
    const auto hy = tap_values(m, y, taps).at(k);
    for (std::size_t i = 0; i < hx.size(); ++i) CHECK(hy[i] >= hx[i]);
  }
}

}  // TEST_SUITE
