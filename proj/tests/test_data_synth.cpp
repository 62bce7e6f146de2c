#include <doctest.h>

#include <filesystem>
#include <set>

#include "rma/binary_io.hpp"
#include "rma/data_synth.hpp"
#include "support.hpp"

using namespace rma;

TEST_SUITE("data_synth") {

TEST_CASE("render is deterministic and clamped") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto spec = IdentitySpec::make(s, static_cast<int>(s % 5));
    for (auto l : {Liveness::kLive, Liveness::kSpoof}) {
      const auto a = render(spec, l, 100 + s);
      const auto b = render(spec, l, 100 + s);
      CHECK(a.pixels == b.pixels);
      CHECK(a.pixels.shape() == image_shape());
      for (double v : a.pixels.data()) CHECK((v >= 0.0 && v <= 1.0));
    }
  }
}

TEST_CASE("spoof renderings differ visibly from live ones") {
  // Measured on 100 seeded samples with the default style.
  double total = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto spec = IdentitySpec::make(s, static_cast<int>(s));
    const auto live = render(spec, Liveness::kLive, s);
    const auto spoof = render(spec, Liveness::kSpoof, s);
    double d = 0.0;
    for (std::size_t i = 0; i < live.pixels.size(); ++i) d += std::abs(live.pixels[i] - spoof.pixels[i]);
    total += d / static_cast<double>(live.pixels.size());
  }
  CHECK(total / 100.0 > 0.02);
}

TEST_CASE("corpus counts, splits and determinism") {
  CorpusParams p;
  p.seed = 5;
  p.n_identities = 10;
  p.images_per_identity_per_liveness = 5;
  const auto c = gen_corpus(p);
  CHECK(c.images.size() == 100);
  CHECK(c.entries.size() == 100);
  std::set<int> train(c.train_identities.begin(), c.train_identities.end());
  for (int id : c.eval_identities) CHECK(train.count(id) == 0);
  CHECK(train.size() + c.eval_identities.size() == 10);
  for (std::size_t i = 0; i < c.images.size(); ++i) {
    CHECK(c.images[i].identity_id == c.entries[i].identity_id);
    CHECK(c.images[i].liveness == c.entries[i].liveness);
  }
  const auto again = gen_corpus(p);
  for (std::size_t i = 0; i < c.images.size(); ++i) CHECK(c.images[i].pixels == again.images[i].pixels);
  CHECK(c.eval_identities == again.eval_identities);
}

TEST_CASE("train and eval identities are disjoint for every seed") {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    CorpusParams p;
    p.seed = seed;
    p.n_identities = 4 + seed % 9;
    p.images_per_identity_per_liveness = 1;
    const auto c = gen_corpus(p);
    std::set<int> train(c.train_identities.begin(), c.train_identities.end());
    for (int id : c.eval_identities) CHECK(train.count(id) == 0);
    for (auto i : c.indices(Split::kEval)) {
      CHECK(std::find(c.eval_identities.begin(), c.eval_identities.end(), c.entries[i].identity_id) !=
            c.eval_identities.end());
    }
  }
}

TEST_CASE("too few identities is an error") {
  CorpusParams p;
  p.n_identities = 3;
  CHECK_THROWS_AS(gen_corpus(p), InsufficientIdentitiesError);
}

TEST_CASE("negative pairs are spoof-to-live across identities") {
  const auto c = gen_corpus(rma::testing::small_corpus_params());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto pairs = negative_pairs(c, 50, seed);
    CHECK(pairs.size() == 50);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& p : pairs) {
      CHECK(c.entries[p.source].identity_id != c.entries[p.target].identity_id);
      CHECK(c.entries[p.source].liveness == Liveness::kSpoof);
      CHECK(c.entries[p.target].liveness == Liveness::kLive);
      CHECK(c.entries[p.source].split == Split::kEval);
      CHECK(c.entries[p.target].split == Split::kEval);
      seen.insert({p.source, p.target});
    }
    CHECK(seen.size() == 50);
  }
  CHECK_THROWS_AS(negative_pairs(c, 1000000, 1), std::invalid_argument);
}

TEST_CASE("corpus save and load round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "rma_test_corpus";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  CorpusParams p;
  p.seed = 2;
  p.n_identities = 6;
  p.images_per_identity_per_liveness = 2;
  p.style.grid_amplitude = 0.09;
  const auto c = gen_corpus(p);
  save_corpus(dir, c, "abc123");
  std::string hash;
  const auto back = load_corpus(dir, &hash);
  CHECK(hash == "abc123");
  CHECK(back.params.style.grid_amplitude == 0.09);
  CHECK(back.eval_identities == c.eval_identities);
  REQUIRE(back.images.size() == c.images.size());
  for (std::size_t i = 0; i < c.images.size(); ++i) {
    CHECK(back.images[i].pixels == c.images[i].pixels);
    CHECK(back.entries[i].noise_seed == c.entries[i].noise_seed);
  }
  const auto first = read_file(dir / "manifest.json");
  save_corpus(dir, gen_corpus(p), "abc123");
  CHECK(read_file(dir / "manifest.json") == first);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
