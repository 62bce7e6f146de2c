#include <doctest.h>

#include <map>

#include "rma/attack.hpp"
#include "rma/eval.hpp"
#include "support.hpp"

using namespace rma;

namespace {

struct Trained {
  Corpus corpus;
  TapModel fr;
  TapModel fas;
};

// Default corpus and default training settings, surrogates only.
const Trained& trained() {
  static const Trained t = [] {
    Trained x;
    CorpusParams p;
    p.seed = 1;
    x.corpus = gen_corpus(p);
    const ZooParams z;
    x.fr = train_zoo_member(fr_surrogate_arch(), Objective::kIdentityClassification, 1, x.corpus, z);
    x.fas = train_zoo_member(fas_surrogate_arch(), Objective::kLiveSpoofBinary, 1, x.corpus, z);
    return x;
  }();
  return t;
}

}  // namespace

TEST_SUITE("learnability") {

TEST_CASE("FAS surrogate separates live from spoof on held-out identities") {
  const auto& t = trained();
  std::size_t right = 0, n = 0;
  for (auto i : t.corpus.indices(Split::kEval)) {
    const bool live = predict(t.fas, t.corpus.images[i].pixels)[0] >= 0.0;
    right += live == (t.corpus.entries[i].liveness == Liveness::kLive);
    ++n;
  }
  CHECK(static_cast<double>(right) / n >= 0.90);
}

TEST_CASE("FR surrogate ranks same-identity pairs above different-identity pairs") {
  const auto& t = trained();
  const auto idx = t.corpus.indices(Split::kEval);
  std::map<int, std::vector<std::size_t>> by_id;
  for (auto i : idx) by_id[t.corpus.entries[i].identity_id].push_back(i);
  Rng rng(5);
  std::size_t ok = 0;
  const std::size_t trials = 1000;
  for (std::size_t k = 0; k < trials; ++k) {
    const auto a = idx[rng.below(idx.size())];
    const auto& same = by_id[t.corpus.entries[a].identity_id];
    std::size_t p = a;
    while (p == a) p = same[rng.below(same.size())];
    std::size_t n = a;
    while (t.corpus.entries[n].identity_id == t.corpus.entries[a].identity_id) n = idx[rng.below(idx.size())];
    const auto ea = predict(t.fr, t.corpus.images[a].pixels);
    ok += cosine_similarity(ea, predict(t.fr, t.corpus.images[p].pixels)) >
          cosine_similarity(ea, predict(t.fr, t.corpus.images[n].pixels));
  }
  CHECK(static_cast<double>(ok) / trials >= 0.90);
}

TEST_CASE("unattacked spoof sources are rejected by the calibrated FAS surrogate") {
  const auto& t = trained();
  const auto cal = calibrate_fas_threshold(t.fas, t.corpus);
  const auto pairs = negative_pairs(t.corpus, 200, 3);
  std::size_t rejected = 0;
  for (const auto& p : pairs) rejected += sigmoid(predict(t.fas, t.corpus.images[p.source].pixels)[0]) < cal.threshold;
  CHECK(rejected >= 180);
}

TEST_CASE("white-box RMA lowers both losses below their first-iteration values") {
  const auto& t = trained();
  const auto pairs = negative_pairs(t.corpus, 200, 4);
  std::size_t both = 0;
  const AttackConfig cfg;
  for (const auto& p : pairs) {
    const auto r = attack(t.corpus.images[p.source].pixels, t.corpus.images[p.target].pixels, t.fr, t.fas, cfg,
                          Method::kRma);
    both += r.final_fr_loss < r.fr_loss_trace.front() && r.final_fas_loss < r.fas_loss_trace.front();
  }
  CHECK(static_cast<double>(both) / pairs.size() >= 0.95);
}

}  // TEST_SUITE

TEST_CASE("pooled FAS target does not collapse to a constant score" * doctest::test_suite("learnability")) {
  CorpusParams p;
  p.seed = 5;
  const auto corpus = gen_corpus(p);
  const auto pool = fas_target_archs().back();
  const auto m = train_zoo_member(pool, Objective::kLiveSpoofBinary, 5, corpus, ZooParams{});
  CHECK(calibrate_fas_threshold(m, corpus).eer <= 0.05);
}
