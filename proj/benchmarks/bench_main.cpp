#include <benchmark/benchmark.h>

#include "rma/attack.hpp"
#include "rma/data_synth.hpp"
#include "rma/losses.hpp"
#include "rma/model_zoo.hpp"
#include "rma/rng.hpp"

using namespace rma;

namespace {

Tensor noise_image(std::uint64_t seed) {
  Rng rng(seed);
  auto t = Tensor::zeros(image_shape());
  for (auto& v : t.mutable_data()) v = rng.uniform(0.05, 0.95);
  return t;
}

void BM_FasForward(benchmark::State& state) {
  const auto fas = build_model(fas_surrogate_arch(), 1);
  const auto x = noise_image(1);
  for (auto _ : state) benchmark::DoNotOptimize(predict(fas, x));
}
BENCHMARK(BM_FasForward);

void BM_FrForward(benchmark::State& state) {
  const auto fr = build_model(fr_surrogate_arch(), 1);
  const auto x = noise_image(2);
  for (auto _ : state) benchmark::DoNotOptimize(predict(fr, x));
}
BENCHMARK(BM_FrForward);

void BM_FasMultiLayerGrad(benchmark::State& state) {
  const auto fas = build_model(fas_surrogate_arch(), 1);
  const auto x = noise_image(3);
  const auto layers = default_fas_layers(fas);
  AlphaMap alphas;
  for (auto k : layers) alphas[k] = -1;
  const auto loss = [&](Tape& tape, const Var& v) { return fas_multi_layer_loss(tape, fas, v, layers, alphas); };
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grad(loss, x));
}
BENCHMARK(BM_FasMultiLayerGrad);

void BM_AttackPair(benchmark::State& state) {
  const auto fr = build_model(fr_surrogate_arch(), 4);
  const auto fas = build_model(fas_surrogate_arch(), 5);
  const auto xs = noise_image(6);
  const auto xt = noise_image(7);
  const AttackConfig cfg;
  const auto m = static_cast<Method>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(attack(xs, xt, fr, fas, cfg, m));
  state.SetLabel(method_name(m));
}
BENCHMARK(BM_AttackPair)->Arg(static_cast<int>(Method::kFim))->Arg(static_cast<int>(Method::kRma))->Unit(benchmark::kMillisecond);

void BM_RenderImage(benchmark::State& state) {
  CorpusParams p;
  p.n_identities = 4;
  p.images_per_identity_per_liveness = 1;
  for (auto _ : state) benchmark::DoNotOptimize(gen_corpus(p));
}
BENCHMARK(BM_RenderImage)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
