#include "rma/model_zoo.hpp"

#include <cmath>

#include "rma/rng.hpp"

namespace rma {
namespace {

Tensor random_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (auto& e : v) e = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

constexpr std::size_t kFasRestarts = 4;
constexpr double kFasMinTrainAccuracy = 0.75;

std::uint64_t name_tag(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

}  // namespace

TapModel build_model(const ArchSpec& arch, std::uint64_t seed) {
  const std::size_t blocks = arch.filters.size();
  if (blocks == 0 || arch.strides.size() != blocks || arch.kernels.size() != blocks ||
      arch.pool_after.size() != blocks) {
    throw std::invalid_argument("arch '" + arch.name + "': per-block vectors disagree");
  }
  auto rng = Rng::derive(seed, {0x1a1, name_tag(arch.name)});
  std::vector<Layer> layers;
  std::map<std::size_t, std::string> taps;
  Shape shape = image_shape();
  if (arch.input_pool > 1) {
    layers.push_back(Layer{LayerKind::kAvgPool, {}, {}, 1, arch.input_pool});
    shape = {shape[0], shape[1] / arch.input_pool, shape[2] / arch.input_pool};
  }
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t c = shape[0], k = arch.kernels[b], o = arch.filters[b];
    Layer conv;
    conv.kind = LayerKind::kConv2d;
    conv.stride = arch.strides[b];
    conv.weight = random_normal({o, c, k, k}, std::sqrt(2.0 / static_cast<double>(c * k * k)), rng);
    conv.bias = Tensor::zeros({o});
    layers.push_back(std::move(conv));
    shape = {o, (shape[1] - k) / arch.strides[b] + 1, (shape[2] - k) / arch.strides[b] + 1};
    layers.push_back(Layer{LayerKind::kRelu, {}, {}, 1, 2});
    if (arch.pool_after[b]) {
      layers.push_back(Layer{LayerKind::kAvgPool, {}, {}, 1, 2});
      shape = {shape[0], shape[1] / 2, shape[2] / 2};
    }
    taps[layers.size()] = "block" + std::to_string(b + 1);
  }
  const std::size_t flat = shape_size(shape);
  Layer dense;
  dense.kind = LayerKind::kDense;
  const std::size_t out = arch.head == HeadKind::kFrEmbedding ? arch.embedding_dim : 1;
  dense.weight = random_normal({out, flat}, std::sqrt(1.0 / static_cast<double>(flat)), rng);
  dense.bias = Tensor::zeros({out});
  layers.push_back(std::move(dense));
  if (arch.head == HeadKind::kFrEmbedding) {
    taps[layers.size()] = "fc";
    layers.push_back(Layer{LayerKind::kL2Normalize, {}, {}, 1, 2});
    taps[layers.size()] = "embedding";
  } else {
    taps[layers.size()] = "score";
  }
  return TapModel(arch.name, arch.head, image_shape(), std::move(layers), std::move(taps));
}

ArchSpec fr_surrogate_arch() {
  return {"fr-surrogate", HeadKind::kFrEmbedding, {8, 16, 32}, {1, 2, 1}, {3, 3, 3},
          {false, false, false}, 32, 2};
}

std::vector<ArchSpec> fr_target_archs() {
  return {
      {"fr-target-wide", HeadKind::kFrEmbedding, {12, 24, 32}, {1, 2, 1}, {3, 3, 3},
       {false, false, false}, 32, 2},
      {"fr-target-deep", HeadKind::kFrEmbedding, {8, 16, 24, 32}, {1, 2, 1, 1}, {3, 3, 3, 3},
       {false, false, false, false}, 32, 2},
      {"fr-target-pool", HeadKind::kFrEmbedding, {8, 16, 32}, {1, 1, 1}, {3, 3, 3},
       {true, false, false}, 32, 2},
  };
}

ArchSpec fas_surrogate_arch() {
  return {"fas-surrogate", HeadKind::kFasScore, {8, 16, 32}, {2, 2, 1}, {3, 3, 3},
          {false, false, false}, 1};
}

std::vector<ArchSpec> fas_target_archs() {
  return {
      {"fas-target-wide", HeadKind::kFasScore, {12, 24, 24}, {2, 2, 1}, {3, 3, 3},
       {false, false, false}, 1},
      {"fas-target-pool", HeadKind::kFasScore, {8, 16, 16}, {1, 1, 1}, {3, 3, 3},
       {true, true, false}, 1},
  };
}

std::vector<std::size_t> default_fr_layers(const TapModel& fr) {
  return {fr.tap_index("block2"), fr.tap_index("block3"), fr.tap_index("embedding")};
}

std::vector<std::size_t> default_fas_layers(const TapModel& fas) {
  return {fas.tap_index("block2"), fas.tap_index("block3"), fas.tap_index("score")};
}

std::vector<const TapModel*> Zoo::fr_models() const {
  std::vector<const TapModel*> out{&fr_surrogate};
  for (const auto& m : fr_targets) out.push_back(&m);
  return out;
}

std::vector<const TapModel*> Zoo::fas_models() const {
  std::vector<const TapModel*> out{&fas_surrogate};
  for (const auto& m : fas_targets) out.push_back(&m);
  return out;
}

TapModel train_zoo_member(const ArchSpec& arch, Objective objective, std::uint64_t seed,
                          const Corpus& corpus, const ZooParams& params) {
  const auto model_seed = mix64(seed ^ name_tag(arch.name));
  TrainParams tp;
  tp.objective = objective;
  tp.epochs = objective == Objective::kIdentityClassification ? params.fr_epochs : params.fas_epochs;
  tp.lr = params.lr;
  tp.batch_size = params.batch_size;
  tp.seed = model_seed;
  tp.input_noise = objective == Objective::kIdentityClassification ? params.fr_input_noise
                                                                   : params.fas_input_noise;
  if (objective == Objective::kIdentityClassification) return train(build_model(arch, model_seed), corpus, tp);
  // A FAS net whose ReLUs all die outputs a constant; restart it from a fresh
  // derived seed and keep the most accurate attempt.
  const auto idx = corpus.indices(Split::kTrain);
  TapModel best;
  std::size_t best_right = 0;
  for (std::size_t attempt = 0; attempt < kFasRestarts; ++attempt) {
    const auto s = attempt == 0 ? model_seed : mix64(model_seed + attempt);
    tp.seed = s;
    auto model = train(build_model(arch, s), corpus, tp);
    std::size_t right = 0;
    for (auto i : idx) {
      const bool live = predict(model, corpus.images[i].pixels)[0] >= 0.0;
      right += live == (corpus.entries[i].liveness == Liveness::kLive);
    }
    if (attempt == 0 || right > best_right) {
      best = std::move(model);
      best_right = right;
    }
    if (static_cast<double>(right) >= kFasMinTrainAccuracy * static_cast<double>(idx.size())) break;
  }
  return best;
}

Zoo make_zoo(std::uint64_t seed, const Corpus& corpus, const ZooParams& params) {
  auto fit = [&](const ArchSpec& arch, Objective objective) {
    return train_zoo_member(arch, objective, seed, corpus, params);
  };
  Zoo zoo;
  zoo.fr_surrogate = fit(fr_surrogate_arch(), Objective::kIdentityClassification);
  for (const auto& a : fr_target_archs()) zoo.fr_targets.push_back(fit(a, Objective::kIdentityClassification));
  zoo.fas_surrogate = fit(fas_surrogate_arch(), Objective::kLiveSpoofBinary);
  for (const auto& a : fas_target_archs()) zoo.fas_targets.push_back(fit(a, Objective::kLiveSpoofBinary));
  return zoo;
}

namespace {

constexpr std::uint64_t kTrunkSeed = 0x7a11ULL;

std::vector<Layer> monotone_trunk() {
  Rng rng(kTrunkSeed);
  auto nonneg = [&rng](Shape s) {
    std::vector<double> v(shape_size(s));
    for (auto& e : v) e = rng.uniform(0.02, 0.3);
    return Tensor(std::move(s), std::move(v));
  };
  std::vector<Layer> layers;
  layers.push_back(Layer{LayerKind::kConv2d, nonneg({4, 3, 3, 3}), Tensor::filled({4}, 0.05), 2, 2});
  layers.push_back(Layer{LayerKind::kRelu, {}, {}, 1, 2});
  layers.push_back(Layer{LayerKind::kConv2d, nonneg({4, 4, 3, 3}), Tensor::filled({4}, 0.05), 2, 2});
  layers.push_back(Layer{LayerKind::kRelu, {}, {}, 1, 2});
  layers.push_back(Layer{LayerKind::kAvgPool, {}, {}, 1, 2});
  return layers;
}

std::vector<Layer> trunk_prefix(std::size_t k) {
  auto layers = monotone_trunk();
  if (k < 1 || k > layers.size()) {
    throw InvalidLayerError("linear-tail trunk has layers 1.." + std::to_string(layers.size()) +
                            ", got " + std::to_string(k));
  }
  layers.resize(k);
  return layers;
}

std::size_t prefix_width(const std::vector<Layer>& layers) {
  Shape s = image_shape();
  for (const auto& l : layers) {
    if (l.kind == LayerKind::kConv2d) {
      s = {l.weight.dim(0), (s[1] - l.weight.dim(2)) / l.stride + 1,
           (s[2] - l.weight.dim(3)) / l.stride + 1};
    } else if (l.kind == LayerKind::kAvgPool) {
      s = {s[0], s[1] / l.window, s[2] / l.window};
    }
  }
  return shape_size(s);
}

}  // namespace

std::size_t linear_tail_trunk_depth() { return monotone_trunk().size(); }

std::size_t linear_tail_trunk_width(std::size_t k) { return prefix_width(trunk_prefix(k)); }

TapModel make_linear_tail_fas(std::size_t k, const std::vector<double>& w, double b) {
  auto layers = trunk_prefix(k);
  const std::size_t width = prefix_width(layers);
  if (w.size() != width) {
    throw ShapeError("make_linear_tail_fas: w has " + std::to_string(w.size()) +
                     " entries but layer " + std::to_string(k) + " has " +
                     std::to_string(width) + " units");
  }
  layers.push_back(Layer{LayerKind::kDense, Tensor({1, width}, w), Tensor::vector({b}), 1, 2});
  std::map<std::size_t, std::string> taps;
  for (std::size_t i = 1; i <= k; ++i) taps[i] = "trunk" + std::to_string(i);
  taps[k + 1] = "score";
  return TapModel("linear-tail-k" + std::to_string(k), HeadKind::kFasScore, image_shape(),
                  std::move(layers), std::move(taps));
}

}  // namespace rma
