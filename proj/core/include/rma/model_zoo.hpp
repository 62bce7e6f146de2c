#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rma/data_synth.hpp"
#include "rma/model.hpp"

namespace rma {

/// Conv blocks (conv + relu, optionally followed by 2x2 average pooling)
/// and a dense head. FR heads end in a 32-d L2-normalized embedding; FAS
/// heads end in a single pre-sigmoid logit.
struct ArchSpec {
  std::string name;
  HeadKind head = HeadKind::kFrEmbedding;
  std::vector<std::size_t> filters;
  std::vector<std::size_t> strides;
  std::vector<std::size_t> kernels;
  std::vector<bool> pool_after;
  std::size_t embedding_dim = 32;
  /// Window of a fixed average-pooling stem applied to the input; 1 = none.
  std::size_t input_pool = 1;
};

/// He-initialized model. Taps: "block<n>" after each block's activation
/// (after pooling when present), "fc" on the FR pre-normalization dense
/// output, and "embedding" / "score" on the final layer.
TapModel build_model(const ArchSpec& arch, std::uint64_t seed);

ArchSpec fr_surrogate_arch();
std::vector<ArchSpec> fr_target_archs();
ArchSpec fas_surrogate_arch();
std::vector<ArchSpec> fas_target_archs();

/// Default attack layer sets on the surrogates: {block2, block3, final}.
std::vector<std::size_t> default_fr_layers(const TapModel& fr);
std::vector<std::size_t> default_fas_layers(const TapModel& fas);

enum class Objective { kIdentityClassification, kLiveSpoofBinary };

struct TrainParams {
  Objective objective = Objective::kLiveSpoofBinary;
  std::size_t epochs = 6;
  double lr = 2e-3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  /// Logit scale of the discarded cosine classifier used for FR training.
  double fr_logit_scale = 16.0;
  /// Standard deviation of Gaussian pixel noise added to each training
  /// sample (not clamped).
  double input_noise = 0.0;
};

class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(const std::string& model, std::size_t epoch);
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

/// Adam on the train split of `corpus`. FR: softmax identity classification
/// on the scaled unit embedding through a head that is discarded afterwards.
/// FAS: sigmoid cross-entropy, live = 1. Deterministic for a given seed.
TapModel train(TapModel model, const Corpus& corpus, const TrainParams& params);

struct ZooParams {
  std::size_t fr_epochs = 16;
  std::size_t fas_epochs = 10;
  double lr = 2e-3;
  std::size_t batch_size = 16;
  /// Training-time pixel noise, per objective.
  double fr_input_noise = 0.1;
  double fas_input_noise = 0.03;
};

struct Zoo {
  TapModel fr_surrogate;
  std::vector<TapModel> fr_targets;
  TapModel fas_surrogate;
  std::vector<TapModel> fas_targets;

  std::vector<const TapModel*> fr_models() const;
  std::vector<const TapModel*> fas_models() const;
};

/// One zoo member, initialized and trained exactly as make_zoo does. A FAS
/// member that stays near chance on its training split is retrained from a
/// derived seed, up to 4 attempts; the most accurate attempt is kept.
TapModel train_zoo_member(const ArchSpec& arch, Objective objective, std::uint64_t seed,
                          const Corpus& corpus, const ZooParams& params);

/// Builds and trains every model. Each model gets its own init and
/// shuffling seed derived from `seed` and its name.
Zoo make_zoo(std::uint64_t seed, const Corpus& corpus, const ZooParams& params = {});

/// Monotone trunk used by make_linear_tail_fas: nonnegative-weight conv
/// blocks, so every trunk activation is nondecreasing in every pixel.
/// Valid k are 1..linear_tail_trunk_depth().
std::size_t linear_tail_trunk_depth();
std::size_t linear_tail_trunk_width(std::size_t k);

/// FAS model whose layers 1..k are the monotone trunk and whose layer k+1
/// computes exactly w . flatten(h_k) + b.
TapModel make_linear_tail_fas(std::size_t k, const std::vector<double>& w, double b);

}  // namespace rma
