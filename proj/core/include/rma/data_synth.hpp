#pragma once

// Procedural identity corpus: each identity is a 16-d latent that mixes a
// fixed low-frequency cosine basis into a 3x32x32 image. Spoof renderings
// add a period-4 grid pattern and a red/blue channel shift.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rma/tensor.hpp"

namespace rma {

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kLatentDim = 16;

inline Shape image_shape() { return {kImageChannels, kImageSize, kImageSize}; }

enum class Liveness { kLive, kSpoof };

const char* liveness_name(Liveness l);
Liveness parse_liveness(const std::string& s);

struct IdentitySpec {
  int identity_id = 0;
  std::array<double, kLatentDim> latent{};

  /// Latent drawn from a standard normal stream keyed on (seed, identity_id).
  static IdentitySpec make(std::uint64_t seed, int identity_id);
};

struct FaceImage {
  Tensor pixels;  // (3, 32, 32), every value in [0, 1]
  int identity_id = 0;
  Liveness liveness = Liveness::kLive;
};

/// Renderer knobs. Defaults are the tuned constants.
struct RenderStyle {
  double basis_amplitude = 0.04;
  double latent_jitter = 0.30;
  double max_shift_px = 1.0;
  double brightness_jitter = 0.05;
  double pixel_noise = 0.01;
  double grid_amplitude = 0.06;
  std::size_t grid_period = 4;
  double red_shift = 0.02;
  double blue_shift = -0.02;
};

FaceImage render(const IdentitySpec& spec, Liveness liveness, std::uint64_t noise_seed,
                 const RenderStyle& style = {});

enum class Split { kTrain, kEval };

const char* split_name(Split s);

struct CorpusParams {
  std::uint64_t seed = 1;
  std::size_t n_identities = 144;
  std::size_t images_per_identity_per_liveness = 8;
  RenderStyle style;
};

struct CorpusEntry {
  int identity_id = 0;
  Liveness liveness = Liveness::kLive;
  Split split = Split::kTrain;
  std::uint64_t noise_seed = 0;
};

class InsufficientIdentitiesError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Images with disjoint train/eval identity sets. `images[i]` is described
/// by `entries[i]`.
struct Corpus {
  CorpusParams params;
  std::vector<int> train_identities;
  std::vector<int> eval_identities;
  std::vector<CorpusEntry> entries;
  std::vector<FaceImage> images;

  std::vector<std::size_t> indices(Split split) const;
  std::vector<std::size_t> indices(Split split, Liveness liveness) const;
};

Corpus gen_corpus(const CorpusParams& params);

/// Impersonation pair: spoof source of one identity, live target of another.
struct ImagePair {
  std::size_t source = 0;  // index into Corpus::images, spoof
  std::size_t target = 0;  // index into Corpus::images, live, other identity
};

/// Seeded sample of distinct negative pairs drawn from the eval split.
std::vector<ImagePair> negative_pairs(const Corpus& corpus, std::size_t count,
                                      std::uint64_t seed);

/// corpus/manifest.json plus corpus/images.bin (concatenated image records,
/// offsets recorded in the manifest).
void save_corpus(const std::filesystem::path& dir, const Corpus& corpus,
                 const std::string& config_hash);
Corpus load_corpus(const std::filesystem::path& dir, std::string* config_hash = nullptr);

}  // namespace rma
