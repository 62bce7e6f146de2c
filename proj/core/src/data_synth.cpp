#include "rma/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "json.hpp"
#include "rma/binary_io.hpp"
#include "rma/rng.hpp"

namespace rma {
namespace {

constexpr std::uint64_t kBasisSeed = 0x5eedf00dULL;
constexpr std::size_t kMaxFreq = 4;

struct Basis {
  std::vector<std::pair<std::size_t, std::size_t>> freqs;
  // mixing[ch][k][j]: latent j -> coefficient of basis k in channel ch
  std::vector<double> mixing;

  Basis() {
    for (std::size_t fy = 0; fy < kMaxFreq; ++fy)
      for (std::size_t fx = 0; fx < kMaxFreq; ++fx)
        if (fx + fy > 0) freqs.emplace_back(fx, fy);
    Rng rng(kBasisSeed);
    mixing.resize(kImageChannels * freqs.size() * kLatentDim);
    for (auto& m : mixing) m = rng.normal();
  }

  double mix(std::size_t ch, std::size_t k, std::size_t j) const {
    return mixing[(ch * freqs.size() + k) * kLatentDim + j];
  }
};

const Basis& basis() {
  static const Basis b;
  return b;
}

}  // namespace

const char* liveness_name(Liveness l) { return l == Liveness::kLive ? "live" : "spoof"; }

Liveness parse_liveness(const std::string& s) {
  if (s == "live") return Liveness::kLive;
  if (s == "spoof") return Liveness::kSpoof;
  throw std::invalid_argument("unknown liveness '" + s + "'");
}

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "eval"; }

IdentitySpec IdentitySpec::make(std::uint64_t seed, int identity_id) {
  IdentitySpec spec;
  spec.identity_id = identity_id;
  auto rng = Rng::derive(seed, {0x1d, static_cast<std::uint64_t>(identity_id)});
  for (auto& z : spec.latent) z = rng.normal();
  return spec;
}

FaceImage render(const IdentitySpec& spec, Liveness liveness, std::uint64_t noise_seed,
                 const RenderStyle& style) {
  const auto& b = basis();
  // Nuisance draws do not depend on liveness: a live/spoof pair rendered with
  // the same noise seed differs only by the spoof artifact.
  auto rng = Rng::derive(noise_seed, {0x4e, static_cast<std::uint64_t>(spec.identity_id)});

  std::array<double, kLatentDim> z{};
  for (std::size_t j = 0; j < kLatentDim; ++j) {
    z[j] = spec.latent[j] + style.latent_jitter * rng.normal();
  }
  const double shift_x = rng.uniform(-style.max_shift_px, style.max_shift_px);
  const double shift_y = rng.uniform(-style.max_shift_px, style.max_shift_px);
  const double brightness = rng.uniform(-style.brightness_jitter, style.brightness_jitter);
  const auto phase_x = static_cast<double>(rng.below(style.grid_period));
  const auto phase_y = static_cast<double>(rng.below(style.grid_period));

  const std::size_t nb = b.freqs.size();
  std::vector<double> coef(kImageChannels * nb, 0.0);
  const double norm = 1.0 / std::sqrt(static_cast<double>(kLatentDim));
  for (std::size_t ch = 0; ch < kImageChannels; ++ch) {
    for (std::size_t k = 0; k < nb; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < kLatentDim; ++j) s += b.mix(ch, k, j) * z[j];
      const auto [fx, fy] = b.freqs[k];
      coef[ch * nb + k] =
          style.basis_amplitude * norm * s / static_cast<double>(1 + fx + fy);
    }
  }

  constexpr double pi = std::numbers::pi;
  const double n = static_cast<double>(kImageSize);
  std::vector<double> px(kImageChannels * kImageSize * kImageSize);
  for (std::size_t y = 0; y < kImageSize; ++y) {
    for (std::size_t x = 0; x < kImageSize; ++x) {
      const double u = (static_cast<double>(x) + 0.5 + shift_x) / n;
      const double v = (static_cast<double>(y) + 0.5 + shift_y) / n;
      double grid = 0.0;
      if (liveness == Liveness::kSpoof) {
        const double period = static_cast<double>(style.grid_period);
        grid = 0.5 * style.grid_amplitude *
               (std::cos(2.0 * pi * (static_cast<double>(x) + phase_x) / period) +
                std::cos(2.0 * pi * (static_cast<double>(y) + phase_y) / period));
      }
      for (std::size_t ch = 0; ch < kImageChannels; ++ch) {
        double val = 0.5 + brightness;
        for (std::size_t k = 0; k < nb; ++k) {
          const auto [fx, fy] = b.freqs[k];
          val += coef[ch * nb + k] * std::cos(pi * static_cast<double>(fx) * u) *
                 std::cos(pi * static_cast<double>(fy) * v);
        }
        val += style.pixel_noise * rng.normal();
        if (liveness == Liveness::kSpoof) {
          val += grid;
          if (ch == 0) val += style.red_shift;
          if (ch == 2) val += style.blue_shift;
        }
        px[(ch * kImageSize + y) * kImageSize + x] = std::clamp(val, 0.0, 1.0);
      }
    }
  }
  return {Tensor(image_shape(), std::move(px)), spec.identity_id, liveness};
}

std::vector<std::size_t> Corpus::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(i);
  return out;
}

std::vector<std::size_t> Corpus::indices(Split split, Liveness liveness) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split && entries[i].liveness == liveness) out.push_back(i);
  return out;
}

Corpus gen_corpus(const CorpusParams& params) {
  if (params.n_identities < 4) {
    throw InsufficientIdentitiesError("gen_corpus needs at least 4 identities, got " +
                                      std::to_string(params.n_identities));
  }
  if (params.images_per_identity_per_liveness == 0) {
    throw std::invalid_argument("gen_corpus: images_per_identity_per_liveness must be >= 1");
  }
  Corpus c;
  c.params = params;
  std::vector<int> ids(params.n_identities);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  auto rng = Rng::derive(params.seed, {0x5e});
  rng.shuffle(ids);
  const std::size_t n_eval = std::max<std::size_t>(2, params.n_identities / 3);
  c.eval_identities.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_eval));
  c.train_identities.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_eval), ids.end());
  std::sort(c.eval_identities.begin(), c.eval_identities.end());
  std::sort(c.train_identities.begin(), c.train_identities.end());
  const std::set<int> eval_set(c.eval_identities.begin(), c.eval_identities.end());

  for (std::size_t id = 0; id < params.n_identities; ++id) {
    const int identity = static_cast<int>(id);
    const auto spec = IdentitySpec::make(params.seed, identity);
    const Split split = eval_set.count(identity) ? Split::kEval : Split::kTrain;
    for (Liveness l : {Liveness::kLive, Liveness::kSpoof}) {
      for (std::size_t k = 0; k < params.images_per_identity_per_liveness; ++k) {
        const std::uint64_t noise_seed = mix64(
            params.seed ^ mix64(id * 1000003ULL + k + (l == Liveness::kSpoof ? 500009ULL : 0)));
        c.entries.push_back({identity, l, split, noise_seed});
        c.images.push_back(render(spec, l, noise_seed, params.style));
      }
    }
  }
  return c;
}

std::vector<ImagePair> negative_pairs(const Corpus& corpus, std::size_t count,
                                      std::uint64_t seed) {
  const auto spoofs = corpus.indices(Split::kEval, Liveness::kSpoof);
  const auto lives = corpus.indices(Split::kEval, Liveness::kLive);
  std::vector<ImagePair> all;
  for (auto s : spoofs)
    for (auto t : lives)
      if (corpus.entries[s].identity_id != corpus.entries[t].identity_id) all.push_back({s, t});
  if (all.size() < count) {
    throw std::invalid_argument("requested " + std::to_string(count) +
                                " negative pairs but the eval split only has " +
                                std::to_string(all.size()));
  }
  auto rng = Rng::derive(seed, {0x9a});
  // Partial Fisher-Yates: the first `count` slots end up a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(all[i], all[i + rng.below(all.size() - i)]);
  }
  all.resize(count);
  return all;
}

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus,
                 const std::string& config_hash) {
  using nlohmann::json;
  std::string blob;
  json entries = json::array();
  for (std::size_t i = 0; i < corpus.images.size(); ++i) {
    const auto& e = corpus.entries[i];
    entries.push_back({{"index", i},
                       {"identity_id", e.identity_id},
                       {"liveness", liveness_name(e.liveness)},
                       {"split", split_name(e.split)},
                       {"noise_seed", e.noise_seed},
                       {"offset", blob.size()}});
    blob += encode_tensor(corpus.images[i].pixels, kImageMagic);
  }
  json manifest = {{"format", "rma-corpus"},
                   {"version", 1},
                   {"config_hash", config_hash},
                   {"seed", corpus.params.seed},
                   {"n_identities", corpus.params.n_identities},
                   {"images_per_identity_per_liveness",
                    corpus.params.images_per_identity_per_liveness},
                   {"style", {{"basis_amplitude", corpus.params.style.basis_amplitude},
                              {"latent_jitter", corpus.params.style.latent_jitter},
                              {"max_shift_px", corpus.params.style.max_shift_px},
                              {"brightness_jitter", corpus.params.style.brightness_jitter},
                              {"pixel_noise", corpus.params.style.pixel_noise},
                              {"grid_amplitude", corpus.params.style.grid_amplitude},
                              {"grid_period", corpus.params.style.grid_period},
                              {"red_shift", corpus.params.style.red_shift},
                              {"blue_shift", corpus.params.style.blue_shift}}},
                   {"train_identities", corpus.train_identities},
                   {"eval_identities", corpus.eval_identities},
                   {"images_file", "images.bin"},
                   {"images_bytes", blob.size()},
                   {"entries", std::move(entries)}};
  write_file_atomic(dir / "images.bin", blob);
  write_file_atomic(dir / "manifest.json", manifest.dump(1) + "\n");
}

Corpus load_corpus(const std::filesystem::path& dir, std::string* config_hash) {
  using nlohmann::json;
  const auto manifest = json::parse(read_file(dir / "manifest.json"));
  if (manifest.at("format") != "rma-corpus") throw FormatError("not a corpus manifest");
  const auto blob = read_file(dir / manifest.at("images_file").get<std::string>());
  if (blob.size() != manifest.at("images_bytes").get<std::size_t>()) {
    throw FormatError("corpus image blob size does not match manifest");
  }
  Corpus c;
  c.params.seed = manifest.at("seed").get<std::uint64_t>();
  c.params.n_identities = manifest.at("n_identities").get<std::size_t>();
  c.params.images_per_identity_per_liveness =
      manifest.at("images_per_identity_per_liveness").get<std::size_t>();
  const auto& st = manifest.at("style");
  auto& style = c.params.style;
  style.basis_amplitude = st.at("basis_amplitude").get<double>();
  style.latent_jitter = st.at("latent_jitter").get<double>();
  style.max_shift_px = st.at("max_shift_px").get<double>();
  style.brightness_jitter = st.at("brightness_jitter").get<double>();
  style.pixel_noise = st.at("pixel_noise").get<double>();
  style.grid_amplitude = st.at("grid_amplitude").get<double>();
  style.grid_period = st.at("grid_period").get<std::size_t>();
  style.red_shift = st.at("red_shift").get<double>();
  style.blue_shift = st.at("blue_shift").get<double>();
  c.train_identities = manifest.at("train_identities").get<std::vector<int>>();
  c.eval_identities = manifest.at("eval_identities").get<std::vector<int>>();
  for (const auto& e : manifest.at("entries")) {
    CorpusEntry entry;
    entry.identity_id = e.at("identity_id").get<int>();
    entry.liveness = parse_liveness(e.at("liveness").get<std::string>());
    entry.split = e.at("split").get<std::string>() == "train" ? Split::kTrain : Split::kEval;
    entry.noise_seed = e.at("noise_seed").get<std::uint64_t>();
    const auto offset = e.at("offset").get<std::size_t>();
    if (offset > blob.size()) throw FormatError("image offset past end of blob");
    ByteReader reader(std::string_view(blob).substr(offset));
    auto pixels = decode_tensor(reader, kImageMagic);
    if (pixels.shape() != image_shape()) throw FormatError("corpus image has wrong shape");
    c.images.push_back({std::move(pixels), entry.identity_id, entry.liveness});
    c.entries.push_back(entry);
  }
  if (config_hash) *config_hash = manifest.value("config_hash", "");
  return c;
}

}  // namespace rma
