#include "rma/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "rma/binary_io.hpp"
#include "rma/rng.hpp"

namespace rma {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
  if (!obj.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (const auto& [k, v] : obj.items()) {
    (void)v;
    if (std::find_if(keys.begin(), keys.end(), [&](const char* s) { return k == s; }) == keys.end()) {
      throw std::invalid_argument("config: unknown key '" + where + (where.empty() ? "" : ".") + k + "'");
    }
  }
}

template <typename T>
void read_opt(const json& obj, const char* key, T& dst) {
  if (obj.contains(key)) dst = obj.at(key).get<T>();
}

std::vector<Method> parse_methods(const json& arr) {
  std::vector<Method> out;
  for (const auto& m : arr) out.push_back(parse_method(m.get<std::string>()));
  return out;
}

json methods_json(const std::vector<Method>& ms) {
  json arr = json::array();
  for (auto m : ms) arr.push_back(method_name(m));
  return arr;
}

json style_json(const RenderStyle& s) {
  return {{"basis_amplitude", s.basis_amplitude},     {"latent_jitter", s.latent_jitter},
          {"max_shift_px", s.max_shift_px},           {"brightness_jitter", s.brightness_jitter},
          {"pixel_noise", s.pixel_noise},             {"grid_amplitude", s.grid_amplitude},
          {"grid_period", s.grid_period},             {"red_shift", s.red_shift},
          {"blue_shift", s.blue_shift}};
}

json alphas_json(const AlphaMap& alphas) {
  json obj = json::object();
  for (const auto& [k, a] : alphas) obj[std::to_string(k)] = a;
  return obj;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json read_json(const fs::path& path, const std::string& command) {
  if (!fs::exists(path)) throw MissingArtifactError(path, command);
  return json::parse(read_file(path));
}

void check_hash(const json& manifest, const std::string& expected, const fs::path& where) {
  const auto got = manifest.at("config_hash").get<std::string>();
  if (got != expected) {
    throw ConfigHashMismatchError("artifact " + where.string() + " was produced by config " + got +
                                  ", current config is " + expected);
  }
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

struct ModelEntry {
  std::string name;
  std::string role;
  std::string file;
};

std::vector<ModelEntry> zoo_entries(const Zoo& zoo) {
  std::vector<ModelEntry> out;
  out.push_back({zoo.fr_surrogate.name(), "fr-surrogate", zoo.fr_surrogate.name() + ".rmaw"});
  for (const auto& m : zoo.fr_targets) out.push_back({m.name(), "fr-target", m.name() + ".rmaw"});
  out.push_back({zoo.fas_surrogate.name(), "fas-surrogate", zoo.fas_surrogate.name() + ".rmaw"});
  for (const auto& m : zoo.fas_targets) out.push_back({m.name(), "fas-target", m.name() + ".rmaw"});
  return out;
}

std::vector<ImagePair> run_pairs(const RunConfig& config, const Corpus& corpus) {
  return negative_pairs(corpus, config.eval.pairs, config.pair_seed());
}

std::string pair_stem(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pair_%05zu", id);
  return buf;
}

void attack_method(const RunConfig& config, const std::string& hash, const Corpus& corpus,
                   const Zoo& zoo, const std::vector<ImagePair>& pairs, Method method,
                   const fs::path& dir) {
  fs::create_directories(dir);
  parallel_for(pairs.size(), config.effective_jobs(), [&](std::size_t p) {
    const auto& xs = corpus.images[pairs[p].source].pixels;
    const auto& xt = corpus.images[pairs[p].target].pixels;
    const auto r = attack(xs, xt, zoo.fr_surrogate, zoo.fas_surrogate, config.attack, method);
    const auto stem = pair_stem(p);
    write_image_file(dir / (stem + ".img"), r.x_adv);
    json side = {{"config_hash", hash},
                 {"method", method_name(method)},
                 {"pair_id", p},
                 {"source_index", pairs[p].source},
                 {"target_index", pairs[p].target},
                 {"alphas", alphas_json(r.alphas)},
                 {"fr_loss_trace", r.fr_loss_trace},
                 {"fas_loss_trace", r.fas_loss_trace},
                 {"fr_weight_trace", r.fr_weight_trace},
                 {"fas_weight_trace", r.fas_weight_trace},
                 {"final_fr_loss", finite_or_null(r.final_fr_loss)},
                 {"final_fas_loss", finite_or_null(r.final_fas_loss)}};
    write_json(dir / (stem + ".json"), side);
  });
  write_json(dir / "manifest.json", {{"config_hash", hash},
                                     {"tool_version", kToolVersion},
                                     {"method", method_name(method)},
                                     {"pairs", pairs.size()}});
}

EvalReport evaluate_method(const RunConfig& config, const std::string& hash, const Corpus& corpus,
                           const Zoo& zoo, const Thresholds& thresholds,
                           const std::vector<ImagePair>& pairs, Method method, const fs::path& adv_dir) {
  const auto manifest = read_json(adv_dir / "manifest.json", "attack");
  check_hash(manifest, hash, adv_dir);
  if (manifest.at("pairs").get<std::size_t>() != pairs.size()) {
    throw ConfigHashMismatchError("adversarial set " + adv_dir.string() + " has a different pair count");
  }
  const auto frm = zoo.fr_models();
  const auto fasm = zoo.fas_models();
  std::vector<PairVerdict> verdicts(pairs.size());
  parallel_for(pairs.size(), config.effective_jobs(), [&](std::size_t p) {
    const auto stem = pair_stem(p);
    const auto side = read_json(adv_dir / (stem + ".json"), "attack");
    check_hash(side, hash, adv_dir / (stem + ".json"));
    const auto img = adv_dir / (stem + ".img");
    if (!fs::exists(img)) throw MissingArtifactError(img, "attack");
    verdicts[p] = judge(p, read_image_file(img), corpus.images[pairs[p].target].pixels, frm, fasm,
                        thresholds);
  });
  auto report = aggregate(std::move(verdicts), thresholds);
  report.config_hash = hash;
  report.seed = config.seed;
  report.method = method_name(method);
  return report;
}

void write_report(const fs::path& dir, const EvalReport& report, Method method) {
  fs::create_directories(dir);
  write_file_atomic(dir / (method_slug(method) + ".json"), report_json(report));
  write_file_atomic(dir / (method_slug(method) + ".csv"), report_csv(report));
}

double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return 0.0;
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

json ablate_summary(const std::vector<EvalReport>& reports, const std::string& hash) {
  auto find = [&](Method m) -> const EvalReport* {
    for (const auto& r : reports)
      if (r.method == method_name(m)) return &r;
    return nullptr;
  };
  json joint = json::array(), fas = json::array(), fr = json::array();
  for (auto m : {Method::kFim, Method::kFimMfa, Method::kMfaRib, Method::kRma})
    if (const auto* r = find(m))
      joint.push_back({{"method", r->method}, {"black_box_asr_joint", r->black_box_asr_joint}});
  for (auto m : {Method::kVanillaFas, Method::kRsFas, Method::kRibOnly}) {
    const auto* r = find(m);
    if (!r) continue;
    json targets = json::array();
    for (std::size_t j = 0; j < r->thresholds.fas.size(); ++j) {
      if (r->thresholds.fas[j].white_box) continue;
      std::vector<double> s;
      for (const auto& v : r->verdicts) s.push_back(v.fas_score[j]);
      std::sort(s.begin(), s.end());
      double mean = 0.0;
      for (double x : s) mean += x;
      mean /= static_cast<double>(std::max<std::size_t>(1, s.size()));
      targets.push_back({{"model", r->thresholds.fas[j].model},
                         {"asr_fas", r->asr_fas[j]},
                         {"score_mean", mean},
                         {"score_p75", quantile_sorted(s, 0.75)}});
    }
    fas.push_back({{"method", r->method}, {"black_box_asr_fas", r->black_box_asr_fas}, {"targets", targets}});
  }
  for (auto m : {Method::kFim, Method::kSingleLevelFr, Method::kFimMfa})
    if (const auto* r = find(m))
      fr.push_back({{"method", r->method}, {"black_box_asr_fr", r->black_box_asr_fr}});
  return {{"config_hash", hash}, {"tool_version", kToolVersion}, {"joint", joint}, {"fas", fas}, {"fr", fr}};
}

}  // namespace

MissingArtifactError::MissingArtifactError(const fs::path& path, const std::string& command)
    : std::runtime_error("missing artifact " + path.string() + "; run `rma " + command + "` first"),
      command_(command) {}

void RunConfig::validate() const {
  attack.validate();
  if (methods.empty()) throw std::invalid_argument("config: methods must not be empty");
  if (ablate_methods.empty()) throw std::invalid_argument("config: ablate.methods must not be empty");
  if (eval.pairs < 1) throw std::invalid_argument("config: eval.pairs must be >= 1");
  if (!(eval.far_target > 0.0 && eval.far_target <= 1.0)) {
    throw std::invalid_argument("config: eval.far_target must be in (0, 1]");
  }
  if (jobs < 1) throw std::invalid_argument("config: jobs must be >= 1");
  if (zoo.fr_epochs < 1 || zoo.fas_epochs < 1) throw std::invalid_argument("config: zoo epochs must be >= 1");
  if (!(zoo.lr > 0.0)) throw std::invalid_argument("config: zoo.lr must be > 0");
  if (zoo.batch_size < 1) throw std::invalid_argument("config: zoo.batch_size must be >= 1");
  if (zoo.fr_input_noise < 0.0 || zoo.fas_input_noise < 0.0) {
    throw std::invalid_argument("config: zoo input noise must be >= 0");
  }
}

std::uint64_t RunConfig::pair_seed() const {
  return eval.pair_seed ? *eval.pair_seed : mix64(seed ^ 0x70a1c5ULL);
}

RunConfig parse_run_config(std::string_view text) {
  const auto j = json::parse(text);
  reject_unknown(j, {"seed", "corpus", "zoo", "attack", "methods", "eval", "ablate", "out", "jobs", "serial"}, "");
  RunConfig c;
  read_opt(j, "seed", c.seed);
  if (j.contains("corpus")) {
    const auto& cj = j.at("corpus");
    reject_unknown(cj, {"n_identities", "images_per_identity_per_liveness", "style"}, "corpus");
    read_opt(cj, "n_identities", c.corpus.n_identities);
    read_opt(cj, "images_per_identity_per_liveness", c.corpus.images_per_identity_per_liveness);
    if (cj.contains("style")) {
      const auto& s = cj.at("style");
      reject_unknown(s, {"basis_amplitude", "latent_jitter", "max_shift_px", "brightness_jitter",
                         "pixel_noise", "grid_amplitude", "grid_period", "red_shift", "blue_shift"},
                     "corpus.style");
      auto& st = c.corpus.style;
      read_opt(s, "basis_amplitude", st.basis_amplitude);
      read_opt(s, "latent_jitter", st.latent_jitter);
      read_opt(s, "max_shift_px", st.max_shift_px);
      read_opt(s, "brightness_jitter", st.brightness_jitter);
      read_opt(s, "pixel_noise", st.pixel_noise);
      read_opt(s, "grid_amplitude", st.grid_amplitude);
      read_opt(s, "grid_period", st.grid_period);
      read_opt(s, "red_shift", st.red_shift);
      read_opt(s, "blue_shift", st.blue_shift);
    }
  }
  if (j.contains("zoo")) {
    const auto& z = j.at("zoo");
    reject_unknown(z, {"fr_epochs", "fas_epochs", "lr", "batch_size", "fr_input_noise", "fas_input_noise"}, "zoo");
    read_opt(z, "fr_epochs", c.zoo.fr_epochs);
    read_opt(z, "fas_epochs", c.zoo.fas_epochs);
    read_opt(z, "lr", c.zoo.lr);
    read_opt(z, "batch_size", c.zoo.batch_size);
    read_opt(z, "fr_input_noise", c.zoo.fr_input_noise);
    read_opt(z, "fas_input_noise", c.zoo.fas_input_noise);
  }
  if (j.contains("attack")) {
    const auto& a = j.at("attack");
    reject_unknown(a, {"epsilon", "step", "iters", "prime_iters", "eps_stab", "fr_layers", "fas_layers",
                       "rs_layer", "single_level_layer", "fixed_weights"},
                   "attack");
    auto& ac = c.attack;
    read_opt(a, "epsilon", ac.epsilon);
    read_opt(a, "step", ac.step);
    read_opt(a, "iters", ac.iters);
    read_opt(a, "prime_iters", ac.prime_iters);
    read_opt(a, "eps_stab", ac.eps_stab);
    read_opt(a, "fr_layers", ac.fr_layers);
    read_opt(a, "fas_layers", ac.fas_layers);
    if (a.contains("rs_layer") && !a.at("rs_layer").is_null()) ac.rs_layer = a.at("rs_layer").get<std::size_t>();
    if (a.contains("single_level_layer") && !a.at("single_level_layer").is_null()) {
      ac.single_level_layer = a.at("single_level_layer").get<std::size_t>();
    }
    if (a.contains("fixed_weights") && !a.at("fixed_weights").is_null()) {
      const auto w = a.at("fixed_weights").get<std::vector<double>>();
      if (w.size() != 2) throw std::invalid_argument("config: attack.fixed_weights needs two values");
      ac.fixed_weights = std::make_pair(w[0], w[1]);
    }
  }
  if (j.contains("methods")) c.methods = parse_methods(j.at("methods"));
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown(e, {"far_target", "pairs", "pair_seed"}, "eval");
    read_opt(e, "far_target", c.eval.far_target);
    read_opt(e, "pairs", c.eval.pairs);
    if (e.contains("pair_seed") && !e.at("pair_seed").is_null()) {
      c.eval.pair_seed = e.at("pair_seed").get<std::uint64_t>();
    }
  }
  if (j.contains("ablate")) {
    const auto& a = j.at("ablate");
    reject_unknown(a, {"methods"}, "ablate");
    if (a.contains("methods")) c.ablate_methods = parse_methods(a.at("methods"));
  }
  if (j.contains("out")) c.out = j.at("out").get<std::string>();
  read_opt(j, "jobs", c.jobs);
  read_opt(j, "serial", c.serial);
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw std::invalid_argument("config file not found: " + path.string());
  return parse_run_config(read_file(path));
}

std::string canonical_config_json(const RunConfig& c) {
  const auto& a = c.attack;
  json attack = {{"epsilon", a.epsilon},
                 {"step", a.step},
                 {"iters", a.iters},
                 {"prime_iters", a.prime_iters},
                 {"eps_stab", a.eps_stab},
                 {"fr_layers", a.fr_layers},
                 {"fas_layers", a.fas_layers},
                 {"rs_layer", a.rs_layer ? json(*a.rs_layer) : json(nullptr)},
                 {"single_level_layer", a.single_level_layer ? json(*a.single_level_layer) : json(nullptr)},
                 {"fixed_weights", a.fixed_weights ? json({a.fixed_weights->first, a.fixed_weights->second})
                                                   : json(nullptr)}};
  json j = {{"seed", c.seed},
            {"corpus", {{"n_identities", c.corpus.n_identities},
                        {"images_per_identity_per_liveness", c.corpus.images_per_identity_per_liveness},
                        {"style", style_json(c.corpus.style)}}},
            {"zoo", {{"fr_epochs", c.zoo.fr_epochs},
                     {"fas_epochs", c.zoo.fas_epochs},
                     {"lr", c.zoo.lr},
                     {"batch_size", c.zoo.batch_size},
                     {"fr_input_noise", c.zoo.fr_input_noise},
                     {"fas_input_noise", c.zoo.fas_input_noise}}},
            {"attack", attack},
            {"methods", methods_json(c.methods)},
            {"eval", {{"far_target", c.eval.far_target}, {"pairs", c.eval.pairs}, {"pair_seed", c.pair_seed()}}},
            {"ablate", {{"methods", methods_json(c.ablate_methods)}}}};
  return j.dump();
}

std::string config_hash(const RunConfig& config) { return hash_hex(canonical_config_json(config)); }

fs::path default_out_root() {
  const char* env = std::getenv(kOutRootEnv);
  return env && *env ? fs::path(env) : fs::current_path();
}

RunPaths run_paths(const RunConfig& config) {
  const auto out = config.out.empty() ? default_out_root() : config.out;
  RunPaths p;
  p.root = out / "runs" / config_hash(config);
  p.corpus = p.root / "corpus";
  p.models = p.root / "models";
  p.adv = p.root / "adv";
  p.reports = p.root / "reports";
  return p;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
        failed.store(true);
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(jobs, n); ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first) std::rethrow_exception(first);
}

std::string method_slug(Method m) {
  std::string s;
  for (char ch : std::string(method_name(m))) {
    s += (ch == '+' || ch == '-') ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  return s;
}

void cmd_gen_data(const RunConfig& config) {
  config.validate();
  const auto paths = run_paths(config);
  auto params = config.corpus;
  params.seed = config.seed;
  const auto corpus = gen_corpus(params);
  fs::create_directories(paths.corpus);
  save_corpus(paths.corpus, corpus, config_hash(config));
  write_file_atomic(paths.root / "config.json", json::parse(canonical_config_json(config)).dump(2) + "\n");
}

Corpus load_run_corpus(const RunConfig& config) {
  const auto paths = run_paths(config);
  if (!fs::exists(paths.corpus / "manifest.json")) {
    throw MissingArtifactError(paths.corpus / "manifest.json", "gen-data");
  }
  std::string hash;
  auto corpus = load_corpus(paths.corpus, &hash);
  if (hash != config_hash(config)) {
    throw ConfigHashMismatchError("corpus at " + paths.corpus.string() + " was produced by config " + hash);
  }
  return corpus;
}

void cmd_train(const RunConfig& config) {
  config.validate();
  const auto corpus = load_run_corpus(config);
  const auto hash = config_hash(config);
  const auto paths = run_paths(config);

  // Same construction as make_zoo, with the independent fits spread over jobs.
  std::vector<ArchSpec> archs{fr_surrogate_arch()};
  for (auto& a : fr_target_archs()) archs.push_back(a);
  const std::size_t n_fr = archs.size();
  archs.push_back(fas_surrogate_arch());
  for (auto& a : fas_target_archs()) archs.push_back(a);
  std::vector<TapModel> trained(archs.size());
  parallel_for(archs.size(), config.effective_jobs(), [&](std::size_t i) {
    trained[i] = train_zoo_member(archs[i], i < n_fr ? Objective::kIdentityClassification
                                                     : Objective::kLiveSpoofBinary,
                                  config.seed, corpus, config.zoo);
  });
  Zoo zoo;
  zoo.fr_surrogate = std::move(trained[0]);
  for (std::size_t i = 1; i < n_fr; ++i) zoo.fr_targets.push_back(std::move(trained[i]));
  zoo.fas_surrogate = std::move(trained[n_fr]);
  for (std::size_t i = n_fr + 1; i < trained.size(); ++i) zoo.fas_targets.push_back(std::move(trained[i]));

  fs::create_directories(paths.models);
  const auto entries = zoo_entries(zoo);
  const auto frm = zoo.fr_models();
  const auto fasm = zoo.fas_models();
  std::vector<const TapModel*> all(frm.begin(), frm.end());
  all.insert(all.end(), fasm.begin(), fasm.end());
  json models = json::array();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto bytes = encode_model(*all[i]);
    write_file_atomic(paths.models / entries[i].file, bytes);
    models.push_back({{"name", entries[i].name},
                      {"role", entries[i].role},
                      {"file", entries[i].file},
                      {"fnv1a", hash_hex(bytes)}});
  }

  std::vector<FrCalibration> frc(frm.size());
  std::vector<FasCalibration> fasc(fasm.size());
  parallel_for(frm.size() + fasm.size(), config.effective_jobs(), [&](std::size_t i) {
    if (i < frm.size()) {
      frc[i] = calibrate_fr_threshold(*frm[i], corpus, config.eval.far_target);
    } else {
      fasc[i - frm.size()] = calibrate_fas_threshold(*fasm[i - frm.size()], corpus);
    }
  });
  json fr = json::array(), fas = json::array();
  for (std::size_t i = 0; i < frm.size(); ++i) {
    const auto& c = frc[i];
    fr.push_back({{"model", frm[i]->name()},
                  {"white_box", i == 0},
                  {"threshold", c.threshold},
                  {"unreachable", c.unreachable},
                  {"far_target", c.far_target},
                  {"genuine_pairs", c.genuine_pairs},
                  {"impostor_pairs", c.impostor_pairs},
                  {"impostors_accepted", c.impostors_accepted},
                  {"genuine_accepted", c.genuine_accepted}});
  }
  for (std::size_t i = 0; i < fasm.size(); ++i) {
    const auto& c = fasc[i];
    fas.push_back({{"model", fasm[i]->name()},
                   {"white_box", i == 0},
                   {"threshold", c.threshold},
                   {"eer", c.eer},
                   {"live", c.live},
                   {"spoof", c.spoof},
                   {"spoof_accepted", c.spoof_accepted},
                   {"live_rejected", c.live_rejected}});
  }
  write_json(paths.models / "thresholds.json", {{"config_hash", hash}, {"fr", fr}, {"fas", fas}});
  write_json(paths.models / "manifest.json",
             {{"config_hash", hash}, {"tool_version", kToolVersion}, {"models", models}});
}

Zoo load_run_zoo(const RunConfig& config) {
  const auto paths = run_paths(config);
  const auto manifest = read_json(paths.models / "manifest.json", "train");
  check_hash(manifest, config_hash(config), paths.models);
  Zoo zoo;
  for (const auto& m : manifest.at("models")) {
    const auto file = paths.models / m.at("file").get<std::string>();
    if (!fs::exists(file)) throw MissingArtifactError(file, "train");
    const auto bytes = read_file(file);
    if (hash_hex(bytes) != m.at("fnv1a").get<std::string>()) {
      throw FormatError("weight file " + file.string() + " does not match its manifest checksum");
    }
    auto model = decode_model(bytes);
    const auto role = m.at("role").get<std::string>();
    if (role == "fr-surrogate") zoo.fr_surrogate = std::move(model);
    else if (role == "fr-target") zoo.fr_targets.push_back(std::move(model));
    else if (role == "fas-surrogate") zoo.fas_surrogate = std::move(model);
    else if (role == "fas-target") zoo.fas_targets.push_back(std::move(model));
    else throw FormatError("unknown model role '" + role + "'");
  }
  return zoo;
}

Thresholds load_run_thresholds(const RunConfig& config) {
  const auto paths = run_paths(config);
  const auto j = read_json(paths.models / "thresholds.json", "train");
  check_hash(j, config_hash(config), paths.models / "thresholds.json");
  Thresholds t;
  for (const auto& e : j.at("fr"))
    t.fr.push_back({e.at("model").get<std::string>(), e.at("white_box").get<bool>(), e.at("threshold").get<double>()});
  for (const auto& e : j.at("fas"))
    t.fas.push_back({e.at("model").get<std::string>(), e.at("white_box").get<bool>(), e.at("threshold").get<double>()});
  return t;
}

void import_model(const RunConfig& config, const fs::path& weights) {
  const auto paths = run_paths(config);
  const auto hash = config_hash(config);
  auto manifest = read_json(paths.models / "manifest.json", "train");
  check_hash(manifest, hash, paths.models);
  auto thresholds = read_json(paths.models / "thresholds.json", "train");
  check_hash(thresholds, hash, paths.models / "thresholds.json");
  const auto bytes = read_file(weights);
  const auto model = decode_model(bytes);
  json* entry = nullptr;
  for (auto& m : manifest.at("models"))
    if (m.at("name") == model.name()) entry = &m;
  if (!entry) throw std::invalid_argument("run has no model named '" + model.name() + "'");
  const auto corpus = load_run_corpus(config);
  const bool is_fr = model.head() == HeadKind::kFrEmbedding;
  const auto role = entry->at("role").get<std::string>();
  if (is_fr != (role.rfind("fr-", 0) == 0)) {
    throw std::invalid_argument("model '" + model.name() + "' has the wrong head for role " + role);
  }
  for (auto& t : thresholds.at(is_fr ? "fr" : "fas")) {
    if (t.at("model") != model.name()) continue;
    if (is_fr) {
      const auto c = calibrate_fr_threshold(model, corpus, config.eval.far_target);
      t["threshold"] = c.threshold;
      t["unreachable"] = c.unreachable;
      t["impostors_accepted"] = c.impostors_accepted;
      t["genuine_accepted"] = c.genuine_accepted;
    } else {
      const auto c = calibrate_fas_threshold(model, corpus);
      t["threshold"] = c.threshold;
      t["eer"] = c.eer;
      t["spoof_accepted"] = c.spoof_accepted;
      t["live_rejected"] = c.live_rejected;
    }
  }
  write_file_atomic(paths.models / entry->at("file").get<std::string>(), bytes);
  (*entry)["fnv1a"] = hash_hex(bytes);
  write_json(paths.models / "thresholds.json", thresholds);
  write_json(paths.models / "manifest.json", manifest);
}

void cmd_attack(const RunConfig& config) {
  config.validate();
  const auto corpus = load_run_corpus(config);
  const auto zoo = load_run_zoo(config);
  const auto hash = config_hash(config);
  const auto paths = run_paths(config);
  const auto pairs = run_pairs(config, corpus);
  for (auto m : config.methods) attack_method(config, hash, corpus, zoo, pairs, m, paths.adv / method_slug(m));
}

std::vector<EvalReport> cmd_eval(const RunConfig& config) {
  config.validate();
  const auto corpus = load_run_corpus(config);
  const auto zoo = load_run_zoo(config);
  const auto thresholds = load_run_thresholds(config);
  const auto hash = config_hash(config);
  const auto paths = run_paths(config);
  const auto pairs = run_pairs(config, corpus);
  std::vector<EvalReport> reports;
  for (auto m : config.methods) {
    reports.push_back(evaluate_method(config, hash, corpus, zoo, thresholds, pairs, m, paths.adv / method_slug(m)));
    write_report(paths.reports, reports.back(), m);
  }
  write_json(paths.reports / "manifest.json",
             {{"config_hash", hash}, {"tool_version", kToolVersion}, {"methods", methods_json(config.methods)}});
  return reports;
}

std::vector<EvalReport> cmd_ablate(const RunConfig& config) {
  config.validate();
  const auto corpus = load_run_corpus(config);
  const auto zoo = load_run_zoo(config);
  const auto thresholds = load_run_thresholds(config);
  const auto hash = config_hash(config);
  const auto paths = run_paths(config);
  const auto pairs = run_pairs(config, corpus);
  const auto dir = paths.reports / "ablate";
  std::vector<EvalReport> reports;
  for (auto m : config.ablate_methods) {
    const auto adv = paths.adv / method_slug(m);
    attack_method(config, hash, corpus, zoo, pairs, m, adv);
    reports.push_back(evaluate_method(config, hash, corpus, zoo, thresholds, pairs, m, adv));
    write_report(dir, reports.back(), m);
  }
  write_json(dir / "summary.json", ablate_summary(reports, hash));
  return reports;
}

}  // namespace rma
