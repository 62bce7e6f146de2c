#pragma once

// End-to-end driver behind the `rma` tool. Every stage reads and writes
// under runs/<config-hash>/ and refuses inputs stamped with another hash.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rma/attack.hpp"
#include "rma/data_synth.hpp"
#include "rma/eval.hpp"
#include "rma/model_zoo.hpp"

namespace rma {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kOutRootEnv = "RMA_OUT_ROOT";

struct EvalParams {
  double far_target = 1e-2;
  std::size_t pairs = 200;
  /// Defaults to a value derived from the run seed.
  std::optional<std::uint64_t> pair_seed;
};

struct RunConfig {
  std::uint64_t seed = 1;
  CorpusParams corpus;
  ZooParams zoo;
  AttackConfig attack;
  std::vector<Method> methods{Method::kRma};
  EvalParams eval;
  std::vector<Method> ablate_methods = all_methods();
  /// Not part of the config hash.
  std::filesystem::path out;
  std::size_t jobs = 1;
  bool serial = false;

  void validate() const;
  std::size_t effective_jobs() const { return serial ? 1 : jobs; }
  std::uint64_t pair_seed() const;
};

/// Missing keys keep their defaults; unknown keys are an error. The
/// `corpus.seed` and `attack.seed` fields follow the top-level seed.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical JSON of every hashed field (everything except out/jobs/serial).
std::string canonical_config_json(const RunConfig& config);
std::string config_hash(const RunConfig& config);

/// $RMA_OUT_ROOT when set and nonempty, else the current directory.
std::filesystem::path default_out_root();

struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path corpus;
  std::filesystem::path models;
  std::filesystem::path adv;
  std::filesystem::path reports;
};

/// <out>/runs/<config-hash>/...; `out` falls back to default_out_root().
RunPaths run_paths(const RunConfig& config);

class MissingArtifactError : public std::runtime_error {
 public:
  MissingArtifactError(const std::filesystem::path& path, const std::string& command);
  const std::string& command() const noexcept { return command_; }

 private:
  std::string command_;
};

class ConfigHashMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs fn(0..n-1) on up to `jobs` threads. The first exception thrown by
/// any call is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

void cmd_gen_data(const RunConfig& config);
/// Trains the zoo and calibrates a threshold for every model.
void cmd_train(const RunConfig& config);
/// Attacks every pair with every method in `config.methods`.
void cmd_attack(const RunConfig& config);
/// One report per method in `config.methods`.
std::vector<EvalReport> cmd_eval(const RunConfig& config);
/// Attacks and evaluates every method in `config.ablate_methods` and writes
/// reports/ablate/{<method>.json, <method>.csv, summary.json}.
std::vector<EvalReport> cmd_ablate(const RunConfig& config);

/// Replaces the run's model of the same name with the decoded weight file
/// and recalibrates that model's threshold.
void import_model(const RunConfig& config, const std::filesystem::path& weights);

/// Loaders used by the commands; each checks presence and config hash.
Corpus load_run_corpus(const RunConfig& config);
Zoo load_run_zoo(const RunConfig& config);
Thresholds load_run_thresholds(const RunConfig& config);

/// File-name form of a method name ("FIM+MFA" -> "fim_mfa").
std::string method_slug(Method m);

}  // namespace rma
