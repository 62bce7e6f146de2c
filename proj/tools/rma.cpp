// rma: corpus generation, zoo training, attacks, evaluation and ablations.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rma/binary_io.hpp"
#include "rma/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> jobs;
  bool serial = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run config")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Override the run seed");
  sub->add_option("--out", c.out, "Output root (default: $RMA_OUT_ROOT or the current directory)");
  sub->add_option("--jobs", c.jobs, "Worker threads for attack and eval")->check(CLI::PositiveNumber);
  sub->add_flag("--serial", c.serial, "Single worker, bit-reproducible");
}

rma::RunConfig resolve(const Common& c) {
  rma::RunConfig cfg = c.config.empty() ? rma::RunConfig{} : rma::load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  if (c.jobs) cfg.jobs = *c.jobs;
  if (c.serial) cfg.serial = true;
  cfg.validate();
  return cfg;
}

void print_report_line(const rma::EvalReport& r) {
  std::printf("%-16s black-box ASR' %6.2f  ASR* %6.2f  ASRj %6.2f\n", r.method.c_str(),
              r.black_box_asr_fr, r.black_box_asr_fas, r.black_box_asr_joint);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint FR/FAS transfer attacks on a synthetic face zoo"};
  app.require_subcommand(1);

  Common gen, train, attack, eval, ablate, exp, imp;
  auto* gen_cmd = app.add_subcommand("gen-data", "Render the synthetic corpus");
  add_common(gen_cmd, gen);
  auto* train_cmd = app.add_subcommand("train", "Train the model zoo and calibrate thresholds");
  add_common(train_cmd, train);
  auto* attack_cmd = app.add_subcommand("attack", "Craft adversarial images for the configured methods");
  add_common(attack_cmd, attack);
  auto* eval_cmd = app.add_subcommand("eval", "Judge adversarial images and write reports");
  add_common(eval_cmd, eval);
  auto* ablate_cmd = app.add_subcommand("ablate", "Attack and evaluate every ablation method");
  add_common(ablate_cmd, ablate);

  std::string model_name, model_path;
  auto* export_cmd = app.add_subcommand("export-model", "Copy a trained weight file out of the run");
  add_common(export_cmd, exp);
  export_cmd->add_option("--model", model_name, "Model name, e.g. fr-surrogate")->required();
  export_cmd->add_option("--to", model_path, "Destination file")->required();
  auto* import_cmd = app.add_subcommand("import-model", "Replace a trained model with an external weight file");
  add_common(import_cmd, imp);
  import_cmd->add_option("--from", model_path, "Weight file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) {
      const auto cfg = resolve(gen);
      rma::cmd_gen_data(cfg);
      std::cout << rma::run_paths(cfg).corpus.string() << "\n";
    } else if (*train_cmd) {
      const auto cfg = resolve(train);
      rma::cmd_train(cfg);
      std::cout << rma::run_paths(cfg).models.string() << "\n";
    } else if (*attack_cmd) {
      const auto cfg = resolve(attack);
      rma::cmd_attack(cfg);
      std::cout << rma::run_paths(cfg).adv.string() << "\n";
    } else if (*eval_cmd) {
      const auto cfg = resolve(eval);
      for (const auto& r : rma::cmd_eval(cfg)) print_report_line(r);
      std::cout << rma::run_paths(cfg).reports.string() << "\n";
    } else if (*ablate_cmd) {
      const auto cfg = resolve(ablate);
      for (const auto& r : rma::cmd_ablate(cfg)) print_report_line(r);
      std::cout << (rma::run_paths(cfg).reports / "ablate").string() << "\n";
    } else if (*export_cmd) {
      const auto cfg = resolve(exp);
      const auto zoo = rma::load_run_zoo(cfg);
      const auto src = rma::run_paths(cfg).models / (model_name + ".rmaw");
      if (!std::filesystem::exists(src)) throw rma::MissingArtifactError(src, "train");
      rma::write_file_atomic(model_path, rma::read_file(src));
    } else if (*import_cmd) {
      rma::import_model(resolve(imp), model_path);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
