#pragma once

// Threshold calibration, per-pair verdicts and attack-success aggregation.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rma/data_synth.hpp"
#include "rma/model.hpp"

namespace rma {

double cosine_similarity(const Tensor& a, const Tensor& b);
double sigmoid(double z);

struct FrCalibration {
  double threshold = 0.0;
  /// Set when no threshold below 1 meets the FAR target; the threshold is
  /// then the largest impostor similarity.
  bool unreachable = false;
  double far_target = 0.0;
  std::size_t genuine_pairs = 0;
  std::size_t impostor_pairs = 0;
  std::size_t impostors_accepted = 0;  // impostor similarities >= threshold
  std::size_t genuine_accepted = 0;
};

struct FasCalibration {
  double threshold = 0.5;
  double eer = 0.0;
  std::size_t live = 0;
  std::size_t spoof = 0;
  std::size_t spoof_accepted = 0;  // spoof scores >= threshold
  std::size_t live_rejected = 0;   // live scores < threshold
  double far() const { return spoof ? static_cast<double>(spoof_accepted) / spoof : 0.0; }
  double frr() const { return live ? static_cast<double>(live_rejected) / live : 0.0; }
};

class CalibrationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kMinCalibrationPairs = 500;

/// Smallest candidate threshold (an observed impostor similarity or the
/// next double above the largest one) whose impostor acceptance rate
/// #{s >= t} / n is at most far_target.
FrCalibration calibrate_fr_from_scores(std::span<const double> genuine,
                                       std::span<const double> impostor, double far_target);

/// Equal-error-rate threshold on post-sigmoid scores. Ties in |FAR - FRR|
/// go to the smaller FAR + FRR, then to the smaller threshold.
FasCalibration calibrate_fas_from_scores(std::span<const double> live,
                                         std::span<const double> spoof);

/// Uses every eval-split image: same-identity pairs are genuine, the rest
/// impostor. Throws CalibrationError when either count is below 500.
FrCalibration calibrate_fr_threshold(const TapModel& fr, const Corpus& corpus,
                                     double far_target = 1e-2);
FasCalibration calibrate_fas_threshold(const TapModel& fas, const Corpus& corpus);

struct ModelThreshold {
  std::string model;
  bool white_box = false;
  double threshold = 0.0;
};

struct Thresholds {
  std::vector<ModelThreshold> fr;
  std::vector<ModelThreshold> fas;
};

struct PairVerdict {
  std::size_t pair_id = 0;
  std::vector<double> fr_cos;     // per FR model, in Thresholds::fr order
  std::vector<bool> fr_match;
  std::vector<double> fas_score;  // post-sigmoid, per FAS model
  std::vector<bool> fas_live;
};

/// Models are given in the same order as the matching Thresholds entries.
PairVerdict judge(std::size_t pair_id, const Tensor& x_adv, const Tensor& x_tgt,
                  std::span<const TapModel* const> fr_models,
                  std::span<const TapModel* const> fas_models, const Thresholds& thresholds);

struct ComboRate {
  std::string fr_model;
  std::string fas_model;
  bool white_box = false;  // both models are surrogates
  bool black_box = false;  // neither model is a surrogate
  double asr_joint = 0.0;
};

struct EvalReport {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string method;
  Thresholds thresholds;
  std::vector<PairVerdict> verdicts;
  std::vector<double> asr_fr;   // per FR model
  std::vector<double> asr_fas;  // per FAS model
  std::vector<ComboRate> joint;
  double black_box_asr_fr = 0.0;
  double black_box_asr_fas = 0.0;
  double black_box_asr_joint = 0.0;
};

/// Rates are 100 * successes / pairs; verdicts are folded in pair-id order.
/// Black-box means average over non-surrogate models and combinations.
EvalReport aggregate(std::vector<PairVerdict> verdicts, const Thresholds& thresholds);

std::string report_json(const EvalReport& report);
EvalReport parse_report_json(const std::string& text);
/// One row per pair x (FR model, FAS model).
std::string report_csv(const EvalReport& report);

}  // namespace rma
