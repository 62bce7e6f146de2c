#include "rma/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace rma {

double cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_similarity: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) throw SingularInputError("cosine_similarity of a zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

FrCalibration calibrate_fr_from_scores(std::span<const double> genuine,
                                       std::span<const double> impostor, double far_target) {
  if (impostor.empty()) throw CalibrationError("FR calibration needs impostor pairs");
  if (!(far_target >= 0.0 && far_target <= 1.0)) {
    throw CalibrationError("FR calibration: far_target must be in [0, 1]");
  }
  std::vector<double> sorted(impostor.begin(), impostor.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  auto accepted = [&](double t) {
    return static_cast<std::size_t>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
  };

  FrCalibration c;
  c.far_target = far_target;
  c.genuine_pairs = genuine.size();
  c.impostor_pairs = n;
  const double above = std::nextafter(sorted.back(), std::numeric_limits<double>::infinity());
  c.threshold = above;
  // FAR is nonincreasing in the threshold, so the first passing candidate wins.
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && sorted[i] == sorted[i - 1]) continue;
    if (static_cast<double>(n - i) / static_cast<double>(n) <= far_target) {
      c.threshold = sorted[i];
      break;
    }
  }
  if (c.threshold >= 1.0) {
    c.threshold = sorted.back();
    c.unreachable = true;
  }
  c.impostors_accepted = accepted(c.threshold);
  c.genuine_accepted = static_cast<std::size_t>(
      std::count_if(genuine.begin(), genuine.end(), [&](double s) { return s >= c.threshold; }));
  return c;
}

FasCalibration calibrate_fas_from_scores(std::span<const double> live,
                                         std::span<const double> spoof) {
  if (live.empty() || spoof.empty()) {
    throw CalibrationError("FAS calibration needs both live and spoof scores");
  }
  std::vector<double> ls(live.begin(), live.end()), ss(spoof.begin(), spoof.end());
  std::sort(ls.begin(), ls.end());
  std::sort(ss.begin(), ss.end());
  std::vector<double> cand(ls);
  cand.insert(cand.end(), ss.begin(), ss.end());
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());

  const double nl = static_cast<double>(ls.size()), ns = static_cast<double>(ss.size());
  auto at_or_above = [](const std::vector<double>& v, double t) {
    return static_cast<std::size_t>(v.end() - std::lower_bound(v.begin(), v.end(), t));
  };

  FasCalibration best;
  best.live = ls.size();
  best.spoof = ss.size();
  double best_gap = std::numeric_limits<double>::infinity();
  double best_total = std::numeric_limits<double>::infinity();
  // Interval i covers thresholds in (cand[i-1], cand[i]]; the final interval
  // lies above every score.
  for (std::size_t i = 0; i <= cand.size(); ++i) {
    double t;
    std::size_t spoof_acc, live_rej;
    if (i < cand.size()) {
      spoof_acc = at_or_above(ss, cand[i]);
      live_rej = ls.size() - at_or_above(ls, cand[i]);
      if (i == 0) {
        t = cand[0];
      } else {
        t = 0.5 * (cand[i - 1] + cand[i]);
        if (!(t > cand[i - 1])) t = cand[i];
      }
    } else {
      spoof_acc = 0;
      live_rej = ls.size();
      const double top = cand.back();
      t = top < 1.0 ? 0.5 * (top + 1.0) : std::nextafter(top, 2.0);
      if (!(t > top)) t = std::nextafter(top, 2.0);
    }
    const double far = static_cast<double>(spoof_acc) / ns;
    const double frr = static_cast<double>(live_rej) / nl;
    const double gap = std::abs(far - frr);
    const double total = far + frr;
    if (gap < best_gap || (gap == best_gap && total < best_total)) {
      best_gap = gap;
      best_total = total;
      best.threshold = t;
      best.eer = total / 2.0;
      best.spoof_accepted = spoof_acc;
      best.live_rejected = live_rej;
    }
  }
  return best;
}

FrCalibration calibrate_fr_threshold(const TapModel& fr, const Corpus& corpus,
                                     double far_target) {
  const auto idx = corpus.indices(Split::kEval);
  std::vector<Tensor> emb;
  emb.reserve(idx.size());
  for (auto i : idx) emb.push_back(predict(fr, corpus.images[i].pixels));
  std::vector<double> genuine, impostor;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      const double s = cosine_similarity(emb[a], emb[b]);
      if (corpus.entries[idx[a]].identity_id == corpus.entries[idx[b]].identity_id) {
        genuine.push_back(s);
      } else {
        impostor.push_back(s);
      }
    }
  }
  if (genuine.size() < kMinCalibrationPairs || impostor.size() < kMinCalibrationPairs) {
    throw CalibrationError("FR calibration of '" + fr.name() + "' needs >= " +
                           std::to_string(kMinCalibrationPairs) +
                           " genuine and impostor pairs, corpus yields " +
                           std::to_string(genuine.size()) + " and " +
                           std::to_string(impostor.size()));
  }
  return calibrate_fr_from_scores(genuine, impostor, far_target);
}

FasCalibration calibrate_fas_threshold(const TapModel& fas, const Corpus& corpus) {
  std::vector<double> live, spoof;
  for (auto i : corpus.indices(Split::kEval)) {
    const double s = sigmoid(predict(fas, corpus.images[i].pixels)[0]);
    (corpus.entries[i].liveness == Liveness::kLive ? live : spoof).push_back(s);
  }
  return calibrate_fas_from_scores(live, spoof);
}

PairVerdict judge(std::size_t pair_id, const Tensor& x_adv, const Tensor& x_tgt,
                  std::span<const TapModel* const> fr_models,
                  std::span<const TapModel* const> fas_models, const Thresholds& thresholds) {
  if (fr_models.size() != thresholds.fr.size() || fas_models.size() != thresholds.fas.size()) {
    throw std::invalid_argument("judge: model and threshold lists differ in length");
  }
  PairVerdict v;
  v.pair_id = pair_id;
  for (std::size_t i = 0; i < fr_models.size(); ++i) {
    const double c = cosine_similarity(predict(*fr_models[i], x_adv), predict(*fr_models[i], x_tgt));
    v.fr_cos.push_back(c);
    v.fr_match.push_back(c >= thresholds.fr[i].threshold);
  }
  for (std::size_t i = 0; i < fas_models.size(); ++i) {
    const double s = sigmoid(predict(*fas_models[i], x_adv)[0]);
    v.fas_score.push_back(s);
    v.fas_live.push_back(s >= thresholds.fas[i].threshold);
  }
  return v;
}

namespace {

double rate(std::size_t hits, std::size_t n) {
  return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
}

double mean_or_zero(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

EvalReport aggregate(std::vector<PairVerdict> verdicts, const Thresholds& thresholds) {
  if (verdicts.empty()) throw std::invalid_argument("aggregate: no verdicts");
  std::sort(verdicts.begin(), verdicts.end(),
            [](const PairVerdict& a, const PairVerdict& b) { return a.pair_id < b.pair_id; });
  const std::size_t nf = thresholds.fr.size(), ng = thresholds.fas.size();
  for (const auto& v : verdicts) {
    if (v.fr_match.size() != nf || v.fas_live.size() != ng) {
      throw std::invalid_argument("aggregate: verdict for pair " + std::to_string(v.pair_id) +
                                  " does not match the model lists");
    }
  }
  const std::size_t n = verdicts.size();
  EvalReport r;
  r.thresholds = thresholds;
  std::vector<double> bb_fr, bb_fas, bb_joint;
  for (std::size_t i = 0; i < nf; ++i) {
    std::size_t hits = 0;
    for (const auto& v : verdicts) hits += v.fr_match[i];
    r.asr_fr.push_back(rate(hits, n));
    if (!thresholds.fr[i].white_box) bb_fr.push_back(r.asr_fr.back());
  }
  for (std::size_t j = 0; j < ng; ++j) {
    std::size_t hits = 0;
    for (const auto& v : verdicts) hits += v.fas_live[j];
    r.asr_fas.push_back(rate(hits, n));
    if (!thresholds.fas[j].white_box) bb_fas.push_back(r.asr_fas.back());
  }
  for (std::size_t i = 0; i < nf; ++i) {
    for (std::size_t j = 0; j < ng; ++j) {
      std::size_t hits = 0;
      for (const auto& v : verdicts) hits += v.fr_match[i] && v.fas_live[j];
      ComboRate c;
      c.fr_model = thresholds.fr[i].model;
      c.fas_model = thresholds.fas[j].model;
      c.white_box = thresholds.fr[i].white_box && thresholds.fas[j].white_box;
      c.black_box = !thresholds.fr[i].white_box && !thresholds.fas[j].white_box;
      c.asr_joint = rate(hits, n);
      if (c.black_box) bb_joint.push_back(c.asr_joint);
      r.joint.push_back(std::move(c));
    }
  }
  r.black_box_asr_fr = mean_or_zero(bb_fr);
  r.black_box_asr_fas = mean_or_zero(bb_fas);
  r.black_box_asr_joint = mean_or_zero(bb_joint);
  r.verdicts = std::move(verdicts);
  return r;
}

namespace {

using nlohmann::json;

json thresholds_json(const std::vector<ModelThreshold>& v) {
  json a = json::array();
  for (const auto& t : v) {
    a.push_back({{"model", t.model}, {"white_box", t.white_box}, {"threshold", t.threshold}});
  }
  return a;
}

std::vector<ModelThreshold> thresholds_from(const json& a) {
  std::vector<ModelThreshold> v;
  for (const auto& t : a) {
    v.push_back({t.at("model").get<std::string>(), t.at("white_box").get<bool>(),
                 t.at("threshold").get<double>()});
  }
  return v;
}

}  // namespace

std::string report_json(const EvalReport& r) {
  json verdicts = json::array();
  for (const auto& v : r.verdicts) {
    verdicts.push_back({{"pair_id", v.pair_id},
                        {"fr_cos", v.fr_cos},
                        {"fr_match", v.fr_match},
                        {"fas_score", v.fas_score},
                        {"fas_live", v.fas_live}});
  }
  json asr_fr = json::object(), asr_fas = json::object();
  for (std::size_t i = 0; i < r.asr_fr.size(); ++i) asr_fr[r.thresholds.fr[i].model] = r.asr_fr[i];
  for (std::size_t j = 0; j < r.asr_fas.size(); ++j) {
    asr_fas[r.thresholds.fas[j].model] = r.asr_fas[j];
  }
  json joint = json::array();
  for (const auto& c : r.joint) {
    joint.push_back({{"fr_model", c.fr_model},
                     {"fas_model", c.fas_model},
                     {"white_box", c.white_box},
                     {"black_box", c.black_box},
                     {"asr_joint", c.asr_joint}});
  }
  const json j = {{"config_hash", r.config_hash},
                  {"seed", r.seed},
                  {"method", r.method},
                  {"pairs", r.verdicts.size()},
                  {"thresholds", {{"fr", thresholds_json(r.thresholds.fr)},
                                  {"fas", thresholds_json(r.thresholds.fas)}}},
                  {"asr_fr", asr_fr},
                  {"asr_fas", asr_fas},
                  {"asr_joint", joint},
                  {"black_box", {{"asr_fr", r.black_box_asr_fr},
                                 {"asr_fas", r.black_box_asr_fas},
                                 {"asr_joint", r.black_box_asr_joint}}},
                  {"verdicts", verdicts}};
  return j.dump(2) + "\n";
}

EvalReport parse_report_json(const std::string& text) {
  const auto j = json::parse(text);
  EvalReport r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.method = j.at("method").get<std::string>();
  r.thresholds.fr = thresholds_from(j.at("thresholds").at("fr"));
  r.thresholds.fas = thresholds_from(j.at("thresholds").at("fas"));
  for (const auto& t : r.thresholds.fr) r.asr_fr.push_back(j.at("asr_fr").at(t.model).get<double>());
  for (const auto& t : r.thresholds.fas) {
    r.asr_fas.push_back(j.at("asr_fas").at(t.model).get<double>());
  }
  for (const auto& c : j.at("asr_joint")) {
    r.joint.push_back({c.at("fr_model").get<std::string>(), c.at("fas_model").get<std::string>(),
                       c.at("white_box").get<bool>(), c.at("black_box").get<bool>(),
                       c.at("asr_joint").get<double>()});
  }
  const auto& bb = j.at("black_box");
  r.black_box_asr_fr = bb.at("asr_fr").get<double>();
  r.black_box_asr_fas = bb.at("asr_fas").get<double>();
  r.black_box_asr_joint = bb.at("asr_joint").get<double>();
  for (const auto& v : j.at("verdicts")) {
    PairVerdict p;
    p.pair_id = v.at("pair_id").get<std::size_t>();
    p.fr_cos = v.at("fr_cos").get<std::vector<double>>();
    p.fr_match = v.at("fr_match").get<std::vector<bool>>();
    p.fas_score = v.at("fas_score").get<std::vector<double>>();
    p.fas_live = v.at("fas_live").get<std::vector<bool>>();
    r.verdicts.push_back(std::move(p));
  }
  return r;
}

std::string report_csv(const EvalReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "pair_id,fr_model,fas_model,fr_cos,fr_match,fas_score,fas_live,joint\n";
  for (const auto& v : r.verdicts) {
    for (std::size_t i = 0; i < r.thresholds.fr.size(); ++i) {
      for (std::size_t j = 0; j < r.thresholds.fas.size(); ++j) {
        out << v.pair_id << ',' << r.thresholds.fr[i].model << ',' << r.thresholds.fas[j].model
            << ',' << v.fr_cos[i] << ',' << int(v.fr_match[i]) << ',' << v.fas_score[j] << ','
            << int(v.fas_live[j]) << ',' << int(v.fr_match[i] && v.fas_live[j]) << '\n';
      }
    }
  }
  return out.str();
}

}  // namespace rma
