#include <cmath>
#include <map>

#include "rma/model_zoo.hpp"
#include "rma/rng.hpp"

namespace rma {

TrainingDivergedError::TrainingDivergedError(const std::string& model, std::size_t epoch)
    : std::runtime_error("training of '" + model + "' diverged (non-finite loss) in epoch " +
                         std::to_string(epoch)),
      epoch_(epoch) {}

namespace {

struct AdamSlot {
  std::vector<double> m, v;
};

class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}

  void step(std::vector<Tensor*>& params, const std::vector<std::vector<double>>& grads) {
    ++t_;
    if (slots_.empty()) {
      for (auto* p : params) slots_.push_back({std::vector<double>(p->size(), 0.0),
                                               std::vector<double>(p->size(), 0.0)});
    }
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto data = params[i]->mutable_data();
      auto& s = slots_[i];
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double g = grads[i][j];
        s.m[j] = kBeta1 * s.m[j] + (1.0 - kBeta1) * g;
        s.v[j] = kBeta2 * s.v[j] + (1.0 - kBeta2) * g * g;
        data[j] -= lr_ * (s.m[j] / c1) / (std::sqrt(s.v[j] / c2) + 1e-8);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  double lr_;
  std::size_t t_ = 0;
  std::vector<AdamSlot> slots_;
};

}  // namespace

TapModel train(TapModel model, const Corpus& corpus, const TrainParams& params) {
  auto samples = corpus.indices(Split::kTrain);
  if (samples.empty()) throw std::invalid_argument("train: corpus has no training images");
  if (params.epochs == 0) return model;

  const bool fr = params.objective == Objective::kIdentityClassification;
  if (fr != (model.head() == HeadKind::kFrEmbedding)) {
    throw std::invalid_argument("train: objective does not match head of '" + model.name() + "'");
  }

  std::map<int, std::size_t> label_of;
  for (int id : corpus.train_identities) label_of.emplace(id, label_of.size());

  auto rng = Rng::derive(params.seed, {0x7ea1});
  Tensor head;
  if (fr) {
    const std::size_t dim = model.units(model.num_layers());
    std::vector<double> w(label_of.size() * dim);
    for (auto& e : w) e = rng.normal() / std::sqrt(static_cast<double>(dim));
    head = Tensor({label_of.size(), dim}, std::move(w));
  }

  std::vector<Tensor*> tensors;
  for (std::size_t i = 1; i <= model.num_layers(); ++i) {
    auto& l = model.mutable_layer(i);
    if (!l.has_params()) continue;
    tensors.push_back(&l.weight);
    tensors.push_back(&l.bias);
  }
  if (fr) tensors.push_back(&head);

  Adam adam(params.lr);
  std::vector<std::vector<double>> grads(tensors.size());
  for (std::size_t epoch = 1; epoch <= params.epochs; ++epoch) {
    rng.shuffle(samples);
    for (std::size_t start = 0; start < samples.size(); start += params.batch_size) {
      const std::size_t end = std::min(samples.size(), start + params.batch_size);
      for (std::size_t i = 0; i < tensors.size(); ++i) grads[i].assign(tensors[i]->size(), 0.0);
      const double inv = 1.0 / static_cast<double>(end - start);
      try {
        for (std::size_t s = start; s < end; ++s) {
          const auto idx = samples[s];
          Tape tape;
          auto bound = bind_parameters(tape, model, true);
          Tensor pixels = corpus.images[idx].pixels;
          if (params.input_noise > 0.0) {
            for (auto& v : pixels.mutable_data()) v += params.input_noise * rng.normal();
          }
          auto x = tape.leaf(std::move(pixels));
          auto out = forward_with_taps(tape, model, x, {}, &bound).output;
          Var loss;
          Var head_var;
          if (fr) {
            head_var = tape.leaf(head, true);
            auto logits = mul_scalar(matmul(head_var, out), params.fr_logit_scale);
            loss = softmax_cross_entropy(logits, label_of.at(corpus.entries[idx].identity_id));
          } else {
            const double target = corpus.entries[idx].liveness == Liveness::kLive ? 1.0 : 0.0;
            loss = sigmoid_bce(out, target);
          }
          const auto g = tape.backward(loss);
          std::size_t t = 0;
          for (std::size_t i = 1; i <= model.num_layers(); ++i) {
            if (!model.layer(i).has_params()) continue;
            for (const Var* v : {&bound.weight[i], &bound.bias[i]}) {
              const auto gt = g.of(*v);
              for (std::size_t j = 0; j < gt.size(); ++j) grads[t][j] += inv * gt[j];
              ++t;
            }
          }
          if (fr) {
            const auto gt = g.of(head_var);
            for (std::size_t j = 0; j < gt.size(); ++j) grads[t][j] += inv * gt[j];
          }
        }
      } catch (const NonFiniteError&) {
        throw TrainingDivergedError(model.name(), epoch);
      }
      adam.step(tensors, grads);
      for (const auto* p : tensors) {
        for (double v : p->data()) {
          if (!std::isfinite(v)) throw TrainingDivergedError(model.name(), epoch);
        }
      }
    }
  }
  return model;
}

}  // namespace rma
