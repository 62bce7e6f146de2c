#include "rma/model.hpp"

#include <cmath>

#include "json.hpp"
#include "rma/binary_io.hpp"

namespace rma {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kAvgPool: return "avg_pool";
    case LayerKind::kDense: return "dense";
    case LayerKind::kL2Normalize: return "l2_normalize";
  }
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& s) {
  for (auto k : {LayerKind::kConv2d, LayerKind::kRelu, LayerKind::kAvgPool, LayerKind::kDense,
                 LayerKind::kL2Normalize}) {
    if (s == layer_kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

const char* head_kind_name(HeadKind h) {
  return h == HeadKind::kFrEmbedding ? "fr_embedding" : "fas_score";
}

HeadKind parse_head_kind(const std::string& s) {
  if (s == "fr_embedding") return HeadKind::kFrEmbedding;
  if (s == "fas_score") return HeadKind::kFasScore;
  throw std::invalid_argument("unknown head kind '" + s + "'");
}

namespace {

Shape infer_shape(const Layer& layer, const Shape& in, std::size_t index) {
  const auto where = "layer " + std::to_string(index) + " (" + layer_kind_name(layer.kind) + "): ";
  switch (layer.kind) {
    case LayerKind::kConv2d: {
      if (in.size() != 3 || layer.weight.rank() != 4 || layer.weight.dim(1) != in[0] ||
          layer.bias.rank() != 1 || layer.bias.dim(0) != layer.weight.dim(0) ||
          layer.weight.dim(2) > in[1] || layer.weight.dim(3) > in[2] || layer.stride == 0) {
        throw ShapeError(where + "weight " + shape_string(layer.weight.shape()) +
                         " does not fit input " + shape_string(in));
      }
      return {layer.weight.dim(0), (in[1] - layer.weight.dim(2)) / layer.stride + 1,
              (in[2] - layer.weight.dim(3)) / layer.stride + 1};
    }
    case LayerKind::kRelu:
    case LayerKind::kL2Normalize:
      return in;
    case LayerKind::kAvgPool:
      if (in.size() != 3 || layer.window == 0 || layer.window > in[1] || layer.window > in[2]) {
        throw ShapeError(where + "bad pooling window for " + shape_string(in));
      }
      return {in[0], in[1] / layer.window, in[2] / layer.window};
    case LayerKind::kDense:
      if (layer.weight.rank() != 2 || layer.weight.dim(1) != shape_size(in) ||
          layer.bias.rank() != 1 || layer.bias.dim(0) != layer.weight.dim(0)) {
        throw ShapeError(where + "weight " + shape_string(layer.weight.shape()) +
                         " does not fit input " + shape_string(in));
      }
      return {layer.weight.dim(0)};
  }
  throw std::logic_error("unhandled layer kind");
}

}  // namespace

TapModel::TapModel(std::string name, HeadKind head, Shape input_shape,
                   std::vector<Layer> layers, std::map<std::size_t, std::string> tap_names)
    : name_(std::move(name)),
      head_(head),
      input_shape_(std::move(input_shape)),
      layers_(std::move(layers)),
      tap_names_(std::move(tap_names)) {
  if (layers_.empty()) throw std::invalid_argument("model '" + name_ + "' has no layers");
  shapes_.push_back(input_shape_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    shapes_.push_back(infer_shape(layers_[i], shapes_.back(), i + 1));
  }
  if (head_ == HeadKind::kFrEmbedding && layers_.back().kind != LayerKind::kL2Normalize) {
    throw std::invalid_argument("FR model '" + name_ + "' must end in l2_normalize");
  }
  if (head_ == HeadKind::kFasScore && shape_size(shapes_.back()) != 1) {
    throw std::invalid_argument("FAS model '" + name_ + "' must end in a single unit");
  }
  for (const auto& [idx, label] : tap_names_) check_index(idx);
}

void TapModel::check_index(std::size_t index) const {
  if (index < 1 || index > layers_.size()) {
    throw InvalidLayerError("layer index " + std::to_string(index) + " outside 1.." +
                            std::to_string(layers_.size()) + " for model '" + name_ + "'");
  }
}

const Layer& TapModel::layer(std::size_t index) const {
  check_index(index);
  return layers_[index - 1];
}

Layer& TapModel::mutable_layer(std::size_t index) {
  check_index(index);
  return layers_[index - 1];
}

const Shape& TapModel::output_shape(std::size_t index) const {
  if (index > layers_.size()) check_index(index);
  return shapes_[index];
}

std::size_t TapModel::tap_index(const std::string& name) const {
  for (const auto& [idx, label] : tap_names_)
    if (label == name) return idx;
  throw InvalidLayerError("model '" + name_ + "' has no tap named '" + name + "'");
}

std::string TapModel::tap_label(std::size_t index) const {
  auto it = tap_names_.find(index);
  return it != tap_names_.end() ? it->second : "layer" + std::to_string(index);
}

std::size_t TapModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_)
    if (l.has_params()) n += l.weight.size() + l.bias.size();
  return n;
}

BoundParams bind_parameters(Tape& tape, const TapModel& model, bool trainable) {
  BoundParams p;
  p.weight.resize(model.num_layers() + 1);
  p.bias.resize(model.num_layers() + 1);
  for (std::size_t i = 1; i <= model.num_layers(); ++i) {
    const auto& l = model.layer(i);
    if (!l.has_params()) continue;
    p.weight[i] = tape.leaf(l.weight, trainable);
    p.bias[i] = tape.leaf(l.bias, trainable);
  }
  return p;
}

Var apply_layer(const TapModel& model, std::size_t index, const Var& x,
                const BoundParams& params) {
  const auto& l = model.layer(index);
  switch (l.kind) {
    case LayerKind::kConv2d:
      return conv2d(x, params.weight.at(index), params.bias.at(index), l.stride);
    case LayerKind::kRelu:
      return relu(x);
    case LayerKind::kAvgPool:
      return avg_pool2d(x, l.window);
    case LayerKind::kDense: {
      const Var in = x.shape().size() == 1 ? x : flatten(x);
      return matmul(params.weight.at(index), in) + params.bias.at(index);
    }
    case LayerKind::kL2Normalize:
      return l2_normalize(x);
  }
  throw std::logic_error("unhandled layer kind");
}

Segment::Segment(const TapModel& model, std::size_t start, std::size_t end)
    : model_(&model), start_(start), end_(end) {
  model.check_index(start);
  model.check_index(end);
  if (start > end) {
    throw InvalidLayerError("segment start " + std::to_string(start) + " after end " +
                            std::to_string(end));
  }
}

Var Segment::apply(const Var& x, const BoundParams& params) const {
  if (x.shape() != model_->output_shape(start_ - 1)) {
    throw ShapeError("segment " + std::to_string(start_) + ".." + std::to_string(end_) +
                     " expects input " + shape_string(model_->output_shape(start_ - 1)) +
                     ", got " + shape_string(x.shape()));
  }
  Var h = x;
  for (std::size_t i = start_; i <= end_; ++i) h = apply_layer(*model_, i, h, params);
  return h;
}

Tensor Segment::apply(const Tensor& x) const {
  Tape tape;
  auto params = bind_parameters(tape, *model_, false);
  return apply(tape.leaf(x), params).value();
}

TapOutputs forward_with_taps(Tape& tape, const TapModel& model, const Var& x,
                             std::span<const std::size_t> taps, const BoundParams* params) {
  for (auto k : taps) model.check_index(k);
  if (x.shape() != model.input_shape()) {
    throw ShapeError("model '" + model.name() + "' expects input " +
                     shape_string(model.input_shape()) + ", got " + shape_string(x.shape()));
  }
  BoundParams local;
  if (!params) {
    local = bind_parameters(tape, model, false);
    params = &local;
  }
  TapOutputs out;
  Var h = x;
  for (std::size_t i = 1; i <= model.num_layers(); ++i) {
    h = apply_layer(model, i, h, *params);
    for (auto k : taps)
      if (k == i) out.taps[i] = h;
  }
  out.output = h;
  return out;
}

Tensor predict(const TapModel& model, const Tensor& x) {
  Tape tape;
  return forward_with_taps(tape, model, tape.leaf(x), {}).output.value();
}

std::map<std::size_t, Tensor> tap_values(const TapModel& model, const Tensor& x,
                                         std::span<const std::size_t> taps) {
  Tape tape;
  auto out = forward_with_taps(tape, model, tape.leaf(x), taps);
  std::map<std::size_t, Tensor> values;
  for (const auto& [k, v] : out.taps) values[k] = v.value();
  return values;
}

namespace {
constexpr std::uint32_t kWeightsVersion = 1;
}

std::string encode_model(const TapModel& model) {
  using nlohmann::json;
  json layers = json::array();
  std::string payload;
  for (std::size_t i = 1; i <= model.num_layers(); ++i) {
    const auto& l = model.layer(i);
    json jl = {{"kind", layer_kind_name(l.kind)}};
    if (l.kind == LayerKind::kConv2d) jl["stride"] = l.stride;
    if (l.kind == LayerKind::kAvgPool) jl["window"] = l.window;
    if (l.has_params()) {
      jl["weight_shape"] = l.weight.shape();
      jl["bias_shape"] = l.bias.shape();
      for (double v : l.weight.data()) append_f64(payload, v);
      for (double v : l.bias.data()) append_f64(payload, v);
    }
    layers.push_back(std::move(jl));
  }
  json taps = json::object();
  for (const auto& [idx, label] : model.tap_names()) taps[std::to_string(idx)] = label;
  const json manifest = {{"name", model.name()},
                         {"head", head_kind_name(model.head())},
                         {"input_shape", model.input_shape()},
                         {"layers", std::move(layers)},
                         {"taps", std::move(taps)}};
  const auto text = manifest.dump();
  std::string out(kWeightsMagic.begin(), kWeightsMagic.end());
  append_u32(out, kWeightsVersion);
  append_u64(out, text.size());
  out += text;
  out += payload;
  return out;
}

TapModel decode_model(std::string_view bytes) {
  using nlohmann::json;
  ByteReader r(bytes);
  if (r.take(8) != std::string_view(kWeightsMagic.data(), kWeightsMagic.size())) {
    throw FormatError("not a weight file (bad magic)");
  }
  const auto version = r.u32();
  if (version != kWeightsVersion) {
    throw FormatError("unsupported weight file version " + std::to_string(version));
  }
  const auto len = r.u64();
  const auto manifest = json::parse(r.take(len));
  auto read_tensor = [&r](const json& shape) {
    Shape s = shape.get<Shape>();
    std::vector<double> data(shape_size(s));
    for (auto& v : data) v = r.f64();
    return Tensor(std::move(s), std::move(data));
  };
  std::vector<Layer> layers;
  for (const auto& jl : manifest.at("layers")) {
    Layer l;
    l.kind = parse_layer_kind(jl.at("kind").get<std::string>());
    l.stride = jl.value("stride", std::size_t{1});
    l.window = jl.value("window", std::size_t{2});
    if (l.has_params()) {
      l.weight = read_tensor(jl.at("weight_shape"));
      l.bias = read_tensor(jl.at("bias_shape"));
    }
    layers.push_back(std::move(l));
  }
  if (!r.done()) throw FormatError("trailing bytes in weight file");
  std::map<std::size_t, std::string> taps;
  for (const auto& [k, v] : manifest.at("taps").items()) {
    taps[std::stoul(k)] = v.get<std::string>();
  }
  return TapModel(manifest.at("name").get<std::string>(),
                  parse_head_kind(manifest.at("head").get<std::string>()),
                  manifest.at("input_shape").get<Shape>(), std::move(layers), std::move(taps));
}

}  // namespace rma
