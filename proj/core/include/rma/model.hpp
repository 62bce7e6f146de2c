#pragma once

// Single-branch layered networks with named intermediate taps.
//
// Layers are numbered 1..l. Layer i consumes exactly the output of layer
// i-1 (layer 1 consumes the input image), so any contiguous range [i, j]
// is itself a network (a Segment) and Segment(1,k) followed by
// Segment(k+1,l) is the full forward pass.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rma/tape.hpp"
#include "rma/tensor.hpp"

namespace rma {

enum class LayerKind { kConv2d, kRelu, kAvgPool, kDense, kL2Normalize };
enum class HeadKind { kFrEmbedding, kFasScore };

const char* layer_kind_name(LayerKind k);
LayerKind parse_layer_kind(const std::string& s);
const char* head_kind_name(HeadKind h);
HeadKind parse_head_kind(const std::string& s);

struct Layer {
  LayerKind kind = LayerKind::kRelu;
  Tensor weight;  // conv: (o,c,kh,kw); dense: (out,in)
  Tensor bias;    // (o) or (out)
  std::size_t stride = 1;
  std::size_t window = 2;

  bool has_params() const noexcept {
    return kind == LayerKind::kConv2d || kind == LayerKind::kDense;
  }

  friend bool operator==(const Layer&, const Layer&) = default;
};

class InvalidLayerError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class TapModel {
 public:
  TapModel() = default;
  /// Validates the layer chain against `input_shape` and the head contract:
  /// an FR model ends in kL2Normalize, an FAS model ends in a single unit.
  TapModel(std::string name, HeadKind head, Shape input_shape, std::vector<Layer> layers,
           std::map<std::size_t, std::string> tap_names);

  const std::string& name() const noexcept { return name_; }
  HeadKind head() const noexcept { return head_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_layers() const noexcept { return layers_.size(); }

  /// 1-based.
  const Layer& layer(std::size_t index) const;
  Layer& mutable_layer(std::size_t index);
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  /// Output shape of layer `index` (index 0 is the input).
  const Shape& output_shape(std::size_t index) const;
  /// Number of units m_k in the output of layer k.
  std::size_t units(std::size_t index) const { return shape_size(output_shape(index)); }

  const std::map<std::size_t, std::string>& tap_names() const noexcept { return tap_names_; }
  std::size_t tap_index(const std::string& name) const;
  std::string tap_label(std::size_t index) const;

  void check_index(std::size_t index) const;
  std::size_t parameter_count() const;

  friend bool operator==(const TapModel&, const TapModel&) = default;

 private:
  std::string name_;
  HeadKind head_ = HeadKind::kFasScore;
  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
  std::map<std::size_t, std::string> tap_names_;
};

/// Model parameters placed as leaves on one tape; index 0 is unused.
struct BoundParams {
  std::vector<Var> weight;
  std::vector<Var> bias;
};

BoundParams bind_parameters(Tape& tape, const TapModel& model, bool trainable);

/// Applies layer `index` to `x`.
Var apply_layer(const TapModel& model, std::size_t index, const Var& x,
                const BoundParams& params);

/// Composition of layers start..end (inclusive, 1-based).
class Segment {
 public:
  Segment(const TapModel& model, std::size_t start, std::size_t end);

  std::size_t start() const noexcept { return start_; }
  std::size_t end() const noexcept { return end_; }
  Var apply(const Var& x, const BoundParams& params) const;
  Tensor apply(const Tensor& x) const;

 private:
  const TapModel* model_;
  std::size_t start_;
  std::size_t end_;
};

struct TapOutputs {
  Var output;
  std::map<std::size_t, Var> taps;
};

/// One forward pass recording the activations of the requested layers.
/// Parameters are bound as constants when `params` is null.
TapOutputs forward_with_taps(Tape& tape, const TapModel& model, const Var& x,
                             std::span<const std::size_t> taps,
                             const BoundParams* params = nullptr);

/// Plain inference: final output values.
Tensor predict(const TapModel& model, const Tensor& x);

/// Activations of the requested layers for `x`, keyed by layer index.
std::map<std::size_t, Tensor> tap_values(const TapModel& model, const Tensor& x,
                                         std::span<const std::size_t> taps);

/// Weight file: magic | u32 version | u64 manifest length | manifest JSON |
/// raw LE doubles for every parameterized layer (weight then bias).
std::string encode_model(const TapModel& model);
TapModel decode_model(std::string_view bytes);

}  // namespace rma
