#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "lupi/nn_ops.hpp"
#include "lupi/tensor.hpp"
#include "lupi/vbp.hpp"

namespace lupi::model {

enum class LayerKind { conv, relu, resblock, global_avg_pool, linear, sigmoid };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t out_channels = 0;  // conv: output channels; linear: output size
  std::size_t kernel = 0;        // conv, resblock
  std::size_t stride = 1;        // conv
  std::size_t padding = 0;       // conv

  static LayerSpec conv(std::size_t out_c, std::size_t k, std::size_t stride, std::size_t pad) {
    return {LayerKind::conv, out_c, k, stride, pad};
  }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec resblock(std::size_t k) { return {LayerKind::resblock, 0, k, 1, k / 2}; }
  static LayerSpec global_avg_pool() { return {LayerKind::global_avg_pool}; }
  static LayerSpec linear(std::size_t out) { return {LayerKind::linear, out}; }
  static LayerSpec sigmoid() { return {LayerKind::sigmoid}; }

  bool operator==(const LayerSpec&) const = default;
};

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NetworkSpec {
  std::size_t in_channels = 1;  // includes the mask channel when mask_channel is set
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  bool mask_channel = false;
  std::size_t num_classes = 1;
  std::vector<LayerSpec> layers;

  // Throws SpecError naming the first offending layer.
  void validate() const;
  // [C,H,W] of every layer's input, plus the final output shape.
  std::vector<Shape> layer_shapes() const;
  std::size_t image_channels() const { return in_channels - (mask_channel ? 1 : 0); }

  bool operator==(const NetworkSpec&) const = default;
};

// "conv 8 3 1 1; relu; resblock 3; gap; linear 3; sigmoid"
std::vector<LayerSpec> parse_layers(const std::string& text);
std::string format_layers(const std::vector<LayerSpec>& layers);

std::string spec_to_text(const NetworkSpec& spec);
NetworkSpec spec_from_text(const std::string& text);

struct LinearParams {
  Tensor weights;  // [K, N]
  Tensor bias;     // [K]
};

using LayerParams = std::variant<std::monostate, nn::ConvParams, nn::ResBlockParams, LinearParams>;

class Network {
 public:
  // Glorot-uniform weights, zero biases, deterministic in seed.
  static Network build(const NetworkSpec& spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  const LayerParams& layer(std::size_t i) const { return layers_.at(i); }

  // Declaration order: per layer, conv (weights, bias); resblock (conv1 w, b,
  // conv2 w, b); linear (weights, bias).
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;

 private:
  NetworkSpec spec_;
  std::uint64_t seed_ = 0;
  std::vector<LayerParams> layers_;
};

using ParamGrads = std::vector<Tensor>;

ParamGrads zero_grads(const Network& net);

// Everything backward() needs from a forward pass.
struct ForwardTape {
  std::vector<Tensor> inputs;               // input of each layer
  std::vector<nn::ResBlockCache> caches;    // populated for resblock layers
  std::vector<int> trace_slot;              // trace entry produced at each layer's output, or -1
  Tensor probs;
  vbp::ForwardTrace trace;
};

struct ForwardResult {
  Tensor probs;
  vbp::ForwardTrace trace;
};

// Concatenates the auxiliary mask channel when the spec declares one (zeros
// when aux_mask is null); rejects aux_mask otherwise.
Tensor prepare_input(const NetworkSpec& spec, const Tensor& image, const Tensor* aux_mask);

ForwardTape forward_tape(const Network& net, const Tensor& image, const Tensor* aux_mask = nullptr);
ForwardResult forward_with_trace(const Network& net, const Tensor& image,
                                 const Tensor* aux_mask = nullptr);
// Same arithmetic as forward_with_trace with nothing recorded.
Tensor predict(const Network& net, const Tensor& image, const Tensor* aux_mask = nullptr);

// grad_probs: dL/dprobs. trace_grads: dL/d(feature map) per trace entry, may be null.
ParamGrads backward(const Network& net, const ForwardTape& tape, const Tensor& grad_probs,
                    const std::vector<Tensor>* trace_grads);

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, version, corrupt_length, truncated, spec };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);
std::vector<unsigned char> serialize_checkpoint(const Network& net);
Network deserialize_checkpoint(const std::vector<unsigned char>& bytes);

}  // namespace lupi::model
