#include "lupi/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace lupi::model {

namespace {

std::string layer_name(std::size_t i, const LayerSpec& l) {
  static const char* names[] = {"conv", "relu", "resblock", "gap", "linear", "sigmoid"};
  return "layer " + std::to_string(i) + " (" + names[static_cast<int>(l.kind)] + ")";
}

}  // namespace

std::vector<Shape> NetworkSpec::layer_shapes() const {
  std::vector<Shape> shapes;
  Shape cur{in_channels, in_h, in_w};
  shapes.push_back(cur);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    switch (l.kind) {
      case LayerKind::conv: {
        if (cur.size() != 3) throw SpecError(layer_name(i, l) + ": convolution after pooling");
        if (l.out_channels == 0 || l.kernel == 0)
          throw SpecError(layer_name(i, l) + ": channels and kernel must be positive");
        if (l.stride == 0 || l.stride > 2) throw SpecError(layer_name(i, l) + ": stride must be 1 or 2");
        const auto oh = nn::conv_output_extent(cur[1], l.kernel, l.stride, l.padding);
        const auto ow = nn::conv_output_extent(cur[2], l.kernel, l.stride, l.padding);
        if (oh == 0 || ow == 0)
          throw SpecError(layer_name(i, l) + ": nonpositive output extent for input " + shape_str(cur));
        cur = {l.out_channels, oh, ow};
        break;
      }
      case LayerKind::resblock:
        if (cur.size() != 3) throw SpecError(layer_name(i, l) + ": residual block after pooling");
        if (l.kernel == 0 || l.kernel % 2 == 0)
          throw SpecError(layer_name(i, l) + ": kernel must be odd for same padding");
        break;
      case LayerKind::relu:
      case LayerKind::sigmoid:
        break;
      case LayerKind::global_avg_pool:
        if (cur.size() != 3) throw SpecError(layer_name(i, l) + ": expects a [C,H,W] input");
        cur = {cur[0]};
        break;
      case LayerKind::linear:
        if (cur.size() != 1) throw SpecError(layer_name(i, l) + ": linear must follow pooling");
        if (l.out_channels == 0) throw SpecError(layer_name(i, l) + ": output size must be positive");
        cur = {l.out_channels};
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

void NetworkSpec::validate() const {
  if (in_channels == 0 || in_h == 0 || in_w == 0) throw SpecError("input shape must be positive");
  if (mask_channel && in_channels < 2)
    throw SpecError("mask_channel requires at least one image channel plus the mask");
  if (num_classes == 0) throw SpecError("num_classes must be positive");
  const std::size_t n = layers.size();
  if (n < 4) throw SpecError("network needs at least one feature layer and a gap/linear/sigmoid tail");
  std::size_t gap_count = 0, feature_layers = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = layers[i];
    if (l.kind == LayerKind::global_avg_pool) ++gap_count;
    if (l.kind == LayerKind::conv) {
      ++feature_layers;
      if (i + 1 >= n || layers[i + 1].kind != LayerKind::relu)
        throw SpecError(layer_name(i, l) + ": every convolution must be followed by relu");
    }
    if (l.kind == LayerKind::resblock) ++feature_layers;
  }
  if (gap_count != 1) throw SpecError("network must contain exactly one gap layer");
  if (layers[n - 3].kind != LayerKind::global_avg_pool || layers[n - 2].kind != LayerKind::linear ||
      layers[n - 1].kind != LayerKind::sigmoid)
    throw SpecError("network must end with gap; linear; sigmoid");
  if (layers[n - 2].out_channels != num_classes)
    throw SpecError(layer_name(n - 2, layers[n - 2]) + ": output size " +
                    std::to_string(layers[n - 2].out_channels) + " does not match " +
                    std::to_string(num_classes) + " classes");
  if (feature_layers == 0) throw SpecError("network needs at least one conv or resblock layer");
  (void)layer_shapes();
}

std::vector<LayerSpec> parse_layers(const std::string& text) {
  std::vector<LayerSpec> layers;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ';')) {
    std::istringstream is(item);
    std::string kind;
    if (!(is >> kind)) continue;
    auto read = [&](const char* field) {
      long long v = -1;
      if (!(is >> v) || v < 0)
        throw SpecError("layer '" + item + "': missing or invalid " + field);
      return static_cast<std::size_t>(v);
    };
    LayerSpec l;
    if (kind == "conv") {
      const auto c = read("channels");
      const auto k = read("kernel");
      const auto s = read("stride");
      const auto p = read("padding");
      l = LayerSpec::conv(c, k, s, p);
    } else if (kind == "relu") {
      l = LayerSpec::relu();
    } else if (kind == "resblock") {
      l = LayerSpec::resblock(read("kernel"));
    } else if (kind == "gap") {
      l = LayerSpec::global_avg_pool();
    } else if (kind == "linear") {
      l = LayerSpec::linear(read("outputs"));
    } else if (kind == "sigmoid") {
      l = LayerSpec::sigmoid();
    } else {
      throw SpecError("unknown layer kind '" + kind + "'");
    }
    std::string extra;
    if (is >> extra) throw SpecError("layer '" + item + "': unexpected token '" + extra + "'");
    layers.push_back(l);
  }
  return layers;
}

std::string format_layers(const std::vector<LayerSpec>& layers) {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) os << "; ";
    const auto& l = layers[i];
    switch (l.kind) {
      case LayerKind::conv:
        os << "conv " << l.out_channels << ' ' << l.kernel << ' ' << l.stride << ' ' << l.padding;
        break;
      case LayerKind::relu: os << "relu"; break;
      case LayerKind::resblock: os << "resblock " << l.kernel; break;
      case LayerKind::global_avg_pool: os << "gap"; break;
      case LayerKind::linear: os << "linear " << l.out_channels; break;
      case LayerKind::sigmoid: os << "sigmoid"; break;
    }
  }
  return os.str();
}

std::string spec_to_text(const NetworkSpec& spec) {
  std::ostringstream os;
  os << "input " << spec.in_channels << ' ' << spec.in_h << ' ' << spec.in_w << '\n'
     << "mask_channel " << (spec.mask_channel ? 1 : 0) << '\n'
     << "classes " << spec.num_classes << '\n'
     << "layers " << format_layers(spec.layers) << '\n';
  return os.str();
}

NetworkSpec spec_from_text(const std::string& text) {
  NetworkSpec spec;
  std::istringstream is(text);
  std::string line;
  bool seen[4] = {false, false, false, false};
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "input") {
      if (!(ls >> spec.in_channels >> spec.in_h >> spec.in_w)) throw SpecError("bad input line");
      seen[0] = true;
    } else if (key == "mask_channel") {
      int v = 0;
      if (!(ls >> v) || (v != 0 && v != 1)) throw SpecError("bad mask_channel line");
      spec.mask_channel = v == 1;
      seen[1] = true;
    } else if (key == "classes") {
      if (!(ls >> spec.num_classes)) throw SpecError("bad classes line");
      seen[2] = true;
    } else if (key == "layers") {
      std::string rest;
      std::getline(ls, rest);
      spec.layers = parse_layers(rest);
      seen[3] = true;
    } else {
      throw SpecError("unknown spec key '" + key + "'");
    }
  }
  for (bool s : seen)
    if (!s) throw SpecError("incomplete network spec text");
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------

namespace {

class UniformSource {
 public:
  explicit UniformSource(std::uint64_t seed) : rng_(seed) {}
  double next(double bound) {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;  // [0,1)
    return (2.0 * u - 1.0) * bound;
  }

 private:
  std::mt19937_64 rng_;
};

nn::ConvParams glorot_conv(UniformSource& src, std::size_t out_c, std::size_t in_c, std::size_t k,
                           std::size_t stride, std::size_t pad) {
  nn::ConvParams p{Tensor({out_c, in_c, k, k}), Tensor({out_c}), stride, pad};
  const double bound = std::sqrt(6.0 / static_cast<double>((in_c + out_c) * k * k));
  for (auto& w : p.weights.data()) w = src.next(bound);
  return p;
}

}  // namespace

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network net;
  net.spec_ = spec;
  net.seed_ = seed;
  UniformSource src(seed);
  const auto shapes = spec.layer_shapes();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const Shape& in = shapes[i];
    switch (l.kind) {
      case LayerKind::conv:
        net.layers_.emplace_back(glorot_conv(src, l.out_channels, in[0], l.kernel, l.stride, l.padding));
        break;
      case LayerKind::resblock: {
        nn::ResBlockParams rb;
        rb.conv1 = glorot_conv(src, in[0], in[0], l.kernel, 1, l.kernel / 2);
        rb.conv2 = glorot_conv(src, in[0], in[0], l.kernel, 1, l.kernel / 2);
        net.layers_.emplace_back(std::move(rb));
        break;
      }
      case LayerKind::linear: {
        LinearParams lp{Tensor({l.out_channels, in[0]}), Tensor({l.out_channels})};
        const double bound = std::sqrt(6.0 / static_cast<double>(in[0] + l.out_channels));
        for (auto& w : lp.weights.data()) w = src.next(bound);
        net.layers_.emplace_back(std::move(lp));
        break;
      }
      default:
        net.layers_.emplace_back(std::monostate{});
    }
  }
  return net;
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  for (auto& lp : layers_) {
    if (auto* c = std::get_if<nn::ConvParams>(&lp)) {
      out.push_back(&c->weights);
      out.push_back(&c->bias);
    } else if (auto* r = std::get_if<nn::ResBlockParams>(&lp)) {
      out.push_back(&r->conv1.weights);
      out.push_back(&r->conv1.bias);
      out.push_back(&r->conv2.weights);
      out.push_back(&r->conv2.bias);
    } else if (auto* li = std::get_if<LinearParams>(&lp)) {
      out.push_back(&li->weights);
      out.push_back(&li->bias);
    }
  }
  return out;
}

std::vector<const Tensor*> Network::parameters() const {
  auto mut = const_cast<Network*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> Network::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    if (std::holds_alternative<nn::ConvParams>(layers_[i]) ||
        std::holds_alternative<LinearParams>(layers_[i])) {
      names.push_back(p + "weights");
      names.push_back(p + "bias");
    } else if (std::holds_alternative<nn::ResBlockParams>(layers_[i])) {
      names.push_back(p + "conv1.weights");
      names.push_back(p + "conv1.bias");
      names.push_back(p + "conv2.weights");
      names.push_back(p + "conv2.bias");
    }
  }
  return names;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

ParamGrads zero_grads(const Network& net) {
  ParamGrads g;
  for (const Tensor* t : net.parameters()) g.push_back(Tensor::zeros_like(*t));
  return g;
}

// ---------------------------------------------------------------------------

Tensor prepare_input(const NetworkSpec& spec, const Tensor& image, const Tensor* aux_mask) {
  const Shape image_shape{spec.image_channels(), spec.in_h, spec.in_w};
  if (image.shape() != image_shape)
    throw ShapeError("input " + shape_str(image.shape()) + " does not match network input " +
                     shape_str(image_shape));
  if (!spec.mask_channel) {
    if (aux_mask) throw ShapeError("auxiliary mask supplied to a network without a mask channel");
    return image;
  }
  if (aux_mask) {
    if (aux_mask->shape() != Shape{1, spec.in_h, spec.in_w})
      throw ShapeError("auxiliary mask " + shape_str(aux_mask->shape()) + " does not match input grid");
    return concat_channels(image, *aux_mask);
  }
  return concat_channels(image, Tensor({1, spec.in_h, spec.in_w}));
}

namespace {

// Shared by predict and forward_tape so both produce bit-identical probs.
Tensor run_forward(const Network& net, Tensor x, ForwardTape* tape) {
  const auto& spec = net.spec();
  const std::size_t n = spec.layers.size();
  if (tape) {
    tape->inputs.resize(n);
    tape->caches.resize(n);
    tape->trace_slot.assign(n, -1);
    tape->trace = {};
    tape->trace.input_h = x.dim(1);
    tape->trace.input_w = x.dim(2);
  }
  nn::DeconvGeometry pending{};  // geometry of the conv awaiting its relu
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = spec.layers[i];
    const auto& params = net.layer(i);
    Tensor y;
    switch (l.kind) {
      case LayerKind::conv: {
        const auto& p = std::get<nn::ConvParams>(params);
        pending = {p.kernel_h(), p.kernel_w(), p.stride, p.padding, x.dim(1), x.dim(2)};
        y = nn::conv2d_forward(x, p);
        break;
      }
      case LayerKind::relu:
        y = nn::relu_forward(x);
        if (tape && i > 0 && spec.layers[i - 1].kind == LayerKind::conv) {
          tape->trace_slot[i] = static_cast<int>(tape->trace.entries.size());
          tape->trace.entries.push_back({y, pending});
        }
        break;
      case LayerKind::resblock: {
        const auto& p = std::get<nn::ResBlockParams>(params);
        y = nn::residual_block_forward(x, p, tape ? &tape->caches[i] : nullptr);
        if (tape) {
          tape->trace_slot[i] = static_cast<int>(tape->trace.entries.size());
          tape->trace.entries.push_back({y, nn::residual_block_geometry(p, x.dim(1), x.dim(2))});
        }
        break;
      }
      case LayerKind::global_avg_pool:
        y = nn::global_avg_pool_forward(x);
        break;
      case LayerKind::linear: {
        const auto& p = std::get<LinearParams>(params);
        y = nn::linear_forward(x, p.weights, p.bias);
        break;
      }
      case LayerKind::sigmoid:
        y = nn::sigmoid_forward(x);
        break;
    }
    if (tape) tape->inputs[i] = std::move(x);
    x = std::move(y);
  }
  if (tape) tape->probs = x;
  return x;
}

}  // namespace

ForwardTape forward_tape(const Network& net, const Tensor& image, const Tensor* aux_mask) {
  ForwardTape tape;
  run_forward(net, prepare_input(net.spec(), image, aux_mask), &tape);
  return tape;
}

ForwardResult forward_with_trace(const Network& net, const Tensor& image, const Tensor* aux_mask) {
  ForwardTape tape = forward_tape(net, image, aux_mask);
  return ForwardResult{std::move(tape.probs), std::move(tape.trace)};
}

Tensor predict(const Network& net, const Tensor& image, const Tensor* aux_mask) {
  return run_forward(net, prepare_input(net.spec(), image, aux_mask), nullptr);
}

ParamGrads backward(const Network& net, const ForwardTape& tape, const Tensor& grad_probs,
                    const std::vector<Tensor>* trace_grads) {
  const auto& spec = net.spec();
  const std::size_t n = spec.layers.size();
  if (trace_grads && trace_grads->size() != tape.trace.entries.size())
    throw ShapeError("backward: " + std::to_string(trace_grads->size()) +
                     " trace gradients for " + std::to_string(tape.trace.entries.size()) +
                     " trace entries");
  require_same_shape(tape.probs, grad_probs, "backward");

  // Offset of each layer's first parameter in declaration order.
  std::vector<std::size_t> offset(n, 0);
  {
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      offset[i] = k;
      if (spec.layers[i].kind == LayerKind::conv || spec.layers[i].kind == LayerKind::linear) k += 2;
      if (spec.layers[i].kind == LayerKind::resblock) k += 4;
    }
  }

  ParamGrads grads = zero_grads(net);
  Tensor g = grad_probs;
  for (std::size_t i = n; i-- > 0;) {
    if (trace_grads && tape.trace_slot[i] >= 0) g += (*trace_grads)[tape.trace_slot[i]];
    const Tensor& x = tape.inputs[i];
    const auto& params = net.layer(i);
    switch (spec.layers[i].kind) {
      case LayerKind::sigmoid: {
        // Output of the sigmoid is the tape's probs (always the last layer).
        g = nn::sigmoid_backward(tape.probs, g);
        break;
      }
      case LayerKind::linear: {
        const auto& p = std::get<LinearParams>(params);
        auto lg = nn::linear_backward(x, p.weights, g);
        grads[offset[i]] = std::move(lg.weights);
        grads[offset[i] + 1] = std::move(lg.bias);
        g = std::move(lg.input);
        break;
      }
      case LayerKind::global_avg_pool:
        g = nn::global_avg_pool_backward(x.shape(), g);
        break;
      case LayerKind::resblock: {
        const auto& p = std::get<nn::ResBlockParams>(params);
        auto rg = nn::residual_block_backward(x, p, tape.caches[i], g);
        grads[offset[i]] = std::move(rg.conv1.weights);
        grads[offset[i] + 1] = std::move(rg.conv1.bias);
        grads[offset[i] + 2] = std::move(rg.conv2.weights);
        grads[offset[i] + 3] = std::move(rg.conv2.bias);
        g = std::move(rg.input);
        break;
      }
      case LayerKind::relu:
        g = nn::relu_backward(x, g);
        break;
      case LayerKind::conv: {
        const auto& p = std::get<nn::ConvParams>(params);
        auto cg = nn::conv2d_backward(x, p, g);
        grads[offset[i]] = std::move(cg.weights);
        grads[offset[i] + 1] = std::move(cg.bias);
        g = std::move(cg.input);
        break;
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'L', 'U', 'P', 'I', 'P', 'F', 'C', 'K'};
constexpr std::uint64_t kMaxSpecBytes = 1 << 20;

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : bytes_(b) {}
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(CheckpointError::Kind::truncated,
                            std::string("checkpoint truncated while reading ") + what);
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const Network& net) {
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u64(out, net.seed());
  const std::string text = spec_to_text(net.spec());
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  put_u64(out, net.parameter_count());
  for (const Tensor* t : net.parameters())
    for (double v : t->data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Network deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
  using Kind = CheckpointError::Kind;
  Reader r(bytes);
  const std::string magic = r.str(sizeof(kMagic), "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic))
    throw CheckpointError(Kind::bad_magic, "not a checkpoint file (bad magic)");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError(Kind::version, "unsupported checkpoint version " + std::to_string(version) +
                                             " (expected " + std::to_string(kCheckpointVersion) + ")");
  const auto seed = r.u64("seed");
  const auto spec_len = r.u64("spec length");
  if (spec_len > kMaxSpecBytes)
    throw CheckpointError(Kind::corrupt_length, "corrupted spec length " + std::to_string(spec_len));
  const std::string text = r.str(spec_len, "spec text");
  NetworkSpec spec;
  try {
    spec = spec_from_text(text);
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::spec, std::string("invalid network spec in checkpoint: ") + e.what());
  }
  Network net = Network::build(spec, seed);
  const auto count = r.u64("parameter count");
  if (count != net.parameter_count())
    throw CheckpointError(Kind::corrupt_length, "corrupted parameter count " + std::to_string(count) +
                                                    " (spec declares " +
                                                    std::to_string(net.parameter_count()) + ")");
  r.need(count * 8, "parameters");
  for (Tensor* t : net.parameters())
    for (auto& v : t->data()) v = std::bit_cast<double>(r.u64("parameters"));
  if (r.remaining() != 0)
    throw CheckpointError(Kind::corrupt_length,
                          std::to_string(r.remaining()) + " trailing bytes after parameters");
  return net;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(net);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError(CheckpointError::Kind::io, "failed writing " + path.string());
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace lupi::model
