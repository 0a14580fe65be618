#pragma once

// Network assembly, forward/backward over a layer stack, the 8-layer
// retrieval architecture, its initialisation, and checkpoint files.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "layers.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace cbmir {

struct NetworkSpec {
  std::vector<LayerKind> layers;
  Shape input_shape;  // C x H x W
  std::size_t num_classes = 0;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;

  // Input shape of every layer followed by the final output shape
  // (size layers.size() + 1). Throws ConfigError if any layer rejects its input.
  std::vector<Shape> shape_trace() const {
    if (input_shape.size() != 3 || shape_size(input_shape) == 0)
      throw ConfigError("network input must be a non-empty CxHxW shape");
    std::vector<Shape> trace{input_shape};
    trace.reserve(layers.size() + 1);
    for (const auto& layer : layers) trace.push_back(output_shape(layer, trace.back()));
    return trace;
  }

  void validate() const {
    const auto trace = shape_trace();
    if (layers.empty() || !std::holds_alternative<LogSoftmax>(layers.back()))
      throw ConfigError("network must end in a log-softmax layer");
    if (shape_size(trace.back()) != num_classes)
      throw ConfigError("network output width does not equal num_classes");
  }

  // Layer indices whose outputs are the three retrieval feature vectors:
  // the post-ReLU output of each fully connected layer before the head.
  // Throws ConfigError unless there are exactly three such layers.
  std::array<std::size_t, 3> feature_taps() const {
    std::vector<std::size_t> fc;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (std::holds_alternative<FullyConnected>(layers[i])) fc.push_back(i);
    if (fc.size() != 4)
      throw ConfigError("retrieval layout needs three fully connected layers plus a head, found " +
                        std::to_string(fc.size()) + " fully connected layers");
    std::array<std::size_t, 3> taps{};
    for (std::size_t k = 0; k < 3; ++k) {
      std::size_t i = fc[k];
      if (i + 1 < layers.size() && std::holds_alternative<ReLU>(layers[i + 1])) ++i;
      taps[k] = i;
    }
    return taps;
  }
};

inline std::size_t scaled_width(std::size_t base, double scale) {
  const double v = std::ceil(static_cast<double>(base) * scale - 1e-9);
  return static_cast<std::size_t>(std::max(1.0, v));
}

// The five-conv / three-FC network with a linear 24-way head. `scale`
// shrinks every channel count and FC width (rounded up).
inline NetworkSpec build_paper_architecture(Shape input_shape = {1, 224, 224},
                                            std::size_t num_classes = 24,
                                            double keep_prob = 0.5, double scale = 1.0) {
  if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("scale must lie in (0, 1]");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  const auto ch = [scale](std::size_t c) { return scaled_width(c, scale); };
  const std::size_t fc = ch(4096);

  NetworkSpec spec;
  spec.input_shape = std::move(input_shape);
  spec.num_classes = num_classes;
  spec.layers = {
      Conv{ch(64), 11, 11, 4, 2},  ReLU{}, MaxPool{3, 2},
      Conv{ch(192), 5, 5, 1, 2},   ReLU{}, MaxPool{3, 2},
      Conv{ch(384), 5, 5, 1, 2},   ReLU{},
      Conv{ch(256), 3, 3, 1, 1},   ReLU{},
      Conv{ch(256), 3, 3, 1, 1},   ReLU{}, MaxPool{3, 2},
      FullyConnected{fc},          ReLU{}, Dropout{keep_prob},
      FullyConnected{fc},          ReLU{}, Dropout{keep_prob},
      FullyConnected{fc},          ReLU{},
      FullyConnected{num_classes}, LogSoftmax{num_classes},
  };
  spec.validate();
  return spec;
}

// Per-pass cache needed by backward(). With `reuse_dropout_masks` set, a
// train-mode forward keeps the masks already stored here instead of
// drawing new ones.
struct Workspace {
  std::vector<Tensor> inputs;  // inputs[i] feeds layer i
  Tensor output;
  std::vector<MaxPoolMask> pool_masks;
  std::vector<DropoutMask> dropout_masks;
  Mode mode = Mode::eval;
  bool reuse_dropout_masks = false;
};

class Network {
 public:
  Network() = default;

  explicit Network(NetworkSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const auto trace = spec_.shape_trace();
    params_.reserve(spec_.layers.size());
    for (std::size_t i = 0; i < spec_.layers.size(); ++i)
      params_.push_back(make_params(spec_.layers[i], trace[i]));
  }

  const NetworkSpec& spec() const { return spec_; }
  std::vector<LayerParams>& params() { return params_; }
  const std::vector<LayerParams>& params() const { return params_; }
  LayerParams& params(std::size_t i) { return params_.at(i); }
  const LayerParams& params(std::size_t i) const { return params_.at(i); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.weights.size() + p.biases.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.zero_grads();
  }

  // Runs the whole stack. `rng` is required in train mode. When `ws` is
  // given it is filled with everything backward() needs.
  Tensor forward(const Tensor& input, Mode mode, Rng* rng = nullptr, Workspace* ws = nullptr) const {
    check_input(input);
    const std::size_t n = spec_.layers.size();
    if (ws) {
      const bool keep_masks = ws->reuse_dropout_masks && ws->dropout_masks.size() == n;
      ws->mode = mode;
      ws->inputs.resize(n);
      ws->pool_masks.resize(n);
      if (!keep_masks) ws->dropout_masks.assign(n, {});
    }
    Tensor x = input;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor y = apply(i, x, mode, rng, ws);
      if (ws) ws->inputs[i] = std::move(x);
      x = std::move(y);
    }
    if (ws) ws->output = x;
    return x;
  }

  // Back-propagates dE/d(output) through the pass recorded in `ws`,
  // accumulating parameter gradients. Returns dE/d(input).
  Tensor backward(const Workspace& ws, const Tensor& grad_output) {
    const std::size_t n = spec_.layers.size();
    if (ws.inputs.size() != n) throw InternalError("backward without a recorded forward pass");
    Tensor g = grad_output;
    for (std::size_t i = n; i-- > 0;) {
      const Tensor& in = ws.inputs[i];
      const Tensor& out = i + 1 < n ? ws.inputs[i + 1] : ws.output;
      g = std::visit(
          [&](const auto& layer) -> Tensor {
            using L = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<L, Conv>) {
              return conv_backward(in, g, params_[i], layer);
            } else if constexpr (std::is_same_v<L, MaxPool>) {
              return maxpool_backward(g, ws.pool_masks[i]);
            } else if constexpr (std::is_same_v<L, ReLU>) {
              return relu_backward(in, g);
            } else if constexpr (std::is_same_v<L, FullyConnected>) {
              return fc_backward(in, g, params_[i], layer);
            } else if constexpr (std::is_same_v<L, Dropout>) {
              return dropout_backward(g, ws.dropout_masks[i], layer.keep_prob, ws.mode);
            } else {
              return logsoftmax_backward(out, g);
            }
          },
          spec_.layers[i]);
    }
    return g;
  }

 private:
  void check_input(const Tensor& input) const {
    if (input.shape() != spec_.input_shape)
      throw InputError("input shape " + shape_str(input.shape()) + " does not match network input " +
                       shape_str(spec_.input_shape));
  }

  Tensor apply(std::size_t i, const Tensor& x, Mode mode, Rng* rng, Workspace* ws) const {
    return std::visit(
        [&](const auto& layer) -> Tensor {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, Conv>) {
            return conv_forward(x, params_[i], layer);
          } else if constexpr (std::is_same_v<L, MaxPool>) {
            return maxpool_forward(x, layer, ws ? &ws->pool_masks[i] : nullptr);
          } else if constexpr (std::is_same_v<L, ReLU>) {
            return relu_forward(x);
          } else if constexpr (std::is_same_v<L, FullyConnected>) {
            return fc_forward(x, params_[i], layer);
          } else if constexpr (std::is_same_v<L, Dropout>) {
            if (mode == Mode::train && ws && ws->reuse_dropout_masks &&
                ws->dropout_masks[i].size() == x.size())
              return apply_mask(x, ws->dropout_masks[i]);
            if (mode == Mode::train && !rng && layer.keep_prob != 1.0)
              throw ConfigError("train-mode dropout needs a random generator");
            Rng dummy;
            return dropout_forward(x, layer.keep_prob, mode, rng ? *rng : dummy,
                                   ws ? &ws->dropout_masks[i] : nullptr);
          } else {
            return logsoftmax_forward(x);
          }
        },
        spec_.layers[i]);
  }

  static Tensor apply_mask(const Tensor& x, const DropoutMask& mask) {
    Tensor y = x;
    for (std::size_t k = 0; k < y.size(); ++k)
      if (!mask[k]) y[k] = 0.0;
    return y;
  }

  NetworkSpec spec_;
  std::vector<LayerParams> params_;
};

// Weights ~ N(0, 0.01^2). Biases are 1 on the 2nd, 4th and 5th conv layers
// and on every fully connected layer except the classifier head; 0 elsewhere.
inline void init_paper_weights(Network& net, std::uint64_t seed, double stddev = 0.01) {
  Rng rng(seed);
  std::size_t conv_ordinal = 0;
  std::size_t fc_total = 0;
  for (const auto& l : net.spec().layers) fc_total += std::holds_alternative<FullyConnected>(l);
  std::size_t fc_ordinal = 0;
  for (std::size_t i = 0; i < net.spec().layers.size(); ++i) {
    const auto& layer = net.spec().layers[i];
    auto& p = net.params(i);
    double bias = 0.0;
    if (std::holds_alternative<Conv>(layer)) {
      bias = (conv_ordinal == 1 || conv_ordinal == 3 || conv_ordinal == 4) ? 1.0 : 0.0;
      ++conv_ordinal;
    } else if (std::holds_alternative<FullyConnected>(layer)) {
      bias = fc_ordinal + 1 < fc_total ? 1.0 : 0.0;
      ++fc_ordinal;
    } else {
      continue;
    }
    for (double& w : p.weights.values()) w = rng.normal(0.0, stddev);
    p.biases.fill(bias);
    p.zero_grads();
  }
}

// Weights ~ N(0, 2 / fan_in), biases 0. Keeps activation variance roughly
// constant through the ReLU stack; the desk-scale training recipe uses it.
inline void init_fan_in_weights(Network& net, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : net.params()) {
    if (p.empty()) continue;
    const std::size_t fan_in = p.weights.size() / p.weights.dim(0);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& w : p.weights.values()) w = rng.normal(0.0, stddev);
    p.biases.fill(0.0);
    p.zero_grads();
  }
}

enum class InitScheme { paper, fan_in };

inline void init_weights(Network& net, InitScheme scheme, std::uint64_t seed) {
  if (scheme == InitScheme::paper) {
    init_paper_weights(net, seed);
  } else {
    init_fan_in_weights(net, seed);
  }
}

struct Classification {
  Tensor log_probs;
  std::size_t predicted_class = 0;
  std::array<Tensor, 3> fc_activations;  // post-ReLU outputs of FCL1..FCL3
};

inline std::size_t argmax(const Tensor& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t[i] > t[best]) best = i;
  return best;
}

// One forward pass capturing the three feature vectors. Safe to call
// concurrently on a shared network in eval mode.
inline Classification forward_classify(const Network& net, const Tensor& image,
                                       Mode mode = Mode::eval, Rng* rng = nullptr) {
  const auto taps = net.spec().feature_taps();
  Workspace ws;
  Classification out;
  out.log_probs = net.forward(image, mode, rng, &ws);
  out.predicted_class = argmax(out.log_probs);
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t i = taps[k];
    out.fc_activations[k] = i + 1 < ws.inputs.size() ? ws.inputs[i + 1] : ws.output;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct TrainingMetadata {
  std::uint64_t epochs = 0;
  double final_loss = 0.0;
  std::uint64_t rng_seed = 0;
  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct Checkpoint {
  Network network;
  TrainingMetadata metadata;
};

inline constexpr std::string_view kCheckpointMagic = "CBMIRCKP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

enum class LayerTag : std::uint8_t {
  conv = 1, maxpool = 2, relu = 3, fc = 4, dropout = 5, logsoftmax = 6
};

inline void write_tensor(ByteWriter& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u64(d);
  for (double v : t.values()) w.f64(v);
}

inline Tensor read_tensor(ByteReader& r) {
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = r.u64();
  const std::size_t n = rank == 0 ? 0 : shape_size(shape);
  if (n > r.remaining() / 8)
    throw TruncatedError("tensor payload of " + std::to_string(n) + " values is truncated");
  std::vector<double> data(n);
  for (auto& v : data) v = r.f64();
  if (rank == 0) return Tensor();
  return Tensor(std::move(shape), std::move(data));
}

inline void write_spec(ByteWriter& w, const NetworkSpec& spec) {
  w.u32(static_cast<std::uint32_t>(spec.input_shape.size()));
  for (auto d : spec.input_shape) w.u64(d);
  w.u64(spec.num_classes);
  w.u32(static_cast<std::uint32_t>(spec.layers.size()));
  for (const auto& layer : spec.layers) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Conv>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::conv));
            w.u64(l.out_channels);
            w.u64(l.kernel_h);
            w.u64(l.kernel_w);
            w.u64(l.stride);
            w.u64(l.padding);
          } else if constexpr (std::is_same_v<L, MaxPool>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::maxpool));
            w.u64(l.window);
            w.u64(l.stride);
          } else if constexpr (std::is_same_v<L, ReLU>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::relu));
          } else if constexpr (std::is_same_v<L, FullyConnected>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::fc));
            w.u64(l.out_units);
          } else if constexpr (std::is_same_v<L, Dropout>) {
            w.u8(static_cast<std::uint8_t>(LayerTag::dropout));
            w.f64(l.keep_prob);
          } else {
            w.u8(static_cast<std::uint8_t>(LayerTag::logsoftmax));
            w.u64(l.num_classes);
          }
        },
        layer);
  }
}

inline NetworkSpec read_spec(ByteReader& r) {
  NetworkSpec spec;
  const std::uint32_t rank = r.u32();
  if (rank != 3) throw FormatError("network input rank must be 3");
  spec.input_shape.resize(rank);
  for (auto& d : spec.input_shape) d = r.u64();
  spec.num_classes = r.u64();
  const std::uint32_t n = r.u32();
  if (n > r.remaining()) throw TruncatedError("layer list is truncated");
  for (std::uint32_t i = 0; i < n; ++i) {
    switch (static_cast<LayerTag>(r.u8())) {
      case LayerTag::conv: {
        Conv c;
        c.out_channels = r.u64();
        c.kernel_h = r.u64();
        c.kernel_w = r.u64();
        c.stride = r.u64();
        c.padding = r.u64();
        spec.layers.emplace_back(c);
        break;
      }
      case LayerTag::maxpool: {
        MaxPool p;
        p.window = r.u64();
        p.stride = r.u64();
        spec.layers.emplace_back(p);
        break;
      }
      case LayerTag::relu: spec.layers.emplace_back(ReLU{}); break;
      case LayerTag::fc: spec.layers.emplace_back(FullyConnected{r.u64()}); break;
      case LayerTag::dropout: spec.layers.emplace_back(Dropout{r.f64()}); break;
      case LayerTag::logsoftmax: spec.layers.emplace_back(LogSoftmax{r.u64()}); break;
      default: throw FormatError("unknown layer tag in checkpoint");
    }
  }
  return spec;
}

}  // namespace detail

// Spec followed by every parameter tensor in layer order. This section
// alone determines the network fingerprint.
inline std::string serialize_network(const Network& net) {
  ByteWriter w;
  detail::write_spec(w, net.spec());
  w.u32(static_cast<std::uint32_t>(net.params().size()));
  for (const auto& p : net.params()) {
    detail::write_tensor(w, p.weights);
    detail::write_tensor(w, p.biases);
  }
  return std::move(w).take();
}

inline Network deserialize_network(ByteReader& r) {
  NetworkSpec spec = detail::read_spec(r);
  Network net;
  try {
    net = Network(std::move(spec));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid network: ") + e.what());
  }
  const std::uint32_t n = r.u32();
  if (n != net.params().size()) throw FormatError("parameter block count does not match layers");
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor w = detail::read_tensor(r);
    Tensor b = detail::read_tensor(r);
    auto& p = net.params(i);
    if (w.shape() != p.weights.shape() || b.shape() != p.biases.shape())
      throw FormatError("parameter tensor shape mismatch at layer " + std::to_string(i));
    p.weights = std::move(w);
    p.biases = std::move(b);
  }
  return net;
}

inline std::uint64_t network_fingerprint(const Network& net) {
  return fnv1a64(serialize_network(net));
}

inline std::string encode_checkpoint(const Network& net, const TrainingMetadata& meta) {
  ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(meta.epochs);
  w.f64(meta.final_loss);
  w.u64(meta.rng_seed);
  w.raw(serialize_network(net));
  return std::move(w).take();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (bytes.size() < kCheckpointMagic.size() || r.raw(kCheckpointMagic.size()) != kCheckpointMagic)
    throw BadMagicError("not a checkpoint file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.metadata.epochs = r.u64();
  ck.metadata.final_loss = r.f64();
  ck.metadata.rng_seed = r.u64();
  ck.network = deserialize_network(r);
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint payload");
  return ck;
}

inline void save_checkpoint(const Network& net, const std::string& path,
                            const TrainingMetadata& meta = {}) {
  write_file(path, encode_checkpoint(net, meta));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace cbmir
