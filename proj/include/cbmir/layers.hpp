#pragma once

// Forward and backward kernels for the six layer types of the network.
// Spatial tensors are C x H x W; fully connected layers accept any shape
// and treat it as a flat vector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "random.hpp"
#include "tensor.hpp"

namespace cbmir {

struct Conv {
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  friend bool operator==(const Conv&, const Conv&) = default;
};

struct MaxPool {
  std::size_t window = 2;
  std::size_t stride = 2;
  friend bool operator==(const MaxPool&, const MaxPool&) = default;
};

struct ReLU {
  friend bool operator==(const ReLU&, const ReLU&) = default;
};

struct FullyConnected {
  std::size_t out_units = 1;
  friend bool operator==(const FullyConnected&, const FullyConnected&) = default;
};

struct Dropout {
  double keep_prob = 0.5;
  friend bool operator==(const Dropout&, const Dropout&) = default;
};

struct LogSoftmax {
  std::size_t num_classes = 1;
  friend bool operator==(const LogSoftmax&, const LogSoftmax&) = default;
};

using LayerKind = std::variant<Conv, MaxPool, ReLU, FullyConnected, Dropout, LogSoftmax>;

enum class Mode { train, eval };

inline std::string layer_name(const LayerKind& kind) {
  struct {
    std::string operator()(const Conv& c) const {
      return "Conv(" + std::to_string(c.out_channels) + "," + std::to_string(c.kernel_h) +
             "x" + std::to_string(c.kernel_w) + ",s" + std::to_string(c.stride) + ",p" +
             std::to_string(c.padding) + ")";
    }
    std::string operator()(const MaxPool& p) const {
      return "MaxPool(" + std::to_string(p.window) + ",s" + std::to_string(p.stride) + ")";
    }
    std::string operator()(const ReLU&) const { return "ReLU"; }
    std::string operator()(const FullyConnected& f) const {
      return "FC(" + std::to_string(f.out_units) + ")";
    }
    std::string operator()(const Dropout& d) const {
      return "Dropout(" + std::to_string(d.keep_prob) + ")";
    }
    std::string operator()(const LogSoftmax& l) const {
      return "LogSoftmax(" + std::to_string(l.num_classes) + ")";
    }
  } visitor;
  return std::visit(visitor, kind);
}

// Parameters of one layer together with their accumulated gradients.
// Parameterless layers hold four empty tensors.
struct LayerParams {
  Tensor weights;
  Tensor biases;
  Tensor weight_grads;
  Tensor bias_grads;

  LayerParams() = default;
  LayerParams(Shape weight_shape, Shape bias_shape)
      : weights(weight_shape),
        biases(bias_shape),
        weight_grads(weight_shape),
        bias_grads(bias_shape) {}

  bool empty() const { return weights.empty() && biases.empty(); }

  void zero_grads() {
    weight_grads.fill(0.0);
    bias_grads.fill(0.0);
  }
};

namespace detail {

inline std::size_t window_output(std::size_t extent, std::size_t padding, std::size_t window,
                                 std::size_t stride, const char* what) {
  if (stride == 0) throw ConfigError(std::string(what) + ": stride must be >= 1");
  if (window == 0) throw ConfigError(std::string(what) + ": window must be >= 1");
  const std::size_t padded = extent + 2 * padding;
  if (window > padded)
    throw ConfigError(std::string(what) + ": window " + std::to_string(window) +
                      " exceeds padded extent " + std::to_string(padded));
  return (padded - window) / stride + 1;
}

inline void require_rank3(const Shape& s, const char* what) {
  if (s.size() != 3)
    throw ConfigError(std::string(what) + ": expected CxHxW input, got " + shape_str(s));
}

}  // namespace detail

// Output shape of a layer applied to `in`; throws ConfigError when the
// layer cannot accept that shape.
inline Shape output_shape(const LayerKind& kind, const Shape& in) {
  struct {
    const Shape& in;
    Shape operator()(const Conv& c) const {
      detail::require_rank3(in, "conv");
      return {c.out_channels,
              detail::window_output(in[1], c.padding, c.kernel_h, c.stride, "conv"),
              detail::window_output(in[2], c.padding, c.kernel_w, c.stride, "conv")};
    }
    Shape operator()(const MaxPool& p) const {
      detail::require_rank3(in, "maxpool");
      return {in[0], detail::window_output(in[1], 0, p.window, p.stride, "maxpool"),
              detail::window_output(in[2], 0, p.window, p.stride, "maxpool")};
    }
    Shape operator()(const ReLU&) const { return in; }
    Shape operator()(const FullyConnected& f) const { return {f.out_units}; }
    Shape operator()(const Dropout& d) const {
      if (!(d.keep_prob > 0.0 && d.keep_prob <= 1.0))
        throw ConfigError("dropout keep_prob must lie in (0, 1]");
      return in;
    }
    Shape operator()(const LogSoftmax& l) const {
      if (shape_size(in) != l.num_classes)
        throw ConfigError("log-softmax expects " + std::to_string(l.num_classes) +
                          " inputs, got " + shape_str(in));
      return {l.num_classes};
    }
  } visitor{in};
  return std::visit(visitor, kind);
}

// Freshly zeroed parameters for a layer fed with `in`.
inline LayerParams make_params(const LayerKind& kind, const Shape& in) {
  if (const auto* c = std::get_if<Conv>(&kind))
    return LayerParams({c->out_channels, in.at(0), c->kernel_h, c->kernel_w}, {c->out_channels});
  if (const auto* f = std::get_if<FullyConnected>(&kind))
    return LayerParams({f->out_units, shape_size(in)}, {f->out_units});
  return {};
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding)

namespace detail {

// Output rows/cols o for which o*stride + k - pad lands inside [0, extent).
inline void valid_range(std::size_t k, std::size_t pad, std::size_t stride, std::size_t extent,
                        std::size_t out, std::size_t& lo, std::size_t& hi) {
  // need o*stride + k >= pad  and  o*stride + k < extent + pad
  lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
  const std::size_t limit = extent + pad;  // exclusive bound on o*stride + k
  hi = k >= limit ? 0 : std::min(out, (limit - k - 1) / stride + 1);
  if (lo > hi) lo = hi;
}

inline void check_conv(const Tensor& input, const LayerParams& params, const Conv& spec) {
  require_rank3(input.shape(), "conv");
  const Shape& w = params.weights.shape();
  if (w.size() != 4 || w[0] != spec.out_channels || w[2] != spec.kernel_h ||
      w[3] != spec.kernel_w)
    throw ConfigError("conv: weight tensor " + shape_str(w) + " does not match layer spec");
  if (w[1] != input.dim(0))
    throw ConfigError("conv: input has " + std::to_string(input.dim(0)) +
                      " channels but kernels have depth " + std::to_string(w[1]));
  if (params.biases.size() != spec.out_channels)
    throw ConfigError("conv: bias length does not match out_channels");
}

}  // namespace detail

inline Tensor conv_forward(const Tensor& input, const LayerParams& params, const Conv& spec) {
  detail::check_conv(input, params, spec);
  const Shape out_shape = output_shape(spec, input.shape());
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t OH = out_shape[1], OW = out_shape[2];
  const std::size_t KH = spec.kernel_h, KW = spec.kernel_w, S = spec.stride, P = spec.padding;

  Tensor out(out_shape);
  const double* x = input.data();
  const double* wt = params.weights.data();
  double* y = out.data();

  for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
    double* yc = y + oc * OH * OW;
    std::fill(yc, yc + OH * OW, params.biases[oc]);
    for (std::size_t ic = 0; ic < C; ++ic) {
      const double* xc = x + ic * H * W;
      for (std::size_t ky = 0; ky < KH; ++ky) {
        std::size_t oy_lo, oy_hi;
        detail::valid_range(ky, P, S, H, OH, oy_lo, oy_hi);
        for (std::size_t kx = 0; kx < KW; ++kx) {
          std::size_t ox_lo, ox_hi;
          detail::valid_range(kx, P, S, W, OW, ox_lo, ox_hi);
          const double k = wt[((oc * C + ic) * KH + ky) * KW + kx];
          for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
            const double* xrow = xc + (oy * S + ky - P) * W;
            double* yrow = yc + oy * OW;
            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) yrow[ox] += k * xrow[ox * S + kx - P];
          }
        }
      }
    }
  }
  return out;
}

// Returns dE/d(input) and adds dE/dW, dE/db into params' grad tensors.
inline Tensor conv_backward(const Tensor& input, const Tensor& upstream, LayerParams& params,
                            const Conv& spec) {
  detail::check_conv(input, params, spec);
  const Shape out_shape = output_shape(spec, input.shape());
  if (upstream.shape() != out_shape)
    throw ConfigError("conv backward: upstream gradient " + shape_str(upstream.shape()) +
                      " does not match output " + shape_str(out_shape));
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t OH = out_shape[1], OW = out_shape[2];
  const std::size_t KH = spec.kernel_h, KW = spec.kernel_w, S = spec.stride, P = spec.padding;

  Tensor grad_in(input.shape());
  const double* x = input.data();
  const double* wt = params.weights.data();
  const double* dy = upstream.data();
  double* dx = grad_in.data();
  double* dw = params.weight_grads.data();

  for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
    const double* dyc = dy + oc * OH * OW;
    double bsum = 0.0;
    for (std::size_t i = 0; i < OH * OW; ++i) bsum += dyc[i];
    params.bias_grads[oc] += bsum;

    for (std::size_t ic = 0; ic < C; ++ic) {
      const double* xc = x + ic * H * W;
      double* dxc = dx + ic * H * W;
      for (std::size_t ky = 0; ky < KH; ++ky) {
        std::size_t oy_lo, oy_hi;
        detail::valid_range(ky, P, S, H, OH, oy_lo, oy_hi);
        for (std::size_t kx = 0; kx < KW; ++kx) {
          std::size_t ox_lo, ox_hi;
          detail::valid_range(kx, P, S, W, OW, ox_lo, ox_hi);
          const std::size_t widx = ((oc * C + ic) * KH + ky) * KW + kx;
          const double k = wt[widx];
          double acc = 0.0;
          for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
            const std::size_t row = (oy * S + ky - P) * W;
            const double* xrow = xc + row;
            double* dxrow = dxc + row;
            const double* dyrow = dyc + oy * OW;
            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
              const std::size_t ix = ox * S + kx - P;
              acc += dyrow[ox] * xrow[ix];
              dxrow[ix] += k * dyrow[ox];
            }
          }
          dw[widx] += acc;
        }
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Max pooling

// Flat input index of the winning element for every output position.
struct MaxPoolMask {
  Shape input_shape;
  Shape output_shape;
  std::vector<std::size_t> argmax;
};

inline Tensor maxpool_forward(const Tensor& input, const MaxPool& spec, MaxPoolMask* mask = nullptr) {
  const Shape out_shape = output_shape(spec, input.shape());
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t OH = out_shape[1], OW = out_shape[2];
  Tensor out(out_shape);
  if (mask) {
    mask->input_shape = input.shape();
    mask->output_shape = out_shape;
    mask->argmax.assign(out.size(), 0);
  }
  const double* x = input.data();
  std::size_t o = 0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox, ++o) {
        std::size_t best = (c * H + oy * spec.stride) * W + ox * spec.stride;
        double best_v = x[best];
        for (std::size_t wy = 0; wy < spec.window; ++wy) {
          for (std::size_t wx = 0; wx < spec.window; ++wx) {
            const std::size_t idx = (c * H + oy * spec.stride + wy) * W + ox * spec.stride + wx;
            // strict comparison: ties keep the first row-major position
            if (x[idx] > best_v) {
              best_v = x[idx];
              best = idx;
            }
          }
        }
        out[o] = best_v;
        if (mask) mask->argmax[o] = best;
      }
    }
  }
  return out;
}

inline Tensor maxpool_backward(const Tensor& upstream, const MaxPoolMask& mask) {
  if (upstream.shape() != mask.output_shape || mask.argmax.size() != upstream.size())
    throw InternalError("maxpool backward: gradient " + shape_str(upstream.shape()) +
                        " does not match mask " + shape_str(mask.output_shape));
  Tensor grad_in(mask.input_shape);
  for (std::size_t o = 0; o < upstream.size(); ++o) grad_in[mask.argmax[o]] += upstream[o];
  return grad_in;
}

// ---------------------------------------------------------------------------
// ReLU

inline Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

inline Tensor relu_backward(const Tensor& input, const Tensor& upstream) {
  if (input.shape() != upstream.shape())
    throw ConfigError("relu backward: shape mismatch");
  Tensor grad = upstream;
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(input[i] > 0.0)) grad[i] = 0.0;
  return grad;
}

// ---------------------------------------------------------------------------
// Fully connected: y = W x + b, W stored out x in.

namespace detail {

inline void check_fc(const Tensor& input, const LayerParams& params, const FullyConnected& spec) {
  const Shape& w = params.weights.shape();
  if (w.size() != 2 || w[0] != spec.out_units || params.biases.size() != spec.out_units)
    throw ConfigError("fc: parameter shapes " + shape_str(w) + " do not match layer spec");
  if (w[1] != input.size())
    throw ConfigError("fc: input length " + std::to_string(input.size()) +
                      " does not match weight input dimension " + std::to_string(w[1]));
}

}  // namespace detail

inline Tensor fc_forward(const Tensor& input, const LayerParams& params,
                         const FullyConnected& spec) {
  detail::check_fc(input, params, spec);
  const std::size_t in = input.size();
  Tensor out({spec.out_units});
  const double* x = input.data();
  for (std::size_t o = 0; o < spec.out_units; ++o) {
    const double* row = params.weights.data() + o * in;
    double acc = 0.0;
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    out[o] = acc + params.biases[o];
  }
  return out;
}

inline Tensor fc_backward(const Tensor& input, const Tensor& upstream, LayerParams& params,
                          const FullyConnected& spec) {
  detail::check_fc(input, params, spec);
  if (upstream.size() != spec.out_units)
    throw ConfigError("fc backward: upstream gradient length does not match out_units");
  const std::size_t in = input.size();
  Tensor grad_in(input.shape());
  const double* x = input.data();
  double* dx = grad_in.data();
  for (std::size_t o = 0; o < spec.out_units; ++o) {
    const double d = upstream[o];
    params.bias_grads[o] += d;
    if (d == 0.0) continue;
    const double* row = params.weights.data() + o * in;
    double* grow = params.weight_grads.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) {
      grow[i] += d * x[i];
      dx[i] += row[i] * d;
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Dropout with train-time masking and eval-time scaling by keep_prob.

using DropoutMask = std::vector<std::uint8_t>;

inline Tensor dropout_forward(const Tensor& input, double keep_prob, Mode mode, Rng& rng,
                              DropoutMask* mask = nullptr) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0))
    throw ConfigError("dropout keep_prob must lie in (0, 1]");
  Tensor out = input;
  if (mode == Mode::eval) {
    if (keep_prob != 1.0)
      for (double& v : out.values()) v *= keep_prob;
    if (mask) mask->assign(input.size(), 1);
    return out;
  }
  if (mask) mask->assign(input.size(), 1);
  if (keep_prob == 1.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!rng.bernoulli(keep_prob)) {
      out[i] = 0.0;
      if (mask) (*mask)[i] = 0;
    }
  }
  return out;
}

// Backward of the eval-mode form multiplies by keep_prob; the train-mode
// form passes the gradient through surviving units only.
inline Tensor dropout_backward(const Tensor& upstream, const DropoutMask& mask, double keep_prob,
                               Mode mode) {
  Tensor grad = upstream;
  if (mode == Mode::eval) {
    if (keep_prob != 1.0)
      for (double& v : grad.values()) v *= keep_prob;
    return grad;
  }
  if (mask.size() != upstream.size()) throw InternalError("dropout backward: mask size mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!mask[i]) grad[i] = 0.0;
  return grad;
}

// ---------------------------------------------------------------------------
// Log-softmax with max subtraction.

inline Tensor logsoftmax_forward(const Tensor& input) {
  Tensor out({input.size()});
  if (input.empty()) return out;
  double m = -std::numeric_limits<double>::infinity();
  for (double v : input.values()) m = std::max(m, v);
  double sum = 0.0;
  for (double v : input.values()) sum += std::exp(v - m);
  const double log_z = m + std::log(sum);
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] - log_z;
  return out;
}

// Takes the forward *output*: dx_i = g_i - softmax_i * sum_j g_j.
inline Tensor logsoftmax_backward(const Tensor& output, const Tensor& upstream) {
  if (output.size() != upstream.size())
    throw ConfigError("log-softmax backward: shape mismatch");
  double gsum = 0.0;
  for (double g : upstream.values()) gsum += g;
  Tensor grad({output.size()});
  for (std::size_t i = 0; i < output.size(); ++i)
    grad[i] = upstream[i] - std::exp(output[i]) * gsum;
  return grad;
}

}  // namespace cbmir
