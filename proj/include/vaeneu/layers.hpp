#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "vaeneu/ops.hpp"

namespace vaeneu {

namespace detail {

inline Tensor uniform_init(Shape shape, std::size_t fan_in, RngStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * bound;
  return t;
}

inline std::string join(std::string_view prefix, std::string_view name) {
  std::string s(prefix);
  if (!s.empty()) s += '.';
  s += name;
  return s;
}

}  // namespace detail

/// Fully connected layer y = x W + b.
///
/// The weight is stored input-major ([in x out]) so a batch [B x in] maps to
/// [B x out] with a single matmul.
struct AffineLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static AffineLayer init(std::size_t in, std::size_t out, RngStream& rng) {
    AffineLayer layer;
    layer.weight = detail::uniform_init(Shape{in, out}, in, rng);
    layer.bias = detail::uniform_init(Shape{out}, in, rng);
    return layer;
  }

  std::size_t in_size() const { return weight.extent(0); }
  std::size_t out_size() const { return weight.extent(1); }

  /// x: [B x in] or [in].
  Tensor forward(const Tensor& x) const {
    if (x.rank() == 1) {
      return reshape(forward(reshape(x, Shape{1, x.extent(0)})), Shape{out_size()});
    }
    if (x.rank() != 2 || x.extent(1) != in_size()) {
      throw ShapeError("affine layer expects [B x " + std::to_string(in_size()) + "], got " +
                       shape_string(x.shape()));
    }
    return add_bias(matmul(x, weight), bias);
  }

  template <class Fn>
  void for_each_parameter(std::string_view prefix, Fn&& fn) {
    fn(detail::join(prefix, "weight"), weight);
    fn(detail::join(prefix, "bias"), bias);
  }
  template <class Fn>
  void for_each_parameter(std::string_view prefix, Fn&& fn) const {
    fn(detail::join(prefix, "weight"), weight);
    fn(detail::join(prefix, "bias"), bias);
  }
};

struct SequenceOutput {
  Tensor outputs;  // [B, T, H]
  Tensor final_h;  // [B, H]
};

/// Single-layer LSTM, zero initial state.
///
/// Gate pre-activations for the four gates are packed column-wise in the
/// order input, forget, cell candidate, output:
///   [i f g o] = x_t W_ih + h_{t-1} W_hh + b
///   c_t = sigmoid(f) * c_{t-1} + sigmoid(i) * tanh(g)
///   h_t = sigmoid(o) * tanh(c_t)
struct LstmLayer {
  Tensor w_ih;  // [input x 4H]
  Tensor w_hh;  // [H x 4H]
  Tensor bias;  // [4H]

  static LstmLayer init(std::size_t input_size, std::size_t hidden_size, RngStream& rng) {
    LstmLayer l;
    l.w_ih = detail::uniform_init(Shape{input_size, 4 * hidden_size}, input_size, rng);
    l.w_hh = detail::uniform_init(Shape{hidden_size, 4 * hidden_size}, hidden_size, rng);
    l.bias = detail::uniform_init(Shape{4 * hidden_size}, hidden_size, rng);
    return l;
  }

  std::size_t input_size() const { return w_ih.extent(0); }
  std::size_t hidden_size() const { return w_hh.extent(0); }

  /// x: [B, T, input] with T >= 1.
  SequenceOutput forward(const Tensor& x) const {
    if (x.rank() != 3 || x.extent(2) != input_size()) {
      throw ShapeError("lstm expects [B, T, " + std::to_string(input_size()) + "], got " +
                       shape_string(x.shape()));
    }
    const std::size_t B = x.extent(0), T = x.extent(1), H = hidden_size();
    if (T == 0) throw ShapeError("lstm over an empty sequence");
    // Input contributions for every step in one product.
    Tensor xw = matmul(reshape(x, Shape{B * T, input_size()}), w_ih);
    xw = reshape(add_bias(xw, bias), Shape{B, T, 4 * H});

    Tensor h(Shape{B, H});
    Tensor c(Shape{B, H});
    std::vector<Tensor> steps;
    steps.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
      Tensor gates = reshape(slice(xw, 1, t, 1), Shape{B, 4 * H});
      if (t > 0) gates = gates + matmul(h, w_hh);
      const Tensor i = sigmoid(slice(gates, 1, 0, H));
      const Tensor f = sigmoid(slice(gates, 1, H, H));
      const Tensor g = tanh(slice(gates, 1, 2 * H, H));
      const Tensor o = sigmoid(slice(gates, 1, 3 * H, H));
      c = t > 0 ? f * c + i * g : i * g;
      h = o * tanh(c);
      steps.push_back(reshape(h, Shape{B, 1, H}));
    }
    return {concat(steps, 1), h};
  }

  /// forward(x).final_h as a single fused operation.
  Tensor final_state(const Tensor& x) const { return lstm_final_state(x, w_ih, w_hh, bias); }

  template <class Fn>
  void for_each_parameter(std::string_view prefix, Fn&& fn) {
    fn(detail::join(prefix, "w_ih"), w_ih);
    fn(detail::join(prefix, "w_hh"), w_hh);
    fn(detail::join(prefix, "bias"), bias);
  }
  template <class Fn>
  void for_each_parameter(std::string_view prefix, Fn&& fn) const {
    fn(detail::join(prefix, "w_ih"), w_ih);
    fn(detail::join(prefix, "w_hh"), w_hh);
    fn(detail::join(prefix, "bias"), bias);
  }
};

/// One dilated causal convolution with a residual path:
///   y = relu(conv_d(x)) + residual(x)
/// where residual is the identity, or a bias-free 1x1 projection when the
/// channel count changes.
struct TcnLayer {
  std::size_t dilation = 1;
  Tensor weight;      // [K, Cin, Cout]
  Tensor bias;        // [Cout]
  Tensor projection;  // [Cin x Cout], empty (rank 0) when Cin == Cout

  bool has_projection() const { return projection.rank() == 2; }

  Tensor forward(const Tensor& x) const {
    const Tensor conv = relu(causal_conv1d(x, weight, bias, dilation));
    if (!has_projection()) return conv + x;
    const std::size_t B = x.extent(0), T = x.extent(1);
    const Tensor flat = reshape(x, Shape{B * T, x.extent(2)});
    return conv + reshape(matmul(flat, projection), Shape{B, T, projection.extent(1)});
  }
};

/// Stack of TcnLayers with dilation 2^l for layer l.
struct TcnStack {
  std::size_t kernel_size = 5;
  std::vector<TcnLayer> layers;

  static TcnStack init(std::size_t input_channels, std::size_t channels, std::size_t num_layers,
                       std::size_t kernel_size, RngStream& rng) {
    TcnStack s;
    s.kernel_size = kernel_size;
    std::size_t cin = input_channels;
    for (std::size_t l = 0; l < num_layers; ++l) {
      TcnLayer layer;
      layer.dilation = std::size_t{1} << l;
      layer.weight =
          detail::uniform_init(Shape{kernel_size, cin, channels}, kernel_size * cin, rng);
      layer.bias = detail::uniform_init(Shape{channels}, kernel_size * cin, rng);
      if (cin != channels) layer.projection = detail::uniform_init(Shape{cin, channels}, cin, rng);
      s.layers.push_back(std::move(layer));
      cin = channels;
    }
    return s;
  }

  std::size_t channels() const { return layers.back().weight.extent(2); }

  /// 1 + (K - 1) * (2^L - 1)
  std::size_t receptive_field() const {
    return 1 + (kernel_size - 1) * ((std::size_t{1} << layers.size()) - 1);
  }

  /// x: [B, T, Cin] with T >= 1.
  SequenceOutput forward(const Tensor& x) const {
    if (x.rank() != 3) throw ShapeError("tcn expects [B, T, C], got " + shape_string(x.shape()));
    if (x.extent(1) == 0) throw ShapeError("tcn over an empty sequence");
    Tensor y = x;
    for (const TcnLayer& layer : layers) y = layer.forward(y);
    const std::size_t B = y.extent(0), T = y.extent(1), C = y.extent(2);
    Tensor last = reshape(slice(y, 1, T - 1, 1), Shape{B, C});
    return {y, last};
  }

  /// forward(x).final_h computed on the last receptive_field() steps only;
  /// earlier inputs cannot reach the final output.
  Tensor final_state(const Tensor& x) const {
    if (x.rank() != 3) throw ShapeError("tcn expects [B, T, C], got " + shape_string(x.shape()));
    const std::size_t T = x.extent(1), R = receptive_field();
    if (T <= R) return forward(x).final_h;
    return forward(slice(x, 1, T - R, R)).final_h;
  }

  template <class Fn>
  void for_each_parameter(std::string_view prefix, Fn&& fn) {
    visit(*this, prefix, fn);
  }
  template <class Fn>
  void for_each_parameter(std::string_view prefix, Fn&& fn) const {
    visit(*this, prefix, fn);
  }

 private:
  template <class Self, class Fn>
  static void visit(Self& self, std::string_view prefix, Fn& fn) {
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& layer = self.layers[l];
      const std::string p = detail::join(prefix, std::to_string(l));
      fn(detail::join(p, "weight"), layer.weight);
      fn(detail::join(p, "bias"), layer.bias);
      if (layer.has_projection()) fn(detail::join(p, "projection"), layer.projection);
    }
  }
};

enum class BackboneKind { rnn, tcn };

inline std::string to_string(BackboneKind k) { return k == BackboneKind::rnn ? "rnn" : "tcn"; }

inline BackboneKind parse_backbone(std::string_view s) {
  if (s == "rnn") return BackboneKind::rnn;
  if (s == "tcn") return BackboneKind::tcn;
  throw ConfigError("unknown backbone '" + std::string(s) + "' (expected rnn or tcn)");
}

/// Network sizes derived from the history window size (HWS):
///   rnn: hidden = latent = floor(HWS / 2), one LSTM layer
///   tcn: hidden = latent = ceil(2 log2 HWS), layers = max(1, ceil(log2(HWS / 8))),
///        kernel 5
struct BackboneConfig {
  BackboneKind kind = BackboneKind::tcn;
  std::size_t history_size = 0;
  std::size_t hidden_size = 0;
  std::size_t latent_size = 0;
  std::size_t tcn_layers = 0;
  std::size_t kernel_size = 5;

  static BackboneConfig from_history(BackboneKind kind, std::size_t history_size) {
    if (history_size < 1) throw ConfigError("history size must be positive");
    BackboneConfig c;
    c.kind = kind;
    c.history_size = history_size;
    const double hws = static_cast<double>(history_size);
    if (kind == BackboneKind::rnn) {
      c.hidden_size = c.latent_size = std::max<std::size_t>(1, history_size / 2);
    } else {
      c.hidden_size = c.latent_size =
          std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(2.0 * std::log2(hws))));
      const double layers = std::ceil(std::log2(hws / 8.0));
      c.tcn_layers = layers < 1.0 ? 1 : static_cast<std::size_t>(layers);
    }
    return c;
  }
};

/// Sequence encoder producing one representation vector per sequence.
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(LstmLayer l) : net_(std::move(l)) {}
  explicit Backbone(TcnStack s) : net_(std::move(s)) {}

  static Backbone init(const BackboneConfig& cfg, RngStream& rng) {
    if (cfg.kind == BackboneKind::rnn) return Backbone(LstmLayer::init(1, cfg.hidden_size, rng));
    return Backbone(TcnStack::init(1, cfg.hidden_size, cfg.tcn_layers, cfg.kernel_size, rng));
  }

  /// sequence: [B x T] univariate -> [B x hidden]
  Tensor represent(const Tensor& sequence) const {
    const Tensor x = reshape(sequence, Shape{sequence.extent(0), sequence.extent(1), 1});
    return std::visit([&](const auto& net) { return net.final_state(x); }, net_);
  }

  template <class Fn>
  void for_each_parameter(std::string_view prefix, Fn&& fn) {
    std::visit([&](auto& net) { net.for_each_parameter(join_kind(prefix, net), fn); }, net_);
  }
  template <class Fn>
  void for_each_parameter(std::string_view prefix, Fn&& fn) const {
    std::visit([&](const auto& net) { net.for_each_parameter(join_kind(prefix, net), fn); },
               net_);
  }

  const std::variant<LstmLayer, TcnStack>& net() const { return net_; }

 private:
  static std::string join_kind(std::string_view prefix, const LstmLayer&) {
    return detail::join(prefix, "lstm");
  }
  static std::string join_kind(std::string_view prefix, const TcnStack&) {
    return detail::join(prefix, "tcn");
  }

  std::variant<LstmLayer, TcnStack> net_;
};

}  // namespace vaeneu
