#pragma once

// Differentiable tensor operations. Each operation computes its result
// eagerly; if any input is tracked the result is recorded on that input's
// tape together with a closure that propagates gradients back.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "vaeneu/rng.hpp"
#include "vaeneu/tensor.hpp"

namespace vaeneu {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// dst[c] += sum_r m(r, c), rows in order. Eigen's vectorized colwise sum
// peels on the destination's alignment, which makes the rounding depend on
// where the heap placed the gradient buffer.
template <class M>
void add_column_sums(const M& m, double* dst) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) dst[c] += m(r, c);
}

inline Tape* tape_of(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->requires_grad()) continue;
    if (tape != nullptr && tape != t->tape()) {
      throw Error("operation mixes tensors recorded on different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

inline Tape* tape_of(const std::vector<Tensor>& inputs) {
  Tape* tape = nullptr;
  for (const Tensor& t : inputs) {
    if (!t.requires_grad()) continue;
    if (tape != nullptr && tape != t.tape()) {
      throw Error("operation mixes tensors recorded on different tapes");
    }
    tape = t.tape();
  }
  return tape;
}

/// Product of extents before and after `axis`.
inline std::pair<std::size_t, std::size_t> outer_inner(const Shape& s, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, inner};
}

template <class Forward, class Derivative>
Tensor unary(const Tensor& a, Forward f, Derivative df) {
  Tensor out(a.shape());
  auto x = a.values();
  auto y = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  Tape* tape = tape_of({&a});
  if (!tape) return out;
  std::vector<double> xs(x.begin(), x.end());
  std::vector<double> ys(y.begin(), y.end());
  return tape->record(std::move(out), {a.node()},
                      [na = *a.node(), xs = std::move(xs), ys = std::move(ys), df](
                          std::span<const double> g, GradSink& sink) {
                        auto ga = sink.grad(na);
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xs[i], ys[i]);
                      });
}

enum class BinaryKind { add, sub, mul };

inline Tensor binary(BinaryKind kind, const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool a_bcast = !same && a.size() == 1;
  const bool b_bcast = !same && !a_bcast && b.size() == 1;
  if (!same && !a_bcast && !b_bcast) {
    throw ShapeError("elementwise shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " are incompatible");
  }
  Tensor out(a_bcast ? b.shape() : a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto y = out.values();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double x0 = av[a_bcast ? 0 : i];
    const double x1 = bv[b_bcast ? 0 : i];
    switch (kind) {
      case BinaryKind::add: y[i] = x0 + x1; break;
      case BinaryKind::sub: y[i] = x0 - x1; break;
      case BinaryKind::mul: y[i] = x0 * x1; break;
    }
  }
  Tape* tape = tape_of({&a, &b});
  if (!tape) return out;
  std::vector<double> as, bs;
  if (kind == BinaryKind::mul) {
    if (b.requires_grad()) as.assign(av.begin(), av.end());
    if (a.requires_grad()) bs.assign(bv.begin(), bv.end());
  }
  return tape->record(
      std::move(out), {a.node(), b.node()},
      [kind, na = a.node(), nb = b.node(), a_bcast, b_bcast, as = std::move(as),
       bs = std::move(bs)](std::span<const double> g, GradSink& sink) {
        if (na) {
          auto ga = sink.grad(*na);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double d = kind == BinaryKind::mul ? bs[b_bcast ? 0 : i] : 1.0;
            ga[a_bcast ? 0 : i] += g[i] * d;
          }
        }
        if (nb) {
          auto gb = sink.grad(*nb);
          for (std::size_t i = 0; i < g.size(); ++i) {
            double d = 1.0;
            if (kind == BinaryKind::sub) d = -1.0;
            if (kind == BinaryKind::mul) d = as[a_bcast ? 0 : i];
            gb[b_bcast ? 0 : i] += g[i] * d;
          }
        }
      });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

/// Shapes must match, or one operand must hold a single element.
inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(detail::BinaryKind::add, a, b);
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(detail::BinaryKind::sub, a, b);
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(detail::BinaryKind::mul, a, b);
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

/// Subgradient 0 at the kink.
inline Tensor abs(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::exp(x); },
                       [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  for (double x : a.values()) {
    if (!(x > 0.0)) throw DomainError("log of non-positive value " + std::to_string(x));
  }
  return detail::unary(a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

namespace detail {
inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace detail

inline Tensor softplus(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return detail::stable_sigmoid(x); });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(a, detail::stable_sigmoid,
                       [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// Gradient passes only where lo <= x <= hi.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  return detail::unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra and structure

/// [m x k] . [k x n] -> [m x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul of " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out(Shape{m, n});
  if (m > 0 && n > 0 && k > 0) {
    detail::MutMap(out.values().data(), m, n).noalias() =
        detail::ConstMap(a.values().data(), m, k) * detail::ConstMap(b.values().data(), k, n);
  }
  Tape* tape = detail::tape_of({&a, &b});
  if (!tape) return out;
  std::vector<double> as, bs;
  if (b.requires_grad()) as = a.buffer();
  if (a.requires_grad()) bs = b.buffer();
  return tape->record(std::move(out), {a.node(), b.node()},
                      [na = a.node(), nb = b.node(), m, k, n, as = std::move(as),
                       bs = std::move(bs)](std::span<const double> g, GradSink& sink) {
                        if (m == 0 || n == 0 || k == 0) return;
                        detail::ConstMap G(g.data(), m, n);
                        if (na) {
                          detail::MutMap(sink.grad(*na).data(), m, k).noalias() +=
                              G * detail::ConstMap(bs.data(), k, n).transpose();
                        }
                        if (nb) {
                          detail::MutMap(sink.grad(*nb).data(), k, n).noalias() +=
                              detail::ConstMap(as.data(), m, k).transpose() * G;
                        }
                      });
}

/// Adds a length-n vector to every row of a [..., n] tensor.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (a.rank() == 0 || bias.rank() != 1 || a.shape().back() != bias.extent(0)) {
    throw ShapeError("add_bias of " + shape_string(a.shape()) + " and " +
                     shape_string(bias.shape()));
  }
  const std::size_t n = bias.extent(0);
  const std::size_t rows = n == 0 ? 0 : a.size() / n;
  Tensor out = a.detached();
  auto y = out.values();
  auto b = bias.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] += b[j];
  Tape* tape = detail::tape_of({&a, &bias});
  if (!tape) return out;
  return tape->record(std::move(out), {a.node(), bias.node()},
                      [na = a.node(), nb = bias.node(), rows, n](std::span<const double> g,
                                                                 GradSink& sink) {
                        if (na) {
                          auto ga = sink.grad(*na);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        }
                        if (nb) {
                          auto gb = sink.grad(*nb);
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                        }
                      });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("cannot reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  Tensor out(std::move(shape), a.buffer());
  Tape* tape = detail::tape_of({&a});
  if (!tape) return out;
  return tape->record(std::move(out), {a.node()},
                      [na = *a.node()](std::span<const double> g, GradSink& sink) {
                        auto ga = sink.grad(na);
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                      });
}

/// Joins tensors along `axis`; every other extent must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const Tensor& p : parts) {
    bool ok = p.rank() == first.size();
    for (std::size_t i = 0; ok && i < first.size(); ++i) {
      if (i != axis && p.extent(i) != first[i]) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat of " + shape_string(first) + " with " + shape_string(p.shape()));
    }
    shape[axis] += p.extent(axis);
  }
  const auto [outer, inner] = detail::outer_inner(shape, axis);
  Tensor out(shape);
  auto y = out.values();
  std::vector<std::size_t> widths;  // contiguous chunk per outer index
  std::vector<std::optional<NodeId>> ids;
  for (const Tensor& p : parts) {
    widths.push_back(p.extent(axis) * inner);
    ids.push_back(p.node());
  }
  const std::size_t row = shape[axis] * inner;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto x = parts[p].values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.begin() + o * widths[p], widths[p], y.begin() + o * row + offset);
    offset += widths[p];
  }
  Tape* tape = detail::tape_of(parts);
  if (!tape) return out;
  return tape->record(std::move(out), ids,
                      [ids, widths, outer, row](std::span<const double> g, GradSink& sink) {
                        std::size_t off = 0;
                        for (std::size_t p = 0; p < ids.size(); ++p) {
                          if (ids[p]) {
                            auto gp = sink.grad(*ids[p]);
                            for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t i = 0; i < widths[p]; ++i)
                                gp[o * widths[p] + i] += g[o * row + off + i];
                          }
                          off += widths[p];
                        }
                      });
}

/// Sub-range [start, start + length) along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank() || start + length > a.extent(axis)) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                     ") on axis " + std::to_string(axis) + " of " + shape_string(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = length;
  const auto [outer, inner] = detail::outer_inner(a.shape(), axis);
  const std::size_t src_row = a.extent(axis) * inner;
  const std::size_t width = length * inner;
  const std::size_t off = start * inner;
  Tensor out(shape);
  auto x = a.values();
  auto y = out.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.begin() + o * src_row + off, width, y.begin() + o * width);
  Tape* tape = detail::tape_of({&a});
  if (!tape) return out;
  return tape->record(std::move(out), {a.node()},
                      [na = *a.node(), outer, src_row, width, off](std::span<const double> g,
                                                                   GradSink& sink) {
                        auto ga = sink.grad(na);
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t i = 0; i < width; ++i)
                            ga[o * src_row + off + i] += g[o * width + i];
                      });
}

/// out.flat[i] = a.flat[indices[i]]; repeated indices accumulate gradient.
inline Tensor gather(const Tensor& a, std::vector<std::size_t> indices, Shape shape) {
  if (shape_size(shape) != indices.size()) {
    throw ShapeError("gather shape " + shape_string(shape) + " does not match " +
                     std::to_string(indices.size()) + " indices");
  }
  Tensor out(std::move(shape));
  auto x = a.values();
  auto y = out.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.size()) throw ShapeError("gather index out of range");
    y[i] = x[indices[i]];
  }
  Tape* tape = detail::tape_of({&a});
  if (!tape) return out;
  return tape->record(std::move(out), {a.node()},
                      [na = *a.node(), idx = std::move(indices)](std::span<const double> g,
                                                                 GradSink& sink) {
                        auto ga = sink.grad(na);
                        for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
                      });
}

/// Each row of a [m x n] tensor repeated `times` times consecutively.
inline Tensor repeat_rows(const Tensor& a, std::size_t times) {
  if (a.rank() != 2) throw ShapeError("repeat_rows needs a matrix");
  const std::size_t m = a.extent(0), n = a.extent(1);
  std::vector<std::size_t> idx;
  idx.reserve(m * times * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t t = 0; t < times; ++t)
      for (std::size_t j = 0; j < n; ++j) idx.push_back(r * n + j);
  return gather(a, std::move(idx), Shape{m * times, n});
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  Tensor out = Tensor::scalar(s);
  Tape* tape = detail::tape_of({&a});
  if (!tape) return out;
  return tape->record(std::move(out), {a.node()},
                      [na = *a.node()](std::span<const double> g, GradSink& sink) {
                        auto ga = sink.grad(na);
                        for (double& v : ga) v += g[0];
                      });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DomainError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// Reduces `axis` away. Summing an axis of extent 0 yields zeros.
inline Tensor sum(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw ShapeError("reduction axis " + std::to_string(axis) + " out of range for " +
                     shape_string(a.shape()));
  }
  Shape shape = a.shape();
  const std::size_t len = shape[axis];
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto [outer, inner] = detail::outer_inner(a.shape(), axis);
  Tensor out(shape);
  auto x = a.values();
  auto y = out.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) y[o * inner + i] += x[(o * len + l) * inner + i];
  Tape* tape = detail::tape_of({&a});
  if (!tape) return out;
  return tape->record(std::move(out), {a.node()},
                      [na = *a.node(), outer, len, inner](std::span<const double> g,
                                                         GradSink& sink) {
                        auto ga = sink.grad(na);
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t l = 0; l < len; ++l)
                            for (std::size_t i = 0; i < inner; ++i)
                              ga[(o * len + l) * inner + i] += g[o * inner + i];
                      });
}

inline Tensor mean(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw ShapeError("reduction axis out of range");
  if (a.extent(axis) == 0) throw DomainError("mean over an empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.extent(axis)));
}

// ---------------------------------------------------------------------------
// Convolution

/// Dilated causal 1-D convolution.
///
/// x: [B, T, Cin], weight: [K, Cin, Cout], bias: [Cout] -> [B, T, Cout] with
///   out[b, t, o] = bias[o] + sum_{k, c} weight[k, c, o] * x[b, t - (K-1-k)*d, c]
/// where indices before t = 0 read as zero (left padding of (K-1)*d).
inline Tensor causal_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                            std::size_t dilation) {
  if (x.rank() != 3 || weight.rank() != 3 || bias.rank() != 1 ||
      weight.extent(1) != x.extent(2) || bias.extent(0) != weight.extent(2)) {
    throw ShapeError("causal_conv1d of " + shape_string(x.shape()) + " with weight " +
                     shape_string(weight.shape()) + " and bias " + shape_string(bias.shape()));
  }
  if (dilation == 0) throw DomainError("dilation must be positive");
  const std::size_t B = x.extent(0), T = x.extent(1), Cin = x.extent(2);
  const std::size_t K = weight.extent(0), Cout = weight.extent(2);
  const std::size_t rows = B * T, cols = K * Cin;
  // im2col: row (b, t) holds the K taps of every input channel.
  std::vector<double> patches(rows * cols, 0.0);
  auto xv = x.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t lag = (K - 1 - k) * dilation;
        if (lag > t) continue;
        const double* src = &xv[(b * T + t - lag) * Cin];
        std::copy_n(src, Cin, &patches[(b * T + t) * cols + k * Cin]);
      }
  Tensor out(Shape{B, T, Cout});
  if (rows > 0 && Cout > 0) {
    detail::MutMap Y(out.values().data(), rows, Cout);
    Y.noalias() = detail::ConstMap(patches.data(), rows, cols) *
                  detail::ConstMap(weight.values().data(), cols, Cout);
    Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), Cout);
  }
  Tape* tape = detail::tape_of({&x, &weight, &bias});
  if (!tape) return out;
  std::vector<double> w;
  if (x.requires_grad()) w = weight.buffer();
  return tape->record(
      std::move(out), {x.node(), weight.node(), bias.node()},
      [nx = x.node(), nw = weight.node(), nb = bias.node(), patches = std::move(patches),
       w = std::move(w), B, T, Cin, K, Cout, rows, cols,
       dilation](std::span<const double> g, GradSink& sink) {
        if (rows == 0 || Cout == 0) return;
        detail::ConstMap G(g.data(), rows, Cout);
        if (nw) {
          detail::MutMap(sink.grad(*nw).data(), cols, Cout).noalias() +=
              detail::ConstMap(patches.data(), rows, cols).transpose() * G;
        }
        if (nb) {
          detail::add_column_sums(G, sink.grad(*nb).data());
        }
        if (nx) {
          detail::RowMat gp = G * detail::ConstMap(w.data(), cols, Cout).transpose();
          auto gx = sink.grad(*nx);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T; ++t)
              for (std::size_t k = 0; k < K; ++k) {
                const std::size_t lag = (K - 1 - k) * dilation;
                if (lag > t) continue;
                double* dst = &gx[(b * T + t - lag) * Cin];
                const double* src = &gp(static_cast<Eigen::Index>(b * T + t),
                                        static_cast<Eigen::Index>(k * Cin));
                for (std::size_t c = 0; c < Cin; ++c) dst[c] += src[c];
              }
        }
      });
}

/// Final hidden state of a single-layer LSTM run from a zero state.
///
/// x: [B, T, I], w_ih: [I x 4H], w_hh: [H x 4H], bias: [4H] -> [B, H].
/// Gates are packed [i f g o]. This is one graph node with a hand-written
/// backward pass through time; LstmLayer::forward builds the same function
/// out of elementary operations.
inline Tensor lstm_final_state(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh,
                               const Tensor& bias) {
  if (x.rank() != 3 || w_ih.rank() != 2 || w_hh.rank() != 2 || bias.rank() != 1 ||
      w_ih.extent(0) != x.extent(2) || w_hh.extent(1) != 4 * w_hh.extent(0) ||
      w_ih.extent(1) != w_hh.extent(1) || bias.extent(0) != w_hh.extent(1)) {
    throw ShapeError("lstm of " + shape_string(x.shape()) + " with w_ih " +
                     shape_string(w_ih.shape()) + ", w_hh " + shape_string(w_hh.shape()) +
                     ", bias " + shape_string(bias.shape()));
  }
  const std::size_t B = x.extent(0), T = x.extent(1), I = x.extent(2), H = w_hh.extent(0);
  if (T == 0) throw ShapeError("lstm over an empty sequence");
  using Arr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto Bi = static_cast<Eigen::Index>(B), Hi = static_cast<Eigen::Index>(H);
  const detail::ConstMap Wih(w_ih.values().data(), static_cast<Eigen::Index>(I), 4 * Hi);
  const detail::ConstMap Whh(w_hh.values().data(), Hi, 4 * Hi);
  const Eigen::Map<const Eigen::RowVectorXd> bvec(bias.values().data(), 4 * Hi);

  // Input contributions for all steps, row (b, t).
  detail::RowMat xw = detail::ConstMap(x.values().data(), Bi * static_cast<Eigen::Index>(T),
                                       static_cast<Eigen::Index>(I)) * Wih;
  xw.rowwise() += bvec;

  Tape* tape = detail::tape_of({&x, &w_ih, &w_hh, &bias});
  // Per step: activated gates [B x 4H], cell state and h (for t > 0 backward).
  std::vector<Arr> acts, cells, hiddens;
  if (tape) {
    acts.reserve(T);
    cells.reserve(T);
    hiddens.reserve(T);
  }
  detail::RowMat h = detail::RowMat::Zero(Bi, Hi);
  Arr c = Arr::Zero(Bi, Hi);
  detail::RowMat gates(Bi, 4 * Hi);
  auto sigm = [](double v) { return detail::stable_sigmoid(v); };
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b)
      gates.row(static_cast<Eigen::Index>(b)) = xw.row(static_cast<Eigen::Index>(b * T + t));
    if (t > 0) gates.noalias() += h * Whh;
    Arr a(Bi, 4 * Hi);
    a.leftCols(Hi) = gates.leftCols(Hi).array().unaryExpr(sigm);
    a.middleCols(Hi, Hi) = gates.middleCols(Hi, Hi).array().unaryExpr(sigm);
    a.middleCols(2 * Hi, Hi) = gates.middleCols(2 * Hi, Hi).array().tanh();
    a.rightCols(Hi) = gates.rightCols(Hi).array().unaryExpr(sigm);
    if (t > 0) {
      c = a.middleCols(Hi, Hi) * c + a.leftCols(Hi) * a.middleCols(2 * Hi, Hi);
    } else {
      c = a.leftCols(Hi) * a.middleCols(2 * Hi, Hi);
    }
    if (tape) {
      hiddens.push_back(h.array());  // h_{t-1}
      acts.push_back(a);
      cells.push_back(c);
    }
    h = (a.rightCols(Hi) * c.tanh()).matrix();
  }
  Tensor out(Shape{B, H});
  detail::MutMap(out.values().data(), Bi, Hi) = h;
  if (!tape) return out;

  std::vector<double> xs, wih, whh;
  if (w_ih.requires_grad()) xs = x.buffer();
  if (x.requires_grad()) wih = w_ih.buffer();
  whh = w_hh.buffer();
  return tape->record(
      std::move(out), {x.node(), w_ih.node(), w_hh.node(), bias.node()},
      [nx = x.node(), nwi = w_ih.node(), nwh = w_hh.node(), nb = bias.node(), B, T, I, H,
       acts = std::move(acts), cells = std::move(cells), hiddens = std::move(hiddens),
       xs = std::move(xs), wih = std::move(wih),
       whh = std::move(whh)](std::span<const double> g, GradSink& sink) {
        const auto Bi = static_cast<Eigen::Index>(B), Hi = static_cast<Eigen::Index>(H);
        const auto Ii = static_cast<Eigen::Index>(I);
        const auto rows = Bi * static_cast<Eigen::Index>(T);
        const detail::ConstMap Whh(whh.data(), Hi, 4 * Hi);
        detail::RowMat dxw(rows, 4 * Hi);
        detail::RowMat dwhh = detail::RowMat::Zero(Hi, 4 * Hi);
        Arr dh = detail::ConstMap(g.data(), Bi, Hi).array();
        Arr dc = Arr::Zero(Bi, Hi);
        Arr da(Bi, 4 * Hi);
        for (std::size_t t = T; t-- > 0;) {
          const Arr& a = acts[t];
          const auto ig = a.leftCols(Hi), fg = a.middleCols(Hi, Hi);
          const auto gg = a.middleCols(2 * Hi, Hi), og = a.rightCols(Hi);
          const Arr tc = cells[t].tanh();
          dc += dh * og * (1.0 - tc.square());
          da.leftCols(Hi) = dc * gg * ig * (1.0 - ig);
          if (t > 0) {
            da.middleCols(Hi, Hi) = dc * cells[t - 1] * fg * (1.0 - fg);
          } else {
            da.middleCols(Hi, Hi).setZero();
          }
          da.middleCols(2 * Hi, Hi) = dc * ig * (1.0 - gg.square());
          da.rightCols(Hi) = dh * tc * og * (1.0 - og);
          for (std::size_t b = 0; b < B; ++b)
            dxw.row(static_cast<Eigen::Index>(b * T + t)) = da.row(static_cast<Eigen::Index>(b));
          if (t > 0) {
            dwhh.noalias() += hiddens[t].matrix().transpose() * da.matrix();
            dh = (da.matrix() * Whh.transpose()).array();
            dc = dc * fg;
          }
        }
        if (nwh) detail::MutMap(sink.grad(*nwh).data(), Hi, 4 * Hi) += dwhh;
        if (nb) {
          detail::add_column_sums(dxw, sink.grad(*nb).data());
        }
        if (nwi) {
          detail::MutMap(sink.grad(*nwi).data(), Ii, 4 * Hi).noalias() +=
              detail::ConstMap(xs.data(), rows, Ii).transpose() * dxw;
        }
        if (nx) {
          detail::MutMap(sink.grad(*nx).data(), rows, Ii).noalias() +=
              dxw * detail::ConstMap(wih.data(), Ii, 4 * Hi).transpose();
        }
      });
}

// ---------------------------------------------------------------------------
// Noise

/// I.i.d. N(0, 1) draws; never tracked.
inline Tensor standard_normal(RngStream& rng, Shape shape) {
  Tensor out(std::move(shape));
  for (double& v : out.values()) v = rng.normal();
  return out;
}

}  // namespace vaeneu
