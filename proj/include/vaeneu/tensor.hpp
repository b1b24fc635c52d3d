#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vaeneu/error.hpp"

namespace vaeneu {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

class Tape;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles.
///
/// A tensor is a value: copying it copies the buffer. A tensor produced by an
/// operation on a tracked input additionally remembers the tape node that
/// produced it, so later operations can extend the graph and `Tape::backward`
/// can route gradients to it. Untracked tensors never touch a tape.
class Tensor {
 public:
  Tensor() : shape_{}, values_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_size(shape_)) {
      throw ShapeError("tensor of shape " + shape_string(shape_) + " given " +
                       std::to_string(values_.size()) + " values");
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor vector(std::initializer_list<double> v) {
    return vector(std::vector<double>(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  const std::vector<double>& buffer() const { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * shape_.at(1) + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * shape_.at(1) + c]; }

  /// The single value of a one-element tensor.
  double item() const {
    if (values_.size() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    }
    return values_[0];
  }

  bool requires_grad() const { return node_.has_value(); }
  std::optional<NodeId> node() const { return node_; }
  Tape* tape() const { return tape_; }

  /// Same values, no graph connection.
  Tensor detached() const { return Tensor(shape_, values_); }

 private:
  friend class Tape;

  Shape shape_;
  std::vector<double> values_;
  Tape* tape_ = nullptr;
  std::optional<NodeId> node_;
};

/// Gradient storage indexed by tape node. Buffers are allocated on first
/// write, so nodes that no gradient reaches cost nothing.
class GradSink {
 public:
  explicit GradSink(std::vector<Shape> shapes)
      : shapes_(std::move(shapes)), grads_(shapes_.size()) {}

  std::span<double> grad(NodeId id) {
    auto& g = grads_[id];
    if (g.empty() && shape_size(shapes_[id]) > 0) g.assign(shape_size(shapes_[id]), 0.0);
    return g;
  }
  bool reached(NodeId id) const { return !grads_[id].empty(); }
  std::span<const double> peek(NodeId id) const { return grads_[id]; }

 private:
  friend class GradientMap;
  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> grads_;
};

/// Result of `Tape::backward`: d(root)/d(node) for every node the root
/// depends on.
class GradientMap {
 public:
  explicit GradientMap(GradSink sink) : sink_(std::move(sink)) {}

  /// Gradient with respect to a tracked tensor; zeros if the root does not
  /// depend on it.
  Tensor of(const Tensor& t) const {
    if (!t.node()) throw Error("gradient requested for an untracked tensor");
    const NodeId id = *t.node();
    if (!sink_.reached(id)) return Tensor(t.shape());
    return Tensor(t.shape(), std::vector<double>(sink_.peek(id).begin(), sink_.peek(id).end()));
  }

  bool contains(NodeId id) const { return id < sink_.shapes_.size() && sink_.reached(id); }

 private:
  GradSink sink_;
};

/// Append-only record of operations for reverse-mode differentiation.
///
/// Node ids are assigned in creation order, and a node can only be created
/// from tensors that already exist, so id order is a topological order.
/// A tape is meant to be built for one forward pass and thrown away.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `leaf` as a differentiable input and returns the tracked copy.
  Tensor watch(const Tensor& leaf) {
    Tensor out = leaf.detached();
    attach(out, {}, nullptr);
    return out;
  }

  /// Records `value` as the result of an operation on `inputs`.
  Tensor record(Tensor value, std::vector<std::optional<NodeId>> inputs, BackwardFn fn) {
    std::vector<NodeId> ids;
    for (const auto& in : inputs) {
      if (in) ids.push_back(*in);
    }
    attach(value, std::move(ids), std::move(fn));
    return value;
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<NodeId>& inputs_of(NodeId id) const { return nodes_.at(id).inputs; }

  /// Reverse sweep from a one-element root.
  GradientMap backward(const Tensor& root) const {
    if (root.size() != 1) {
      throw ShapeError("backward() needs a scalar root, got " + shape_string(root.shape()));
    }
    if (!root.node() || root.tape() != this) {
      throw Error("backward() root was not recorded on this tape");
    }
    std::vector<Shape> shapes;
    shapes.reserve(nodes_.size());
    for (const auto& n : nodes_) shapes.push_back(n.shape);
    GradSink sink(std::move(shapes));
    const NodeId root_id = *root.node();
    sink.grad(root_id)[0] = 1.0;
    for (NodeId id = root_id + 1; id-- > 0;) {
      const auto& node = nodes_[id];
      if (!node.backward || !sink.reached(id)) continue;
      // Copy: the callback may allocate other buffers in the sink.
      std::vector<double> g(sink.peek(id).begin(), sink.peek(id).end());
      node.backward(g, sink);
    }
    return GradientMap(std::move(sink));
  }

 private:
  struct Node {
    Shape shape;
    std::vector<NodeId> inputs;
    BackwardFn backward;
  };

  void attach(Tensor& t, std::vector<NodeId> inputs, BackwardFn fn) {
    t.tape_ = this;
    t.node_ = nodes_.size();
    nodes_.push_back(Node{t.shape(), std::move(inputs), std::move(fn)});
  }

  std::vector<Node> nodes_;
};

}  // namespace vaeneu
