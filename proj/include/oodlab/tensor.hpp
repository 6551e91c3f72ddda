#pragma once

// Dense 64-bit tensors and a define-by-run reverse-mode tape.
//
// Every network in the lab is built from the primitives on Graph. A Graph is
// created per forward pass, records one node per primitive, and is discarded
// after backward(). Parameters live outside the graph as Tensors; the graph
// refers to them by address, so they must outlive it.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace oodlab {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  static Tensor row(std::initializer_list<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }

  /// Leading extent for 2-D tensors; rank-1 tensors count as a single row.
  std::size_t rows() const noexcept;
  /// Trailing (feature) extent.
  std::size_t cols() const noexcept;

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  const std::vector<double>& data() const noexcept { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool flag) noexcept { requires_grad_ = flag; }

  bool has_grad() const noexcept { return grad_.has_value(); }
  std::span<const double> grad() const;
  void set_grad(std::vector<double> grad);
  void clear_grad() noexcept { grad_.reset(); }

  /// True when every entry is finite.
  bool all_finite() const noexcept;

  /// Rows [begin, end) as a new tensor.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  /// Rows picked by index, in the given order.
  Tensor gather_rows(std::span<const std::size_t> indices) const;

  bool operator==(const Tensor& other) const noexcept {
    return shape_ == other.shape_ && values_ == other.values_;
  }

 private:
  Shape shape_;
  std::vector<double> values_;
  std::optional<std::vector<double>> grad_;
  bool requires_grad_ = false;
};

enum class Op : std::uint8_t {
  leaf,
  matmul,
  add,
  mul,
  relu,
  sigmoid,
  concat,
  slice,
  softmax,
  log_softmax,
  log,
  sum,
  mean,
  scale,
};

const char* op_name(Op op) noexcept;

/// Handle to a node on a Graph.
struct Var {
  std::size_t id = 0;
};

/// Extra arguments some primitives take.
struct OpAttr {
  std::size_t begin = 0;  // slice
  std::size_t end = 0;    // slice
  double factor = 1.0;    // scale
};

class Graph {
 public:
  /// With track_parameters=false, param() leaves never accumulate gradient.
  /// Attack graphs use this to differentiate w.r.t. inputs only.
  explicit Graph(bool track_parameters = true) : track_parameters_(track_parameters) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf referring to an external parameter tensor. Gradient is tracked when
  /// the tensor is flagged requires_grad and the graph tracks parameters.
  Var param(const Tensor& tensor);
  /// Leaf owning a copy of `tensor`.
  Var input(Tensor tensor, bool requires_grad = false);
  Var constant(Tensor tensor) { return input(std::move(tensor), false); }

  /// Generic entry point; the named helpers below forward here.
  Var apply(Op op, std::span<const Var> inputs, OpAttr attr = {});

  Var matmul(Var a, Var b) { return binary(Op::matmul, a, b); }
  /// Same-shape add, or [B x n] + [n] / [1 x n] broadcast over the leading axis.
  Var add(Var a, Var b) { return binary(Op::add, a, b); }
  Var mul(Var a, Var b) { return binary(Op::mul, a, b); }
  Var relu(Var a) { return unary(Op::relu, a); }
  Var sigmoid(Var a) { return unary(Op::sigmoid, a); }
  Var concat(std::span<const Var> parts) { return apply(Op::concat, parts); }
  Var slice(Var a, std::size_t begin, std::size_t end);
  Var softmax(Var a) { return unary(Op::softmax, a); }
  Var log_softmax(Var a) { return unary(Op::log_softmax, a); }
  Var log(Var a) { return unary(Op::log, a); }
  Var sum(Var a) { return unary(Op::sum, a); }
  Var mean(Var a) { return unary(Op::mean, a); }
  Var scale(Var a, double factor);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  /// Populate gradients of `root` w.r.t. every node that requires grad.
  /// Throws ContractError when root is not a scalar.
  void backward(Var root);

  /// d root / d v. Zero-filled when v does not require grad or does not
  /// influence root.
  std::vector<double> grad(Var v) const;
  /// Summed gradient over every param() leaf referring to `tensor`.
  std::vector<double> param_grad(const Tensor& tensor) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  Op kind(Var v) const { return node(v).op; }
  std::span<const std::size_t> inputs_of(Var v) const { return node(v).inputs; }

 private:
  struct Node {
    Op op = Op::leaf;
    std::vector<std::size_t> inputs;
    OpAttr attr;
    Tensor owned;
    const Tensor* external = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;

    const Tensor& value() const { return external != nullptr ? *external : owned; }
  };

  Var unary(Op op, Var a) { return apply(op, std::span<const Var>(&a, 1)); }
  Var binary(Op op, Var a, Var b) {
    const Var pair[2] = {a, b};
    return apply(op, pair);
  }
  const Node& node(Var v) const;
  void propagate(const Node& n);

  std::deque<Node> nodes_;
  bool track_parameters_;
  bool backward_done_ = false;
};

/// Mean cross-entropy of row logits [B x C] against class indices.
/// Throws ValidationError for out-of-range labels.
Var cross_entropy(Graph& graph, Var logits, std::span<const int> labels);

/// Per-row cross-entropy computed directly on values (no graph).
std::vector<double> cross_entropy_rows(const Tensor& logits, std::span<const int> labels);

/// Index of the largest entry in each row; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Tensor& t);

/// Numerically stable softmax of each row, on values.
Tensor softmax_rows(const Tensor& t);

}  // namespace oodlab
