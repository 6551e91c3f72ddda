#include "oodlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "oodlab/errors.hpp"

namespace oodlab {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor shape " + shape_string(shape) + " has a zero extent");
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  values_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_shape(shape_);
  if (values_.size() != shape_numel(shape_)) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " needs " +
                         std::to_string(shape_numel(shape_)) + " values, got " +
                         std::to_string(values_.size()));
  }
}

Tensor Tensor::row(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.size() < 2) return 1;
  return values_.size() / shape_.back();
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

double Tensor::item() const {
  if (values_.size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape_));
  }
  return values_[0];
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw ContractError("tensor has no gradient");
  return *grad_;
}

void Tensor::set_grad(std::vector<double> grad) {
  if (grad.size() != values_.size()) {
    throw ValidationError("gradient length " + std::to_string(grad.size()) +
                          " does not match tensor " + shape_string(shape_));
  }
  grad_ = std::move(grad);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > rows()) {
    throw DimensionError("row slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_string(shape_));
  }
  const std::size_t c = cols();
  std::vector<double> out(values_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          values_.begin() + static_cast<std::ptrdiff_t>(end * c));
  return Tensor({end - begin, c}, std::move(out));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
  const std::size_t c = cols();
  std::vector<double> out;
  out.reserve(indices.size() * c);
  for (auto r : indices) {
    if (r >= rows()) throw DimensionError("row index out of range for " + shape_string(shape_));
    out.insert(out.end(), values_.begin() + static_cast<std::ptrdiff_t>(r * c),
               values_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
  }
  return Tensor({indices.size(), c}, std::move(out));
}

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::relu: return "relu";
    case Op::sigmoid: return "sigmoid";
    case Op::concat: return "concat";
    case Op::slice: return "slice";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::log: return "log";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::scale: return "scale";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(Op op, std::span<const Tensor* const> ins, const std::string& why) {
  std::string msg = std::string(op_name(op)) + ": " + why + "; operand shapes";
  for (const Tensor* t : ins) msg += " " + shape_string(t->shape());
  throw DimensionError(msg);
}

Shape with_cols(const Shape& like, std::size_t cols) {
  Shape s = like;
  s.back() = cols;
  return s;
}

void softmax_row(const double* x, double* y, std::size_t n) {
  const double mx = *std::max_element(x, x + n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    total += y[j];
  }
  for (std::size_t j = 0; j < n; ++j) y[j] /= total;
}

void log_softmax_row(const double* x, double* y, std::size_t n) {
  // The max entry contributes exactly 1; log1p over the rest keeps tiny losses accurate.
  const double* top = std::max_element(x, x + n);
  const double mx = *top;
  double rest = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (x + j != top) rest += std::exp(x[j] - mx);
  }
  const double log_rest = std::log1p(rest);
  for (std::size_t j = 0; j < n; ++j) y[j] = (x[j] - mx) - log_rest;
}

Tensor forward(Op op, std::span<const Tensor* const> in, const OpAttr& attr) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw DimensionError(std::string(op_name(op)) + ": expected " + std::to_string(n) +
                           " operands, got " + std::to_string(in.size()));
    }
  };
  switch (op) {
    case Op::leaf:
      throw ContractError("leaf nodes are created with param() or input()");

    case Op::matmul: {
      need(2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (b.rank() != 2 || a.rank() > 2 || a.cols() != b.shape()[0]) {
        shape_error(op, in, "inner dimensions disagree");
      }
      const std::size_t n = a.rows(), inner = a.cols(), m = b.cols();
      Tensor out(with_cols(a.shape(), m));
      const double* A = a.values().data();
      const double* B = b.values().data();
      double* C = out.values().data();
      for (std::size_t i = 0; i < n; ++i) {
        double* crow = C + i * m;
        for (std::size_t p = 0; p < inner; ++p) {
          const double av = A[i * inner + p];
          if (av == 0.0) continue;
          const double* brow = B + p * m;
          for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
      }
      return out;
    }

    case Op::add: {
      need(2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      Tensor out = a;
      auto o = out.values();
      auto bv = b.values();
      if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
      } else if (b.rows() == 1 && b.size() == a.cols() && a.rank() == 2) {
        const std::size_t c = a.cols();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i % c];
      } else {
        shape_error(op, in, "shapes neither equal nor row-broadcastable");
      }
      return out;
    }

    case Op::mul: {
      need(2);
      if (in[0]->shape() != in[1]->shape()) shape_error(op, in, "shapes must match");
      Tensor out = *in[0];
      auto o = out.values();
      auto bv = in[1]->values();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
      return out;
    }

    case Op::relu: {
      need(1);
      Tensor out = *in[0];
      for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
      return out;
    }

    case Op::sigmoid: {
      need(1);
      Tensor out = *in[0];
      for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
      return out;
    }

    case Op::concat: {
      if (in.empty()) throw DimensionError("concat: needs at least one operand");
      const std::size_t r = in[0]->rows();
      std::size_t total = 0;
      for (const Tensor* t : in) {
        if (t->rows() != r || t->rank() != in[0]->rank()) {
          shape_error(op, in, "leading extents disagree");
        }
        total += t->cols();
      }
      Tensor out(with_cols(in[0]->shape(), total));
      double* o = out.values().data();
      for (std::size_t i = 0; i < r; ++i) {
        for (const Tensor* t : in) {
          const std::size_t c = t->cols();
          const double* src = t->values().data() + i * c;
          o = std::copy(src, src + c, o);
        }
      }
      return out;
    }

    case Op::slice: {
      need(1);
      const Tensor& a = *in[0];
      if (attr.begin >= attr.end || attr.end > a.cols()) {
        shape_error(op, in,
                    "feature range [" + std::to_string(attr.begin) + ", " +
                        std::to_string(attr.end) + ") out of bounds");
      }
      const std::size_t w = attr.end - attr.begin, c = a.cols();
      Tensor out(with_cols(a.shape(), w));
      for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* src = a.values().data() + i * c + attr.begin;
        std::copy(src, src + w, out.values().data() + i * w);
      }
      return out;
    }

    case Op::softmax:
    case Op::log_softmax: {
      need(1);
      const Tensor& a = *in[0];
      Tensor out(a.shape());
      const std::size_t c = a.cols();
      for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* x = a.values().data() + i * c;
        double* y = out.values().data() + i * c;
        if (op == Op::softmax) {
          softmax_row(x, y, c);
        } else {
          log_softmax_row(x, y, c);
        }
      }
      return out;
    }

    case Op::log: {
      need(1);
      Tensor out = *in[0];
      for (double& v : out.values()) {
        if (!(v > 0.0)) throw NumericError("log: non-positive operand " + std::to_string(v));
        v = std::log(v);
      }
      return out;
    }

    case Op::sum:
    case Op::mean: {
      need(1);
      auto v = in[0]->values();
      double total = std::accumulate(v.begin(), v.end(), 0.0);
      if (op == Op::mean) total /= static_cast<double>(v.size());
      return Tensor::scalar(total);
    }

    case Op::scale: {
      need(1);
      Tensor out = *in[0];
      for (double& v : out.values()) v *= attr.factor;
      return out;
    }
  }
  throw ContractError("unknown primitive");
}

void accumulate(std::vector<double>& dst, std::size_t n) {
  if (dst.empty()) dst.assign(n, 0.0);
}

}  // namespace

Var Graph::param(const Tensor& tensor) {
  Node n;
  n.external = &tensor;
  n.needs_grad = track_parameters_ && tensor.requires_grad();
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::input(Tensor tensor, bool requires_grad) {
  if (!tensor.all_finite()) throw NumericError("graph input contains non-finite values");
  Node n;
  n.owned = std::move(tensor);
  n.needs_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::slice(Var a, std::size_t begin, std::size_t end) {
  OpAttr attr;
  attr.begin = begin;
  attr.end = end;
  return apply(Op::slice, std::span<const Var>(&a, 1), attr);
}

Var Graph::scale(Var a, double factor) {
  OpAttr attr;
  attr.factor = factor;
  return apply(Op::scale, std::span<const Var>(&a, 1), attr);
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this graph");
  return nodes_[v.id];
}

const Tensor& Graph::value(Var v) const { return node(v).value(); }

bool Graph::requires_grad(Var v) const { return node(v).needs_grad; }

Var Graph::apply(Op op, std::span<const Var> inputs, OpAttr attr) {
  std::vector<const Tensor*> operands;
  operands.reserve(inputs.size());
  Node n;
  n.op = op;
  n.attr = attr;
  n.inputs.reserve(inputs.size());
  for (Var v : inputs) {
    const Node& src = node(v);
    operands.push_back(&src.value());
    n.inputs.push_back(v.id);
    n.needs_grad = n.needs_grad || src.needs_grad;
  }
  n.owned = forward(op, operands, attr);
  if (!n.owned.all_finite()) {
    throw NumericError(std::string(op_name(op)) + ": produced non-finite values");
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Graph::backward(Var root) {
  const Node& r = node(root);
  if (r.value().size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " +
                        shape_string(r.value().shape()));
  }
  for (Node& n : nodes_) n.grad.clear();
  backward_done_ = true;
  if (!r.needs_grad) return;
  nodes_[root.id].grad.assign(1, 1.0);
  for (std::size_t id = root.id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.op == Op::leaf || !n.needs_grad || n.grad.empty()) continue;
    propagate(n);
  }
}

void Graph::propagate(const Node& n) {
  const std::vector<double>& dy = n.grad;
  auto in_node = [&](std::size_t slot) -> Node& { return nodes_[n.inputs[slot]]; };

  switch (n.op) {
    case Op::leaf:
      return;

    case Op::matmul: {
      Node& an = in_node(0);
      Node& bn = in_node(1);
      const Tensor& a = an.value();
      const Tensor& b = bn.value();
      const std::size_t rows = a.rows(), inner = a.cols(), m = b.cols();
      if (an.needs_grad) {
        accumulate(an.grad, a.size());
        const double* B = b.values().data();
        for (std::size_t i = 0; i < rows; ++i) {
          const double* g = dy.data() + i * m;
          double* da = an.grad.data() + i * inner;
          for (std::size_t p = 0; p < inner; ++p) {
            const double* brow = B + p * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += g[j] * brow[j];
            da[p] += acc;
          }
        }
      }
      if (bn.needs_grad) {
        accumulate(bn.grad, b.size());
        const double* A = a.values().data();
        for (std::size_t i = 0; i < rows; ++i) {
          const double* g = dy.data() + i * m;
          for (std::size_t p = 0; p < inner; ++p) {
            const double av = A[i * inner + p];
            if (av == 0.0) continue;
            double* db = bn.grad.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) db[j] += av * g[j];
          }
        }
      }
      return;
    }

    case Op::add: {
      Node& an = in_node(0);
      Node& bn = in_node(1);
      if (an.needs_grad) {
        accumulate(an.grad, dy.size());
        for (std::size_t i = 0; i < dy.size(); ++i) an.grad[i] += dy[i];
      }
      if (bn.needs_grad) {
        const std::size_t nb = bn.value().size();
        accumulate(bn.grad, nb);
        for (std::size_t i = 0; i < dy.size(); ++i) bn.grad[i % nb] += dy[i];
      }
      return;
    }

    case Op::mul: {
      Node& an = in_node(0);
      Node& bn = in_node(1);
      auto av = an.value().values();
      auto bv = bn.value().values();
      if (an.needs_grad) {
        accumulate(an.grad, dy.size());
        for (std::size_t i = 0; i < dy.size(); ++i) an.grad[i] += dy[i] * bv[i];
      }
      if (bn.needs_grad) {
        accumulate(bn.grad, dy.size());
        for (std::size_t i = 0; i < dy.size(); ++i) bn.grad[i] += dy[i] * av[i];
      }
      return;
    }

    case Op::relu: {
      Node& an = in_node(0);
      if (!an.needs_grad) return;
      auto x = an.value().values();
      accumulate(an.grad, dy.size());
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (x[i] > 0.0) an.grad[i] += dy[i];
      }
      return;
    }

    case Op::sigmoid: {
      Node& an = in_node(0);
      if (!an.needs_grad) return;
      auto y = n.owned.values();
      accumulate(an.grad, dy.size());
      for (std::size_t i = 0; i < dy.size(); ++i) an.grad[i] += dy[i] * y[i] * (1.0 - y[i]);
      return;
    }

    case Op::concat: {
      const std::size_t rows = n.owned.rows(), total = n.owned.cols();
      std::size_t offset = 0;
      for (std::size_t slot = 0; slot < n.inputs.size(); ++slot) {
        Node& part = in_node(slot);
        const std::size_t c = part.value().cols();
        if (part.needs_grad) {
          accumulate(part.grad, part.value().size());
          for (std::size_t i = 0; i < rows; ++i) {
            const double* g = dy.data() + i * total + offset;
            double* dst = part.grad.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] += g[j];
          }
        }
        offset += c;
      }
      return;
    }

    case Op::slice: {
      Node& an = in_node(0);
      if (!an.needs_grad) return;
      const std::size_t c = an.value().cols(), w = n.attr.end - n.attr.begin;
      accumulate(an.grad, an.value().size());
      for (std::size_t i = 0; i < n.owned.rows(); ++i) {
        for (std::size_t j = 0; j < w; ++j) an.grad[i * c + n.attr.begin + j] += dy[i * w + j];
      }
      return;
    }

    case Op::softmax: {
      Node& an = in_node(0);
      if (!an.needs_grad) return;
      const std::size_t c = n.owned.cols();
      auto y = n.owned.values();
      accumulate(an.grad, dy.size());
      for (std::size_t i = 0; i < n.owned.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += dy[i * c + j] * y[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          an.grad[i * c + j] += y[i * c + j] * (dy[i * c + j] - dot);
        }
      }
      return;
    }

    case Op::log_softmax: {
      Node& an = in_node(0);
      if (!an.needs_grad) return;
      const std::size_t c = n.owned.cols();
      auto y = n.owned.values();
      accumulate(an.grad, dy.size());
      for (std::size_t i = 0; i < n.owned.rows(); ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += dy[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          an.grad[i * c + j] += dy[i * c + j] - std::exp(y[i * c + j]) * total;
        }
      }
      return;
    }

    case Op::log: {
      Node& an = in_node(0);
      if (!an.needs_grad) return;
      auto x = an.value().values();
      accumulate(an.grad, dy.size());
      for (std::size_t i = 0; i < dy.size(); ++i) an.grad[i] += dy[i] / x[i];
      return;
    }

    case Op::sum:
    case Op::mean: {
      Node& an = in_node(0);
      if (!an.needs_grad) return;
      const std::size_t len = an.value().size();
      const double g = n.op == Op::mean ? dy[0] / static_cast<double>(len) : dy[0];
      accumulate(an.grad, len);
      for (double& v : an.grad) v += g;
      return;
    }

    case Op::scale: {
      Node& an = in_node(0);
      if (!an.needs_grad) return;
      accumulate(an.grad, dy.size());
      for (std::size_t i = 0; i < dy.size(); ++i) an.grad[i] += dy[i] * n.attr.factor;
      return;
    }
  }
}

std::vector<double> Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return std::vector<double>(n.value().size(), 0.0);
  return n.grad;
}

std::vector<double> Graph::param_grad(const Tensor& tensor) const {
  std::vector<double> total(tensor.size(), 0.0);
  for (const Node& n : nodes_) {
    if (n.external != &tensor || n.grad.empty()) continue;
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += n.grad[i];
  }
  return total;
}

Var cross_entropy(Graph& graph, Var logits, std::span<const int> labels) {
  const Tensor& z = graph.value(logits);
  const std::size_t rows = z.rows(), classes = z.cols();
  if (labels.size() != rows) {
    throw ValidationError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(rows) + " rows");
  }
  Tensor pick(z.shape(), 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ValidationError("cross_entropy: label " + std::to_string(labels[i]) +
                            " outside [0, " + std::to_string(classes) + ")");
    }
    pick.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  Var logp = graph.log_softmax(logits);
  Var picked = graph.mul(logp, graph.constant(std::move(pick)));
  return graph.scale(graph.sum(picked), -1.0 / static_cast<double>(rows));
}

std::vector<double> cross_entropy_rows(const Tensor& logits, std::span<const int> labels) {
  const std::size_t rows = logits.rows(), classes = logits.cols();
  if (labels.size() != rows) throw ValidationError("cross_entropy_rows: label count mismatch");
  std::vector<double> out(rows);
  std::vector<double> logp(classes);
  for (std::size_t i = 0; i < rows; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ValidationError("cross_entropy_rows: label out of range");
    }
    log_softmax_row(logits.values().data() + i * classes, logp.data(), classes);
    out[i] = -logp[static_cast<std::size_t>(labels[i])];
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& t) {
  const std::size_t c = t.cols();
  std::vector<int> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    const double* row = t.values().data() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

Tensor softmax_rows(const Tensor& t) {
  Tensor out(t.shape());
  const std::size_t c = t.cols();
  for (std::size_t i = 0; i < t.rows(); ++i) {
    softmax_row(t.values().data() + i * c, out.values().data() + i * c, c);
  }
  return out;
}

}  // namespace oodlab
