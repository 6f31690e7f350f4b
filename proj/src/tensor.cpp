#include "liquidbench/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace liquidbench {

namespace {

std::atomic<std::uint64_t> g_tape_counter{1};

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  // max(x,0) + log1p(exp(-|x|)) avoids overflow on both tails
  return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

}  // namespace

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(std::move(values))) {
  if (shape_numel(shape_) != data_->size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " wants " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data_->size()));
  }
}

Tensor Tensor::from_external(Shape shape, std::vector<double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw ValueError("non-finite value in external tensor data");
    }
  }
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape_));
  }
  return shape_[axis];
}

double Tensor::value() const {
  if (size() != 1) {
    throw ShapeError("value() requires a scalar tensor, got " + shape_str(shape_));
  }
  return (*data_)[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(idx.size()) +
                     " does not match tensor rank " + std::to_string(shape_.size()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    if (i >= shape_[axis]) {
      throw ShapeError("index out of range on axis " + std::to_string(axis));
    }
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return (*data_)[flat];
}

bool Tensor::all_finite() const {
  if (!data_) return true;
  return std::all_of(data_->begin(), data_->end(),
                     [](double v) { return std::isfinite(v); });
}

std::vector<double>& Tensor::grad() {
  if (!grad_) grad_ = std::make_shared<std::vector<double>>(size(), 0.0);
  return *grad_;
}

const std::vector<double>& Tensor::grad() const {
  if (!grad_) throw TapeError("tensor has no gradient buffer");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

// ------------------------------------------------------------------ Tape

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {}

int Tape::input_node(const Tensor& t) const {
  if (t.node_ >= 0 && t.tape_id_ == id_) return t.node_;
  // Copies of a watched parameter share storage but not node bookkeeping;
  // resolve them (and parameters re-watched across passes) by pointer.
  if (t.data_) {
    auto it = watched_.find(t.data_.get());
    if (it != watched_.end()) return it->second;
  }
  if (t.node_ >= 0) {
    throw TapeError("tensor was recorded on tape generation " +
                    std::to_string(t.tape_id_) + " but fed into generation " +
                    std::to_string(id_) + "; reset invalidates old tensors");
  }
  return -1;
}

Tensor Tape::watch(Tensor& param) {
  if (!param.data_) throw TapeError("cannot watch an empty tensor");
  auto it = watched_.find(param.data_.get());
  if (it != watched_.end()) {
    param.node_ = it->second;
    param.tape_id_ = id_;
    return param;
  }
  param.grad();  // ensure the accumulation buffer exists
  Node node;
  node.shape = param.shape_;
  node.leaf_grad = param.grad_;
  nodes_.push_back(std::move(node));
  int nid = static_cast<int>(nodes_.size()) - 1;
  watched_.emplace(param.data_.get(), nid);
  param.node_ = nid;
  param.tape_id_ = id_;
  return param;
}

Tensor Tape::emit(Shape shape, std::vector<double> values, std::vector<int> inputs,
                  BackwardFn backward) {
  Node node;
  node.shape = shape;
  node.inputs = std::move(inputs);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  Tensor out(std::move(shape), std::move(values));
  out.node_ = static_cast<int>(nodes_.size()) - 1;
  out.tape_id_ = id_;
  return out;
}

std::vector<double>& Tape::grad_of(int node) {
  if (grads_.size() < nodes_.size()) {
    grads_.resize(nodes_.size());
    grad_set_.resize(nodes_.size(), 0);
  }
  if (!grad_set_[static_cast<std::size_t>(node)]) {
    grads_[static_cast<std::size_t>(node)].assign(
        shape_numel(nodes_[static_cast<std::size_t>(node)].shape), 0.0);
    grad_set_[static_cast<std::size_t>(node)] = 1;
  }
  return grads_[static_cast<std::size_t>(node)];
}

bool Tape::grad_present(int node) const {
  auto i = static_cast<std::size_t>(node);
  return i < grad_set_.size() && grad_set_[i];
}

void Tape::backward(const Tensor& root) {
  if (consumed_) {
    throw TapeError("tape already consumed by a previous backward(); reset() first");
  }
  int root_node = input_node(root);
  if (root_node < 0) throw TapeError("backward root is not recorded on this tape");
  if (root.size() != 1) {
    throw TapeError("backward root must be scalar, got " + shape_str(root.shape()));
  }
  consumed_ = true;
  grads_.resize(nodes_.size());
  grad_set_.resize(nodes_.size(), 0);
  grad_of(root_node)[0] = 1.0;

  for (int k = static_cast<int>(nodes_.size()) - 1; k >= 0; --k) {
    if (!grad_present(k)) continue;
    Node& node = nodes_[static_cast<std::size_t>(k)];
    if (node.backward) {
      node.backward(*this, k);
    } else if (node.leaf_grad) {
      const std::vector<double>& g = grad_of(k);
      std::vector<double>& dst = *node.leaf_grad;
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  grads_.clear();
  grad_set_.clear();
  watched_.clear();
  consumed_ = false;
  id_ = g_tape_counter.fetch_add(1);
}

// ------------------------------------------------------------------- ops

namespace {

struct TrackedInputs {
  std::vector<int> nodes;
  bool any = false;
};

TrackedInputs gather_inputs(Tape& tape, std::initializer_list<const Tensor*> ts) {
  TrackedInputs r;
  for (const Tensor* t : ts) {
    int n = tape.input_node(*t);
    r.nodes.push_back(n);
    if (n >= 0) r.any = true;
  }
  return r;
}

// Shared-value capture so backward closures keep forward data alive.
using Values = std::shared_ptr<const std::vector<double>>;

Values capture(const Tensor& t) {
  return std::make_shared<const std::vector<double>>(t.values());
}

Tensor finish(Tape& tape, Shape shape, std::vector<double> values,
              const TrackedInputs& in, Tape::BackwardFn backward) {
  if (!in.any) return Tensor(std::move(shape), std::move(values));
  std::vector<int> nodes;
  for (int n : in.nodes) nodes.push_back(n);
  return tape.emit(std::move(shape), std::move(values), std::move(nodes),
                   std::move(backward));
}

enum class Broadcast { same, a_scalar, b_scalar, a_vector, b_vector };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::b_scalar;
  if (a.size() == 1) return Broadcast::a_scalar;
  if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.shape()[0]) {
    return Broadcast::b_vector;
  }
  if (a.rank() == 1 && b.rank() >= 1 && b.shape().back() == a.shape()[0]) {
    return Broadcast::a_vector;
  }
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) +
                   " with " + shape_str(b.shape()));
}

// Reduce a full-size gradient onto a broadcast operand.
std::vector<double> reduce_broadcast_grad(const std::vector<double>& g,
                                          std::size_t operand_size, Broadcast bc,
                                          bool operand_is_a) {
  bool scalar = (operand_is_a && bc == Broadcast::a_scalar) ||
                (!operand_is_a && bc == Broadcast::b_scalar);
  std::vector<double> out(operand_size, 0.0);
  if (scalar) {
    double s = 0.0;
    for (double v : g) s += v;
    out[0] = s;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) out[i % operand_size] += g[i];
  }
  return out;
}

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_op(Tape& tape, const Tensor& a, const Tensor& b, const char* name,
                 Fwd fwd, BwdA dfda, BwdB dfdb) {
  Broadcast bc = broadcast_kind(a, b, name);
  bool a_full = (bc == Broadcast::same || bc == Broadcast::b_scalar ||
                 bc == Broadcast::b_vector);
  const Tensor& big = a_full ? a : b;
  std::size_t n = big.size();
  const std::vector<double>& av = a.values();
  const std::vector<double>& bv = b.values();
  std::size_t an = av.size(), bn = bv.size();

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = av[a_full ? i : i % an];
    double y = bv[a_full ? (bc == Broadcast::same ? i
                            : bc == Broadcast::b_scalar ? 0
                                                        : i % bn)
                         : i];
    out[i] = fwd(x, y);
  }

  TrackedInputs in = gather_inputs(tape, {&a, &b});
  if (!in.any) return Tensor(big.shape(), std::move(out));

  Values ca = capture(a), cb = capture(b);
  int na = in.nodes[0], nb = in.nodes[1];
  auto backward = [=](Tape& t, int self) {
    const std::vector<double>& g = t.grad_of(self);
    std::size_t asz = ca->size(), bsz = cb->size();
    std::vector<double> ga(g.size()), gb(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      double x = (*ca)[asz == g.size() ? i : i % asz];
      double y = (*cb)[bsz == g.size() ? i : i % bsz];
      ga[i] = g[i] * dfda(x, y);
      gb[i] = g[i] * dfdb(x, y);
    }
    if (na >= 0) {
      std::vector<double> r = asz == g.size()
                                  ? std::move(ga)
                                  : reduce_broadcast_grad(ga, asz, bc, true);
      std::vector<double>& dst = t.grad_of(na);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += r[i];
    }
    if (nb >= 0) {
      std::vector<double> r = bsz == g.size()
                                  ? std::move(gb)
                                  : reduce_broadcast_grad(gb, bsz, bc, false);
      std::vector<double>& dst = t.grad_of(nb);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += r[i];
    }
  };
  return finish(tape, big.shape(), std::move(out), in, backward);
}

// dy/dx expressed in terms of (x, y) so cheap forms like y*(1-y) work.
template <typename Fwd, typename Bwd>
Tensor unary_op(Tape& tape, const Tensor& x, Fwd fwd, Bwd dydx) {
  std::size_t n = x.size();
  std::vector<double> out(n);
  const std::vector<double>& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);

  TrackedInputs in = gather_inputs(tape, {&x});
  if (!in.any) return Tensor(x.shape(), std::move(out));

  Values cx = capture(x);
  auto cy = std::make_shared<const std::vector<double>>(out);
  int nx = in.nodes[0];
  auto backward = [=](Tape& t, int self) {
    const std::vector<double>& g = t.grad_of(self);
    std::vector<double>& dst = t.grad_of(nx);
    for (std::size_t i = 0; i < g.size(); ++i) {
      dst[i] += g[i] * dydx((*cx)[i], (*cy)[i]);
    }
  };
  return finish(tape, x.shape(), std::move(out), in, backward);
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul needs rank-2 operands, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  std::size_t m = a.shape()[0], k = a.shape()[1];
  std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const std::vector<double>& av = a.values();
  const std::vector<double>& bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }

  TrackedInputs in = gather_inputs(tape, {&a, &b});
  if (!in.any) return Tensor({m, n}, std::move(out));

  Values ca = capture(a), cb = capture(b);
  int na = in.nodes[0], nb = in.nodes[1];
  auto backward = [=](Tape& t, int self) {
    const std::vector<double>& g = t.grad_of(self);
    if (na >= 0) {  // dA = dC . B^T
      std::vector<double>& dst = t.grad_of(na);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = g.data() + i * n;
          const double* brow = cb->data() + p * n;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          dst[i * k + p] += s;
        }
      }
    }
    if (nb >= 0) {  // dB = A^T . dC
      std::vector<double>& dst = t.grad_of(nb);
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t i = 0; i < m; ++i) {
          double aip = (*ca)[i * k + p];
          const double* grow = g.data() + i * n;
          double* drow = dst.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) drow[j] += aip * grow[j];
        }
      }
    }
  };
  return finish(tape, {m, n}, std::move(out), in, backward);
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(
      tape, a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(
      tape, a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(
      tape, a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(
      tape, a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor neg(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, x, [](double v) { return stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log1p(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, x, [](double v) { return std::log1p(v); },
      [](double v, double) { return 1.0 / (1.0 + v); });
}

Tensor softplus(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, x, [](double v) { return stable_softplus(v); },
      [](double v, double) { return stable_sigmoid(v); });
}

namespace {

enum class ReduceKind { sum, mean, max };

Tensor reduce_impl(Tape& tape, const Tensor& x, std::optional<std::size_t> axis,
                   ReduceKind kind) {
  const std::vector<double>& xv = x.values();

  if (!axis) {
    std::size_t n = x.size();
    double r;
    std::size_t argmax = 0;
    if (kind == ReduceKind::max) {
      if (n == 0) throw ShapeError("max over an empty tensor is undefined");
      r = xv[0];
      for (std::size_t i = 1; i < n; ++i) {
        if (xv[i] > r) {
          r = xv[i];
          argmax = i;
        }
      }
    } else {
      r = 0.0;
      for (double v : xv) r += v;
      if (kind == ReduceKind::mean) r = n == 0 ? 0.0 : r / static_cast<double>(n);
    }
    TrackedInputs in = gather_inputs(tape, {&x});
    if (!in.any) return Tensor::scalar(r);
    int nx = in.nodes[0];
    auto backward = [=](Tape& t, int self) {
      double g = t.grad_of(self)[0];
      std::vector<double>& dst = t.grad_of(nx);
      if (kind == ReduceKind::max) {
        dst[argmax] += g;
      } else {
        double w = kind == ReduceKind::mean && n > 0
                       ? 1.0 / static_cast<double>(n)
                       : 1.0;
        for (std::size_t i = 0; i < n; ++i) dst[i] += g * w;
      }
    };
    return finish(tape, {}, {r}, in, backward);
  }

  std::size_t ax = *axis;
  if (ax >= x.rank()) {
    throw ShapeError("reduce axis " + std::to_string(ax) + " out of range for " +
                     shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1, d = x.shape()[ax];
  for (std::size_t i = 0; i < ax; ++i) outer *= x.shape()[i];
  for (std::size_t i = ax + 1; i < x.rank(); ++i) inner *= x.shape()[i];

  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != ax) out_shape.push_back(x.shape()[i]);
  }

  std::vector<double> out(outer * inner, 0.0);
  std::vector<std::size_t> argmax(kind == ReduceKind::max ? outer * inner : 0, 0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t oi = o * inner + i;
      if (kind == ReduceKind::max) {
        if (d == 0) throw ShapeError("max over an empty axis is undefined");
        double best = xv[(o * d) * inner + i];
        std::size_t bj = 0;
        for (std::size_t j = 1; j < d; ++j) {
          double v = xv[(o * d + j) * inner + i];
          if (v > best) {
            best = v;
            bj = j;
          }
        }
        out[oi] = best;
        argmax[oi] = bj;
      } else {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += xv[(o * d + j) * inner + i];
        out[oi] = kind == ReduceKind::mean && d > 0 ? s / static_cast<double>(d) : s;
      }
    }
  }

  TrackedInputs in = gather_inputs(tape, {&x});
  if (!in.any) return Tensor(std::move(out_shape), std::move(out));
  int nx = in.nodes[0];
  auto backward = [=](Tape& t, int self) {
    const std::vector<double>& g = t.grad_of(self);
    std::vector<double>& dst = t.grad_of(nx);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        std::size_t oi = o * inner + i;
        if (kind == ReduceKind::max) {
          dst[(o * d + argmax[oi]) * inner + i] += g[oi];
        } else {
          double w = kind == ReduceKind::mean && d > 0
                         ? 1.0 / static_cast<double>(d)
                         : 1.0;
          for (std::size_t j = 0; j < d; ++j) {
            dst[(o * d + j) * inner + i] += g[oi] * w;
          }
        }
      }
    }
  };
  return finish(tape, std::move(out_shape), std::move(out), in, backward);
}

}  // namespace

Tensor reduce_sum(Tape& tape, const Tensor& x, std::optional<std::size_t> axis) {
  return reduce_impl(tape, x, axis, ReduceKind::sum);
}
Tensor reduce_mean(Tape& tape, const Tensor& x, std::optional<std::size_t> axis) {
  return reduce_impl(tape, x, axis, ReduceKind::mean);
}
Tensor reduce_max(Tape& tape, const Tensor& x, std::optional<std::size_t> axis) {
  return reduce_impl(tape, x, axis, ReduceKind::max);
}

namespace {

Tensor softmax_impl(Tape& tape, const Tensor& x, std::size_t axis, bool log_form) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1, d = x.shape()[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  if (d == 0) throw ShapeError("softmax over an empty axis is undefined");

  const std::vector<double>& xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < d; ++j) {
        m = std::max(m, xv[(o * d + j) * inner + i]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        z += std::exp(xv[(o * d + j) * inner + i] - m);
      }
      double lz = std::log(z);
      for (std::size_t j = 0; j < d; ++j) {
        std::size_t idx = (o * d + j) * inner + i;
        double centered = xv[idx] - m;
        out[idx] = log_form ? centered - lz : std::exp(centered - lz);
      }
    }
  }

  TrackedInputs in = gather_inputs(tape, {&x});
  if (!in.any) return Tensor(x.shape(), std::move(out));
  auto cy = std::make_shared<const std::vector<double>>(out);
  int nx = in.nodes[0];
  auto backward = [=](Tape& t, int self) {
    const std::vector<double>& g = t.grad_of(self);
    std::vector<double>& dst = t.grad_of(nx);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          std::size_t idx = (o * d + j) * inner + i;
          dot += log_form ? g[idx] : g[idx] * (*cy)[idx];
        }
        for (std::size_t j = 0; j < d; ++j) {
          std::size_t idx = (o * d + j) * inner + i;
          double s = log_form ? std::exp((*cy)[idx]) : (*cy)[idx];
          dst[idx] += log_form ? g[idx] - s * dot : s * (g[idx] - dot);
        }
      }
    }
  };
  return finish(tape, x.shape(), std::move(out), in, backward);
}

}  // namespace

Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  return softmax_impl(tape, x, axis, false);
}

Tensor log_softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  return softmax_impl(tape, x, axis, true);
}

Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0]) {
    throw ShapeError("concat_cols needs rank-2 tensors with equal rows, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  std::size_t rows = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  std::vector<double> out(rows * (ca + cb));
  const std::vector<double>& av = a.values();
  const std::vector<double>& bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(av.begin() + r * ca, av.begin() + (r + 1) * ca,
              out.begin() + r * (ca + cb));
    std::copy(bv.begin() + r * cb, bv.begin() + (r + 1) * cb,
              out.begin() + r * (ca + cb) + ca);
  }
  TrackedInputs in = gather_inputs(tape, {&a, &b});
  if (!in.any) return Tensor({rows, ca + cb}, std::move(out));
  int na = in.nodes[0], nb = in.nodes[1];
  auto backward = [=](Tape& t, int self) {
    const std::vector<double>& g = t.grad_of(self);
    if (na >= 0) {
      std::vector<double>& dst = t.grad_of(na);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < ca; ++j) {
          dst[r * ca + j] += g[r * (ca + cb) + j];
        }
      }
    }
    if (nb >= 0) {
      std::vector<double>& dst = t.grad_of(nb);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cb; ++j) {
          dst[r * cb + j] += g[r * (ca + cb) + ca + j];
        }
      }
    }
  };
  return finish(tape, {rows, ca + cb}, std::move(out), in, backward);
}

Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t start, std::size_t len) {
  if (x.rank() != 2) {
    throw ShapeError("slice_cols needs a rank-2 tensor, got " + shape_str(x.shape()));
  }
  std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (start + len > cols) {
    throw ShapeError("slice_cols [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of range for " +
                     shape_str(x.shape()));
  }
  std::vector<double> out(rows * len);
  const std::vector<double>& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(xv.begin() + r * cols + start, xv.begin() + r * cols + start + len,
              out.begin() + r * len);
  }
  TrackedInputs in = gather_inputs(tape, {&x});
  if (!in.any) return Tensor({rows, len}, std::move(out));
  int nx = in.nodes[0];
  auto backward = [=](Tape& t, int self) {
    const std::vector<double>& g = t.grad_of(self);
    std::vector<double>& dst = t.grad_of(nx);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < len; ++j) {
        dst[r * cols + start + j] += g[r * len + j];
      }
    }
  };
  return finish(tape, {rows, len}, std::move(out), in, backward);
}

Tensor stack_time(Tape& tape, const std::vector<Tensor>& steps) {
  if (steps.empty()) throw ShapeError("stack_time needs at least one step");
  std::size_t batch = steps[0].shape()[0];
  std::size_t width = steps[0].shape()[1];
  std::size_t T = steps.size();
  std::vector<int> nodes;
  bool any = false;
  for (const Tensor& s : steps) {
    if (s.rank() != 2 || s.shape()[0] != batch || s.shape()[1] != width) {
      throw ShapeError("stack_time steps must share shape, got " +
                       shape_str(s.shape()) + " vs " + shape_str(steps[0].shape()));
    }
    int n = tape.input_node(s);
    nodes.push_back(n);
    if (n >= 0) any = true;
  }
  std::vector<double> out(batch * T * width);
  for (std::size_t t = 0; t < T; ++t) {
    const std::vector<double>& sv = steps[t].values();
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy(sv.begin() + b * width, sv.begin() + (b + 1) * width,
                out.begin() + (b * T + t) * width);
    }
  }
  if (!any) return Tensor({batch, T, width}, std::move(out));
  auto backward = [=](Tape& t, int self) {
    const std::vector<double>& g = t.grad_of(self);
    for (std::size_t s = 0; s < T; ++s) {
      if (nodes[s] < 0) continue;
      std::vector<double>& dst = t.grad_of(nodes[s]);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < width; ++j) {
          dst[b * width + j] += g[(b * T + s) * width + j];
        }
      }
    }
  };
  return tape.emit({batch, T, width}, std::move(out), nodes, backward);
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  }
  TrackedInputs in = gather_inputs(tape, {&x});
  std::vector<double> out = x.values();
  if (!in.any) return Tensor(std::move(shape), std::move(out));
  int nx = in.nodes[0];
  auto backward = [=](Tape& t, int self) {
    const std::vector<double>& g = t.grad_of(self);
    std::vector<double>& dst = t.grad_of(nx);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  };
  return finish(tape, std::move(shape), std::move(out), in, backward);
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm needs rank >= 1");
  std::size_t width = x.shape().back();
  if (gamma.shape() != Shape{width} || beta.shape() != Shape{width}) {
    throw ShapeError("layer_norm affine params must be [" + std::to_string(width) +
                     "], got " + shape_str(gamma.shape()) + " and " +
                     shape_str(beta.shape()));
  }
  std::size_t rows = x.size() / width;
  const std::vector<double>& xv = x.values();
  const std::vector<double>& gv = gamma.values();
  const std::vector<double>& bv = beta.values();

  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      double dvy = row[j] - mu;
      var += dvy * dvy;
    }
    var /= static_cast<double>(width);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < width; ++j) {
      double h = (row[j] - mu) * is;
      xhat[r * width + j] = h;
      out[r * width + j] = gv[j] * h + bv[j];
    }
  }

  TrackedInputs in = gather_inputs(tape, {&x, &gamma, &beta});
  if (!in.any) return Tensor(x.shape(), std::move(out));
  auto ch = std::make_shared<const std::vector<double>>(std::move(xhat));
  auto cis = std::make_shared<const std::vector<double>>(std::move(inv_std));
  Values cg = capture(gamma);
  int nx = in.nodes[0], ng = in.nodes[1], nb = in.nodes[2];
  auto backward = [=](Tape& t, int self) {
    const std::vector<double>& g = t.grad_of(self);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* grow = g.data() + r * width;
      const double* hrow = ch->data() + r * width;
      if (nx >= 0) {
        // dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat . xhat))
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
          double dh = grow[j] * (*cg)[j];
          m1 += dh;
          m2 += dh * hrow[j];
        }
        m1 /= static_cast<double>(width);
        m2 /= static_cast<double>(width);
        std::vector<double>& dst = t.grad_of(nx);
        for (std::size_t j = 0; j < width; ++j) {
          double dh = grow[j] * (*cg)[j];
          dst[r * width + j] += (*cis)[r] * (dh - m1 - hrow[j] * m2);
        }
      }
      if (ng >= 0) {
        std::vector<double>& dst = t.grad_of(ng);
        for (std::size_t j = 0; j < width; ++j) dst[j] += grow[j] * hrow[j];
      }
      if (nb >= 0) {
        std::vector<double>& dst = t.grad_of(nb);
        for (std::size_t j = 0; j < width; ++j) dst[j] += grow[j];
      }
    }
  };
  return finish(tape, x.shape(), std::move(out), in, backward);
}

Tensor custom_scalar(Tape& tape, const Tensor& input, double value,
                     std::vector<double> grad_wrt_input) {
  if (grad_wrt_input.size() != input.size()) {
    throw ShapeError("custom_scalar gradient size " +
                     std::to_string(grad_wrt_input.size()) +
                     " does not match input " + shape_str(input.shape()));
  }
  TrackedInputs in = gather_inputs(tape, {&input});
  if (!in.any) return Tensor::scalar(value);
  auto cg = std::make_shared<const std::vector<double>>(std::move(grad_wrt_input));
  int nx = in.nodes[0];
  auto backward = [=](Tape& t, int self) {
    double g = t.grad_of(self)[0];
    std::vector<double>& dst = t.grad_of(nx);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g * (*cg)[i];
  };
  return finish(tape, {}, {value}, in, backward);
}

Tensor tile_rows(const std::vector<double>& row_values, std::size_t cols) {
  std::vector<double> out(row_values.size() * cols);
  for (std::size_t r = 0; r < row_values.size(); ++r) {
    std::fill(out.begin() + r * cols, out.begin() + (r + 1) * cols, row_values[r]);
  }
  return Tensor({row_values.size(), cols}, std::move(out));
}

}  // namespace liquidbench
