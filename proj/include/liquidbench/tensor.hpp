#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace liquidbench {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct TapeError : std::logic_error {
  using std::logic_error::logic_error;
};
struct ValueError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

class Tape;

// Dense row-major float64 tensor. Copies share storage; values are only
// written at construction or by the optimizer, never by ops.
class Tensor {
public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  // Validating constructor for data that crosses a trust boundary
  // (parsers, files): rejects NaN/Inf.
  static Tensor from_external(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;

  const std::vector<double>& values() const { return *data_; }
  std::vector<double>& mutable_values() { return *data_; }
  double value() const;  // scalar convenience
  double at(std::initializer_list<std::size_t> idx) const;
  bool all_finite() const;

  bool has_grad() const { return grad_ != nullptr; }
  std::vector<double>& grad();              // allocates zeros on first use
  const std::vector<double>& grad() const;  // throws if absent
  void zero_grad();

  bool tracked() const { return node_ >= 0; }
  int node() const { return node_; }
  std::uint64_t tape_id() const { return tape_id_; }

private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  int node_ = -1;
  std::uint64_t tape_id_ = 0;
};

// Records one forward pass for reverse-mode differentiation. Node ids are
// dense and topologically ordered (inputs of node k have ids < k), so
// backward() is a single reverse sweep visiting each node exactly once.
//
// A tape is single-use: backward() consumes it; reset() starts a new pass
// and invalidates all tensors recorded on the previous one. Feeding a
// tensor from another tape generation into an op throws rather than
// silently detaching it.
class Tape {
public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a parameter leaf. Idempotent per tape; gradients accumulate
  // additively into the tensor's grad buffer on backward().
  Tensor watch(Tensor& param);

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse id order.
  // root must be scalar-shaped and live on this tape.
  void backward(const Tensor& root);
  void reset();

  bool consumed() const { return consumed_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }

  // --- recording interface used by the op library ---
  using BackwardFn = std::function<void(Tape&, int node)>;
  Tensor emit(Shape shape, std::vector<double> values, std::vector<int> inputs,
              BackwardFn backward);

  std::vector<double>& grad_of(int node);  // zero-allocated on demand
  bool grad_present(int node) const;

  // Throws if t carries a node id from a different tape generation.
  // Returns -1 for constants.
  int input_node(const Tensor& t) const;

private:
  struct Node {
    Shape shape;
    std::vector<int> inputs;
    BackwardFn backward;                             // empty for leaves
    std::shared_ptr<std::vector<double>> leaf_grad;  // watched params only
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::vector<char> grad_set_;
  std::unordered_map<const void*, int> watched_;
  std::uint64_t id_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Op library. Every op runs eagerly and records itself on the tape when at
// least one input is tracked there; otherwise it returns a plain constant.
// Binary ops broadcast a scalar or a trailing-axis vector, nothing wider.
// ---------------------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor div(Tape& tape, const Tensor& a, const Tensor& b);

Tensor neg(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor tanh(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
Tensor exp(Tape& tape, const Tensor& x);
Tensor log1p(Tape& tape, const Tensor& x);
Tensor softplus(Tape& tape, const Tensor& x);

// Reductions. Without an axis the whole tensor reduces to a scalar.
// mean distributes 1/N in backward; max routes the gradient to the first
// maximal element on ties.
Tensor reduce_sum(Tape& tape, const Tensor& x, std::optional<std::size_t> axis = {});
Tensor reduce_mean(Tape& tape, const Tensor& x, std::optional<std::size_t> axis = {});
Tensor reduce_max(Tape& tape, const Tensor& x, std::optional<std::size_t> axis = {});

// Max-subtraction form; rows along `axis` sum to one (softmax) /
// logsumexp to zero (log_softmax).
Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis);
Tensor log_softmax(Tape& tape, const Tensor& x, std::size_t axis);

// Structural ops on rank-2 tensors.
Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b);
Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t start, std::size_t len);

// T tensors of shape [B,N] stacked into [B,T,N].
Tensor stack_time(Tape& tape, const std::vector<Tensor>& steps);

// Same data, new shape. Gradient passes through untouched.
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

// Row-wise normalization over the last axis with learnable affine.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps = 1e-5);

// Scalar node with a caller-supplied analytic gradient w.r.t. `input`.
// Used for losses whose gradient is computed by a dedicated recursion.
Tensor custom_scalar(Tape& tape, const Tensor& input, double value,
                     std::vector<double> grad_wrt_input);

// Constant builders (never tracked).
// tile_rows: per-row scalars [m] tiled across n columns -> [m,n].
Tensor tile_rows(const std::vector<double>& row_values, std::size_t cols);

}  // namespace liquidbench
