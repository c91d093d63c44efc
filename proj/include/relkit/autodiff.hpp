#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "relkit/tensor.hpp"

namespace relkit::ad {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitive operations in execution order so the chain rule can be
/// replayed in reverse. A tape is single-use: `backward` consumes it.
class Tape {
 public:
  /// Receives the gradient flowing into the op's output.
  using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a trainable tensor. Repeated calls with the same tensor
  /// return the same node; backward accumulates into `param.grad()`.
  Var parameter(Tensor& param);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and walks the tape once in reverse order.
  void backward(Var loss);
  bool consumed() const { return consumed_; }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient that reached node `v`; zeros when the node was never reached.
  std::vector<double> grad(Var v) const;

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Accumulation buffer of a node, allocated on first use.
  std::span<double> grad_buffer(std::size_t id);

  std::size_t size() const { return nodes_.size(); }
  /// Node ids whose backward function ran, in the order they ran.
  const std::vector<std::size_t>& backward_trace() const { return trace_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool needs_grad = false;
    Tensor* param = nullptr;
    BackwardFn backward;
  };

  void check_open() const;
  void check_owner(const Var& v) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> param_nodes_;
  std::vector<std::size_t> trace_;
  bool consumed_ = false;
};

// Primitive differentiable ops. All operands are viewed as matrices
// (see Tensor::rows/cols); mismatched shapes throw DimensionError.

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// Adds a length-cols vector to every row.
Var add_row(Var a, Var row);
Var relu(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// Row i of the result is row idx[i] of `a`, or zeros when idx[i] < 0.
Var gather_rows(Var a, std::span<const std::ptrdiff_t> idx);
Var softmax_rows(Var a);
Var layer_norm_rows(Var a, Var gain, Var bias, double eps = 1e-5);
/// Euclidean norm of each row, as a column.
Var row_norms(Var a);
Var sum(Var a);
Var mean(Var a);
/// Mean over rows of -log softmax(row)[target].
Var cross_entropy(Var logits, std::span<const std::size_t> targets);
/// Mean logistic loss; `logits` holds one value per target.
Var binary_cross_entropy_with_logits(Var logits, std::span<const double> targets);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

}  // namespace relkit::ad
