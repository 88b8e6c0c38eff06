#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "cvla/tensor.hpp"

namespace cvla {

namespace detail {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Pushes this node's grad into its parents' grads.
  std::function<void(Node&)> backward;

  void accumulate_grad(const Tensor<T>& g);
};

}  // namespace detail

/// Handle to a value in a reverse-mode computation graph.
///
/// Nodes only keep links to their inputs, so a graph is released as soon as the
/// last handle to its output goes away. Operations on values that do not require
/// gradients record nothing.
template <typename T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> value);
  /// A differentiable input; its gradient accumulates across backward() calls.
  static Var leaf(Tensor<T> value);

  bool valid() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& dims() const { return node_->value.dims(); }
  bool requires_grad() const { return node_->requires_grad; }
  /// Accumulated gradient, or zeros when backward never reached this value.
  Tensor<T> grad() const;

  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
  explicit Var(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

/// Propagates d(objective)/d(·) to every differentiable value reachable from objective.
/// Throws ContractError unless objective holds exactly one element.
template <typename T>
void backward(const Var<T>& objective);

/// Binds stored (double precision) parameters into a graph of element type T.
///
/// The same parameter tensor always maps to the same graph value, so gradients from
/// every use accumulate in one place. The binder keys on tensor addresses: the bound
/// parameters must stay put until gradients have been read.
template <typename T>
class ParamBinder {
 public:
  explicit ParamBinder(bool track_gradients = false) : track_(track_gradients) {}

  Var<T> operator()(const Tensor<double>& param);
  Tensor<double> gradient(const Tensor<double>& param) const;
  bool tracking() const { return track_; }

 private:
  bool track_;
  std::unordered_map<const Tensor<double>*, Var<T>> bound_;
};

namespace ad {

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// a · bᵀ
template <typename T>
Var<T> matmul_bt(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias);
/// x[m×n] ⊙ scale[n] broadcast over rows.
template <typename T>
Var<T> mul_bias(const Var<T>& x, const Var<T>& scale);
template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T s);
template <typename T>
Var<T> softmax_rows(const Var<T>& x);
template <typename T>
Var<T> gelu(const Var<T>& x);
template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> reshape(const Var<T>& x, Shape dims);
/// Elements [offset, offset + size(dims)) of x's row-major data, viewed as dims.
template <typename T>
Var<T> slice_flat(const Var<T>& x, std::size_t offset, Shape dims);
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> rows);
template <typename T>
Var<T> group_mean_rows(const Var<T>& x, std::size_t group);
template <typename T>
Var<T> grouped_scores(const Var<T>& q, const Var<T>& keys);
template <typename T>
Var<T> grouped_mix(const Var<T>& weights, const Var<T>& values);

template <typename T>
Var<T> sum(const Var<T>& x);
/// Σ x ⊙ weights for a fixed weight tensor of the same dims.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights);
template <typename T>
Var<T> sum_squares(const Var<T>& x);
/// Mean negative log-likelihood of labels under row-wise softmax(logits[B×C]).
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::size_t> labels);

}  // namespace ad

}  // namespace cvla
