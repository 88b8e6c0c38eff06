#include "cvla/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "cvla/errors.hpp"
#include "cvla/ops.hpp"

namespace cvla {

namespace detail {

template <typename T>
void Node<T>::accumulate_grad(const Tensor<T>& g) {
  if (!has_grad) {
    grad = g;
    has_grad = true;
  } else {
    cvla::accumulate(grad, g);
  }
}

}  // namespace detail

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<detail::Node<T>>();
  node->value = std::move(value);
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::leaf(Tensor<T> value) {
  auto node = std::make_shared<detail::Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  if (node_->has_grad) return node_->grad;
  return Tensor<T>(node_->value.dims());
}

template <typename T>
void backward(const Var<T>& objective) {
  if (!objective.valid() || objective.value().size() != 1) {
    throw ContractError("gradients need a scalar objective, got dims " +
                        (objective.valid() ? shape_string(objective.dims()) : "<none>"));
  }
  if (!objective.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  using NodePtr = detail::Node<T>*;
  std::vector<NodePtr> order;
  std::unordered_map<NodePtr, bool> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack{{objective.node().get(), 0}};
  visited[objective.node().get()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr parent = node->parents[next++].get();
      if (parent->requires_grad && !visited[parent]) {
        visited[parent] = true;
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  objective.node()->accumulate_grad(Tensor<T>::filled(objective.dims(), T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodePtr node = *it;
    if (node->backward && node->has_grad) node->backward(*node);
  }
}

template <typename T>
Var<T> ParamBinder<T>::operator()(const Tensor<double>& param) {
  auto found = bound_.find(&param);
  if (found != bound_.end()) return found->second;
  Tensor<T> value = param.template cast<T>();
  Var<T> var = track_ ? Var<T>::leaf(std::move(value)) : Var<T>::constant(std::move(value));
  bound_.emplace(&param, var);
  return var;
}

template <typename T>
Tensor<double> ParamBinder<T>::gradient(const Tensor<double>& param) const {
  auto found = bound_.find(&param);
  if (found == bound_.end()) return Tensor<double>(param.dims());
  return found->second.grad().template cast<double>();
}

namespace ad {

namespace {

template <typename T>
using NodeT = detail::Node<T>;

template <typename T>
Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs,
              std::function<void(NodeT<T>&)> fn) {
  auto node = std::make_shared<NodeT<T>>();
  node->value = std::move(value);
  for (const auto& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(fn);
  }
  return Var<T>(std::move(node));
}

template <typename T>
void push(NodeT<T>& parent, const Tensor<T>& g) {
  if (parent.requires_grad) parent.accumulate_grad(g);
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  return record<T>(cvla::matmul(a.value(), b.value()), {a, b}, [](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate_grad(cvla::matmul_bt(self.grad, pb.value));
    if (pb.requires_grad) pb.accumulate_grad(cvla::matmul_at(pa.value, self.grad));
  });
}

template <typename T>
Var<T> matmul_bt(const Var<T>& a, const Var<T>& b) {
  return record<T>(cvla::matmul_bt(a.value(), b.value()), {a, b}, [](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate_grad(cvla::matmul(self.grad, pb.value));
    if (pb.requires_grad) pb.accumulate_grad(cvla::matmul_at(self.grad, pa.value));
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return record<T>(cvla::add(a.value(), b.value()), {a, b}, [](NodeT<T>& self) {
    push(*self.parents[0], self.grad);
    push(*self.parents[1], self.grad);
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  return record<T>(cvla::add_bias(x.value(), bias.value()), {x, bias}, [](NodeT<T>& self) {
    push(*self.parents[0], self.grad);
    auto& pb = *self.parents[1];
    if (pb.requires_grad) pb.accumulate_grad(cvla::sum_rows(self.grad).reshaped(pb.value.dims()));
  });
}

template <typename T>
Var<T> mul_bias(const Var<T>& x, const Var<T>& scale) {
  return record<T>(cvla::mul_bias(x.value(), scale.value()), {x, scale}, [](NodeT<T>& self) {
    auto& px = *self.parents[0];
    auto& ps = *self.parents[1];
    const std::size_t m = px.value.dim(0), n = px.value.dim(1);
    if (px.requires_grad) {
      Tensor<T> dx(px.value.dims());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dx.at(i, j) = self.grad.at(i, j) * ps.value[j];
      px.accumulate_grad(dx);
    }
    if (ps.requires_grad) {
      Tensor<T> ds(ps.value.dims());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ds[j] += self.grad.at(i, j) * px.value.at(i, j);
      ps.accumulate_grad(ds);
    }
  });
}

template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  return record<T>(cvla::hadamard(a.value(), b.value()), {a, b}, [](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate_grad(cvla::hadamard(self.grad, pb.value));
    if (pb.requires_grad) pb.accumulate_grad(cvla::hadamard(self.grad, pa.value));
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return record<T>(cvla::scale(a.value(), s), {a}, [s](NodeT<T>& self) {
    push(*self.parents[0], cvla::scale(self.grad, s));
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  return record<T>(cvla::softmax_rows(x.value()), {x}, [](NodeT<T>& self) {
    const Tensor<T>& y = self.value;
    const Tensor<T>& dy = self.grad;
    Tensor<T> dx(y.dims());
    for (std::size_t i = 0; i < y.dim(0); ++i) {
      T inner = T(0);
      for (std::size_t j = 0; j < y.dim(1); ++j) inner += dy.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < y.dim(1); ++j) dx.at(i, j) = y.at(i, j) * (dy.at(i, j) - inner);
    }
    push(*self.parents[0], dx);
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  return record<T>(cvla::gelu(x.value()), {x}, [](NodeT<T>& self) {
    auto& px = *self.parents[0];
    push(px, cvla::hadamard(self.grad, cvla::gelu_derivative(px.value)));
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return record<T>(cvla::relu(x.value()), {x}, [](NodeT<T>& self) {
    auto& px = *self.parents[0];
    Tensor<T> dx(px.value.dims());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = px.value[i] > T(0) ? self.grad[i] : T(0);
    push(px, dx);
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape dims) {
  return record<T>(x.value().reshaped(std::move(dims)), {x}, [](NodeT<T>& self) {
    auto& px = *self.parents[0];
    push(px, self.grad.reshaped(px.value.dims()));
  });
}

template <typename T>
Var<T> slice_flat(const Var<T>& x, std::size_t offset, Shape dims) {
  const std::size_t count = shape_size(dims);
  if (offset + count > x.value().size()) {
    throw ShapeError("slice_flat: range [" + std::to_string(offset) + ", " +
                     std::to_string(offset + count) + ") exceeds " + shape_string(x.dims()));
  }
  const auto first = x.value().data().begin() + static_cast<std::ptrdiff_t>(offset);
  Tensor<T> value(std::move(dims), std::vector<T>(first, first + static_cast<std::ptrdiff_t>(count)));
  return record<T>(std::move(value), {x}, [offset](NodeT<T>& self) {
    auto& px = *self.parents[0];
    Tensor<T> dx(px.value.dims());
    std::copy(self.grad.data().begin(), self.grad.data().end(),
              dx.data().begin() + static_cast<std::ptrdiff_t>(offset));
    push(px, dx);
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  std::vector<Tensor<T>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  return record<T>(cvla::concat_rows(values), parts, [](NodeT<T>& self) {
    std::size_t offset = 0;
    for (auto& parent : self.parents) {
      const std::size_t count = parent->value.size();
      if (parent->requires_grad) {
        const auto first = self.grad.data().begin() + static_cast<std::ptrdiff_t>(offset);
        parent->accumulate_grad(Tensor<T>(
            parent->value.dims(), std::vector<T>(first, first + static_cast<std::ptrdiff_t>(count))));
      }
      offset += count;
    }
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> rows) {
  std::vector<std::size_t> index(rows.begin(), rows.end());
  return record<T>(cvla::gather_rows(x.value(), rows), {x},
                   [index = std::move(index)](NodeT<T>& self) {
                     auto& px = *self.parents[0];
                     if (!px.requires_grad) return;
                     const std::size_t d = px.value.dim(1);
                     Tensor<T> dx(px.value.dims());
                     for (std::size_t i = 0; i < index.size(); ++i)
                       for (std::size_t j = 0; j < d; ++j) dx.at(index[i], j) += self.grad.at(i, j);
                     px.accumulate_grad(dx);
                   });
}

template <typename T>
Var<T> group_mean_rows(const Var<T>& x, std::size_t group) {
  return record<T>(cvla::group_mean_rows(x.value(), group), {x}, [group](NodeT<T>& self) {
    auto& px = *self.parents[0];
    Tensor<T> dx(px.value.dims());
    const T inv = T(1) / static_cast<T>(group);
    for (std::size_t r = 0; r < dx.dim(0); ++r)
      for (std::size_t j = 0; j < dx.dim(1); ++j) dx.at(r, j) = self.grad.at(r / group, j) * inv;
    push(px, dx);
  });
}

template <typename T>
Var<T> grouped_scores(const Var<T>& q, const Var<T>& keys) {
  return record<T>(cvla::grouped_scores(q.value(), keys.value()), {q, keys}, [](NodeT<T>& self) {
    auto& pq = *self.parents[0];
    auto& pk = *self.parents[1];
    const std::size_t groups = pq.value.dim(0), d = pq.value.dim(1);
    const std::size_t per = pk.value.dim(0) / groups;
    Tensor<T> dq(pq.value.dims());
    Tensor<T> dk(pk.value.dims());
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t s = 0; s < per; ++s) {
        const T ds = self.grad.at(g, s);
        for (std::size_t j = 0; j < d; ++j) {
          dq.at(g, j) += ds * pk.value.at(g * per + s, j);
          dk.at(g * per + s, j) += ds * pq.value.at(g, j);
        }
      }
    push(pq, dq);
    push(pk, dk);
  });
}

template <typename T>
Var<T> grouped_mix(const Var<T>& weights, const Var<T>& values) {
  return record<T>(cvla::grouped_mix(weights.value(), values.value()), {weights, values},
                   [](NodeT<T>& self) {
                     auto& pw = *self.parents[0];
                     auto& pv = *self.parents[1];
                     const std::size_t groups = pw.value.dim(0), per = pw.value.dim(1);
                     const std::size_t d = pv.value.dim(1);
                     Tensor<T> dw(pw.value.dims());
                     Tensor<T> dv(pv.value.dims());
                     for (std::size_t g = 0; g < groups; ++g)
                       for (std::size_t s = 0; s < per; ++s)
                         for (std::size_t j = 0; j < d; ++j) {
                           dw.at(g, s) += self.grad.at(g, j) * pv.value.at(g * per + s, j);
                           dv.at(g * per + s, j) += pw.value.at(g, s) * self.grad.at(g, j);
                         }
                     push(pw, dw);
                     push(pv, dv);
                   });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = T(0);
  for (T v : x.value().data()) total += v;
  return record<T>(Tensor<T>({1}, {total}), {x}, [](NodeT<T>& self) {
    auto& px = *self.parents[0];
    push(px, Tensor<T>::filled(px.value.dims(), self.grad[0]));
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
  if (weights.dims() != x.dims()) {
    throw ShapeError("weighted_sum: weights " + shape_string(weights.dims()) + " vs " +
                     shape_string(x.dims()));
  }
  T total = T(0);
  for (std::size_t i = 0; i < weights.size(); ++i) total += x.value()[i] * weights[i];
  return record<T>(Tensor<T>({1}, {total}), {x}, [weights](NodeT<T>& self) {
    push(*self.parents[0], cvla::scale(weights, self.grad[0]));
  });
}

template <typename T>
Var<T> sum_squares(const Var<T>& x) {
  T total = T(0);
  for (T v : x.value().data()) total += v * v;
  return record<T>(Tensor<T>({1}, {total}), {x}, [](NodeT<T>& self) {
    auto& px = *self.parents[0];
    push(px, cvla::scale(px.value, T(2) * self.grad[0]));
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::size_t> labels) {
  const Tensor<T>& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_string(z.dims()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  Tensor<T> probs = cvla::softmax_rows(z);
  T loss = T(0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= z.dim(1)) throw ContractError("cross_entropy: label out of range");
    T peak = z.at(i, 0);
    for (std::size_t j = 1; j < z.dim(1); ++j) peak = std::max(peak, z.at(i, j));
    T total = T(0);
    for (std::size_t j = 0; j < z.dim(1); ++j) total += std::exp(z.at(i, j) - peak);
    loss += peak + std::log(total) - z.at(i, labels[i]);
  }
  const T batch = static_cast<T>(labels.size());
  std::vector<std::size_t> targets(labels.begin(), labels.end());
  return record<T>(Tensor<T>({1}, {loss / batch}), {logits},
                   [probs = std::move(probs), targets = std::move(targets), batch](NodeT<T>& self) {
                     Tensor<T> dz = probs;
                     for (std::size_t i = 0; i < targets.size(); ++i) dz.at(i, targets[i]) -= T(1);
                     push(*self.parents[0], cvla::scale(dz, self.grad[0] / batch));
                   });
}

}  // namespace ad

#define CVLA_INSTANTIATE_AD(T)                                                         \
  template struct detail::Node<T>;                                                    \
  template class Var<T>;                                                              \
  template class ParamBinder<T>;                                                      \
  template void backward(const Var<T>&);                                              \
  template Var<T> ad::matmul(const Var<T>&, const Var<T>&);                           \
  template Var<T> ad::matmul_bt(const Var<T>&, const Var<T>&);                        \
  template Var<T> ad::add(const Var<T>&, const Var<T>&);                              \
  template Var<T> ad::add_bias(const Var<T>&, const Var<T>&);                         \
  template Var<T> ad::mul_bias(const Var<T>&, const Var<T>&);                         \
  template Var<T> ad::hadamard(const Var<T>&, const Var<T>&);                         \
  template Var<T> ad::scale(const Var<T>&, T);                                        \
  template Var<T> ad::softmax_rows(const Var<T>&);                                    \
  template Var<T> ad::gelu(const Var<T>&);                                            \
  template Var<T> ad::relu(const Var<T>&);                                            \
  template Var<T> ad::reshape(const Var<T>&, Shape);                                  \
  template Var<T> ad::slice_flat(const Var<T>&, std::size_t, Shape);                  \
  template Var<T> ad::concat_rows(const std::vector<Var<T>>&);                        \
  template Var<T> ad::gather_rows(const Var<T>&, std::span<const std::size_t>);       \
  template Var<T> ad::group_mean_rows(const Var<T>&, std::size_t);                    \
  template Var<T> ad::grouped_scores(const Var<T>&, const Var<T>&);                   \
  template Var<T> ad::grouped_mix(const Var<T>&, const Var<T>&);                      \
  template Var<T> ad::sum(const Var<T>&);                                             \
  template Var<T> ad::weighted_sum(const Var<T>&, const Tensor<T>&);                  \
  template Var<T> ad::sum_squares(const Var<T>&);                                     \
  template Var<T> ad::cross_entropy(const Var<T>&, std::span<const std::size_t>);

CVLA_INSTANTIATE_AD(float)
CVLA_INSTANTIATE_AD(double)

#undef CVLA_INSTANTIATE_AD

}  // namespace cvla
