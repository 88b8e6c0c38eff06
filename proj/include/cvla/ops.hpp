#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cvla/tensor.hpp"

namespace cvla {

// FLOP conventions shared by the kernel instrumentation and the analytic cost model.
// A multiply-accumulate is two FLOPs; elementwise arithmetic is one per output element.
inline constexpr std::uint64_t kSoftmaxFlopsPerElement = 5;
inline constexpr std::uint64_t kGeluFlopsPerElement = 8;

/// Tallies the FLOPs executed by the kernels below on this thread while alive.
/// Counters nest; only the innermost one receives counts.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::uint64_t total() const { return total_; }

  static void record(std::uint64_t flops);

 private:
  std::uint64_t total_ = 0;
  FlopCounter* previous_;
};

// Dense kernels. Sums always run left to right over the reduced axis.

/// a[m×n] · b[n×p]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a[m×n] · b[p×n]ᵀ
template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b);
/// a[n×m]ᵀ · b[n×p]
template <typename T>
Tensor<T> matmul_at(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);
/// Accumulates b into a in place (no FLOP accounting; used for gradient sums).
template <typename T>
void accumulate(Tensor<T>& a, const Tensor<T>& b);

/// x[m×n] + bias[n] broadcast over rows.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
/// x[m×n] ⊙ scale[n] broadcast over rows.
template <typename T>
Tensor<T> mul_bias(const Tensor<T>& x, const Tensor<T>& scale);
/// Column sums of x[m×n] as a rank-1 tensor of length n.
template <typename T>
Tensor<T> sum_rows(const Tensor<T>& x);

/// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
/// d gelu / dx evaluated at x.
template <typename T>
Tensor<T> gelu_derivative(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Means of consecutive row groups: x[G·S×D] → [G×D].
template <typename T>
Tensor<T> group_mean_rows(const Tensor<T>& x, std::size_t group);
/// scores[g, s] = q[g] · keys[g·S + s]; q[G×D], keys[G·S×D] → [G×S].
template <typename T>
Tensor<T> grouped_scores(const Tensor<T>& q, const Tensor<T>& keys);
/// out[g] = Σ_s weights[g, s] · values[g·S + s]; weights[G×S], values[G·S×D] → [G×D].
template <typename T>
Tensor<T> grouped_mix(const Tensor<T>& weights, const Tensor<T>& values);

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

}  // namespace cvla
