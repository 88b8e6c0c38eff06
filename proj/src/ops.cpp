#include "cvla/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cvla/errors.hpp"

namespace cvla {

namespace {

thread_local FlopCounter* active_counter = nullptr;

void require_rank(const Shape& dims, std::size_t rank, const char* op) {
  if (dims.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(dims));
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": dims " + shape_string(a) + " and " + shape_string(b) +
                     " differ");
  }
}

}  // namespace

FlopCounter::FlopCounter() : previous_(active_counter) { active_counter = this; }

FlopCounter::~FlopCounter() { active_counter = previous_; }

void FlopCounter::record(std::uint64_t flops) {
  if (active_counter) active_counter->total_ += flops;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.dims(), 2, "matmul");
  require_rank(b.dims(), 2, "matmul");
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  if (b.dim(0) != n) {
    throw ShapeError("matmul: inner extents differ, " + shape_string(a.dims()) + " x " +
                     shape_string(b.dims()));
  }
  Tensor<T> out({m, p});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  // Accumulation into out[i, j] runs over t in ascending order.
  for (std::size_t i = 0; i < m; ++i) {
    T* row = po + i * p;
    for (std::size_t t = 0; t < n; ++t) {
      const T av = pa[i * n + t];
      const T* brow = pb + t * p;
      for (std::size_t j = 0; j < p; ++j) row[j] += av * brow[j];
    }
  }
  FlopCounter::record(2 * m * n * p);
  return out;
}

template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.dims(), 2, "matmul_bt");
  require_rank(b.dims(), 2, "matmul_bt");
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(0);
  if (b.dim(1) != n) {
    throw ShapeError("matmul_bt: inner extents differ, " + shape_string(a.dims()) + " x " +
                     shape_string(b.dims()) + "^T");
  }
  Tensor<T> out({m, p});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      T acc = T(0);
      for (std::size_t t = 0; t < n; ++t) acc += pa[i * n + t] * pb[j * n + t];
      out.at(i, j) = acc;
    }
  }
  FlopCounter::record(2 * m * n * p);
  return out;
}

template <typename T>
Tensor<T> matmul_at(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.dims(), 2, "matmul_at");
  require_rank(b.dims(), 2, "matmul_at");
  const std::size_t n = a.dim(0), m = a.dim(1), p = b.dim(1);
  if (b.dim(0) != n) {
    throw ShapeError("matmul_at: inner extents differ, " + shape_string(a.dims()) + "^T x " +
                     shape_string(b.dims()));
  }
  Tensor<T> out({m, p});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t i = 0; i < m; ++i) {
      const T av = pa[t * m + i];
      T* row = po + i * p;
      const T* brow = pb + t * p;
      for (std::size_t j = 0; j < p; ++j) row[j] += av * brow[j];
    }
  }
  FlopCounter::record(2 * m * n * p);
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a.dims(), 2, "transpose");
  Tensor<T> out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.dims(), b.dims(), "add");
  Tensor<T> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  FlopCounter::record(a.size());
  return out;
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.dims(), b.dims(), "hadamard");
  Tensor<T> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  FlopCounter::record(a.size());
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  FlopCounter::record(a.size());
  return out;
}

template <typename T>
void accumulate(Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.dims(), b.dims(), "accumulate");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(x.dims(), 2, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.size() != n) {
    throw ShapeError("add_bias: bias " + shape_string(bias.dims()) + " does not match rows of " +
                     shape_string(x.dims()));
  }
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + bias[j];
  FlopCounter::record(m * n);
  return out;
}

template <typename T>
Tensor<T> mul_bias(const Tensor<T>& x, const Tensor<T>& scale) {
  require_rank(x.dims(), 2, "mul_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (scale.size() != n) {
    throw ShapeError("mul_bias: scale " + shape_string(scale.dims()) + " does not match rows of " +
                     shape_string(x.dims()));
  }
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) * scale[j];
  FlopCounter::record(m * n);
  return out;
}

template <typename T>
Tensor<T> sum_rows(const Tensor<T>& x) {
  require_rank(x.dims(), 2, "sum_rows");
  Tensor<T> out({x.dim(1)});
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t j = 0; j < x.dim(1); ++j) out[j] += x.at(i, j);
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_rank(x.dims(), 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < m; ++i) {
    T peak = x.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) peak = std::max(peak, x.at(i, j));
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      out.at(i, j) = std::exp(x.at(i, j) - peak);
      total += out.at(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= total;
  }
  FlopCounter::record(kSoftmaxFlopsPerElement * m * n);
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.dims());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
  FlopCounter::record(kGeluFlopsPerElement * x.size());
  return out;
}

template <typename T>
Tensor<T> gelu_derivative(const Tensor<T>& x) {
  Tensor<T> out(x.dims());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  const T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
    const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
    out[i] = cdf + x[i] * pdf;
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  FlopCounter::record(x.size());
  return out;
}

template <typename T>
Tensor<T> group_mean_rows(const Tensor<T>& x, std::size_t group) {
  require_rank(x.dims(), 2, "group_mean_rows");
  if (group == 0 || x.dim(0) % group != 0) {
    throw ShapeError("group_mean_rows: " + std::to_string(x.dim(0)) +
                     " rows do not split into groups of " + std::to_string(group));
  }
  const std::size_t groups = x.dim(0) / group, d = x.dim(1);
  Tensor<T> out({groups, d});
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t s = 0; s < group; ++s)
      for (std::size_t j = 0; j < d; ++j) out.at(g, j) += x.at(g * group + s, j);
    for (std::size_t j = 0; j < d; ++j) out.at(g, j) /= static_cast<T>(group);
  }
  FlopCounter::record(groups * group * d);
  return out;
}

template <typename T>
Tensor<T> grouped_scores(const Tensor<T>& q, const Tensor<T>& keys) {
  require_rank(q.dims(), 2, "grouped_scores");
  require_rank(keys.dims(), 2, "grouped_scores");
  const std::size_t groups = q.dim(0), d = q.dim(1);
  if (keys.dim(1) != d || groups == 0 || keys.dim(0) % groups != 0) {
    throw ShapeError("grouped_scores: queries " + shape_string(q.dims()) + " vs keys " +
                     shape_string(keys.dims()));
  }
  const std::size_t per = keys.dim(0) / groups;
  Tensor<T> out({groups, per});
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t s = 0; s < per; ++s) {
      T acc = T(0);
      for (std::size_t j = 0; j < d; ++j) acc += q.at(g, j) * keys.at(g * per + s, j);
      out.at(g, s) = acc;
    }
  }
  FlopCounter::record(2 * groups * per * d);
  return out;
}

template <typename T>
Tensor<T> grouped_mix(const Tensor<T>& weights, const Tensor<T>& values) {
  require_rank(weights.dims(), 2, "grouped_mix");
  require_rank(values.dims(), 2, "grouped_mix");
  const std::size_t groups = weights.dim(0), per = weights.dim(1), d = values.dim(1);
  if (values.dim(0) != groups * per) {
    throw ShapeError("grouped_mix: weights " + shape_string(weights.dims()) + " vs values " +
                     shape_string(values.dims()));
  }
  Tensor<T> out({groups, d});
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t s = 0; s < per; ++s) {
      const T wv = weights.at(g, s);
      for (std::size_t j = 0; j < d; ++j) out.at(g, j) += wv * values.at(g * per + s, j);
    }
  FlopCounter::record(2 * groups * per * d);
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  require_rank(x.dims(), 2, "gather_rows");
  const std::size_t d = x.dim(1);
  Tensor<T> out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.dim(0)) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t d = parts.front().dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p.dims(), 2, "concat_rows");
    if (p.dim(1) != d) throw ShapeError("concat_rows: column extents differ");
    rows += p.dim(0);
  }
  std::vector<T> data;
  data.reserve(rows * d);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor<T>({rows, d}, std::move(data));
}

#define CVLA_INSTANTIATE_OPS(T)                                                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> matmul_bt(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> matmul_at(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> transpose(const Tensor<T>&);                                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> hadamard(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> scale(const Tensor<T>&, T);                                          \
  template void accumulate(Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> mul_bias(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> sum_rows(const Tensor<T>&);                                          \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                      \
  template Tensor<T> gelu(const Tensor<T>&);                                              \
  template Tensor<T> gelu_derivative(const Tensor<T>&);                                   \
  template Tensor<T> relu(const Tensor<T>&);                                              \
  template Tensor<T> group_mean_rows(const Tensor<T>&, std::size_t);                      \
  template Tensor<T> grouped_scores(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> grouped_mix(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);         \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);

CVLA_INSTANTIATE_OPS(float)
CVLA_INSTANTIATE_OPS(double)

#undef CVLA_INSTANTIATE_OPS

}  // namespace cvla
