#include "cvla/conditioning.hpp"

#include "cvla/errors.hpp"
#include "cvla/ops.hpp"

namespace cvla {

PooledInstruction pool_instruction(const InstructionEmbedding& emb) {
  const TensorD& tokens = emb.tokens;
  if (tokens.rank() != 2) {
    throw ShapeError("instruction tokens must be [T x lang_dim], got " + shape_string(tokens.dims()));
  }
  const std::size_t count = tokens.dim(0), width = tokens.dim(1);
  if (!emb.mask.empty() && emb.mask.size() != count) {
    throw ShapeError("instruction mask has " + std::to_string(emb.mask.size()) +
                     " entries for " + std::to_string(count) + " tokens");
  }
  std::size_t valid = 0;
  TensorD sum({width});
  for (std::size_t t = 0; t < count; ++t) {
    if (!emb.mask.empty() && !emb.mask[t]) continue;
    ++valid;
    for (std::size_t j = 0; j < width; ++j) sum[j] += tokens.at(t, j);
  }
  if (valid == 0) throw ContractError("no valid instruction tokens");
  for (double& v : sum.data()) v /= static_cast<double>(valid);
  FlopCounter::record(valid * width);
  return {std::move(sum)};
}

TensorD compute_task_embedding(const PooledInstruction& pooled, const Mlp& mlp_task) {
  return mlp_forward(mlp_task, pooled.vector);
}

template <typename T>
FilmVars<T> split_film(const Var<T>& flat, std::size_t rows, std::size_t d) {
  const std::size_t half = rows * d;
  if (flat.value().size() != 2 * half) {
    throw ShapeError("FiLM generator must emit 2*k*D = " + std::to_string(2 * half) +
                     " values, got " + std::to_string(flat.value().size()));
  }
  return {ad::slice_flat(flat, 0, {rows, d}), ad::slice_flat(flat, half, {rows, d})};
}

template <typename T>
FilmVars<T> film_forward(const Var<T>& task_embedding, const Mlp& mlp_film, std::size_t k,
                         std::size_t d, ParamBinder<T>& bind) {
  mlp_film.validate();
  if (mlp_film.out_features() != 2 * k * d) {
    throw ShapeError("FiLM generator must emit 2*k*D = " + std::to_string(2 * k * d) +
                     " values, got " + std::to_string(mlp_film.out_features()));
  }
  return split_film(mlp_forward(mlp_film, task_embedding, bind), k, d);
}

FilmParams compute_film(const TensorD& task_embedding, const Mlp& mlp_film, std::size_t k,
                        std::size_t d) {
  ParamBinder<double> bind;
  auto film = film_forward(Var<double>::constant(task_embedding), mlp_film, k, d, bind);
  return {film.gamma.value(), film.beta.value()};
}

SrcInjection compute_src_injection(const PooledInstruction& pooled, const Mlp& mlp_src) {
  return {mlp_forward(mlp_src, pooled.vector)};
}

template FilmVars<float> split_film(const Var<float>&, std::size_t, std::size_t);
template FilmVars<double> split_film(const Var<double>&, std::size_t, std::size_t);
template FilmVars<float> film_forward(const Var<float>&, const Mlp&, std::size_t, std::size_t,
                                      ParamBinder<float>&);
template FilmVars<double> film_forward(const Var<double>&, const Mlp&, std::size_t, std::size_t,
                                       ParamBinder<double>&);

}  // namespace cvla
