#pragma once

#include <vector>

#include "cvla/autodiff.hpp"
#include "cvla/mlp.hpp"
#include "cvla/tensor.hpp"

namespace cvla {

/// Per-token language embeddings [T×lang_dim]. An empty mask marks every token valid.
struct InstructionEmbedding {
  TensorD tokens;
  std::vector<bool> mask;
};

/// Mean of the valid instruction tokens, length lang_dim.
struct PooledInstruction {
  TensorD vector;
};

/// Per-query scale and shift, both [k×D].
struct FilmParams {
  TensorD gamma;
  TensorD beta;
};

/// Additive query offset for the local pathway, length D.
struct SrcInjection {
  TensorD vector;
};

/// Throws ContractError("no valid instruction tokens") for an empty or fully masked sequence.
PooledInstruction pool_instruction(const InstructionEmbedding& emb);

TensorD compute_task_embedding(const PooledInstruction& pooled, const Mlp& mlp_task);

/// Splits the MLP output row-major: first k·D entries are gamma, the rest beta.
FilmParams compute_film(const TensorD& task_embedding, const Mlp& mlp_film, std::size_t k,
                        std::size_t d);

SrcInjection compute_src_injection(const PooledInstruction& pooled, const Mlp& mlp_src);

template <typename T>
struct FilmVars {
  Var<T> gamma;
  Var<T> beta;
};

/// Splits a flat [2·rows·d] modulation vector into scale and shift halves of [rows×d].
template <typename T>
FilmVars<T> split_film(const Var<T>& flat, std::size_t rows, std::size_t d);

template <typename T>
FilmVars<T> film_forward(const Var<T>& task_embedding, const Mlp& mlp_film, std::size_t k,
                         std::size_t d, ParamBinder<T>& bind);

}  // namespace cvla
