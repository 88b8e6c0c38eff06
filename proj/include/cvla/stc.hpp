#pragma once

#include <optional>

#include "cvla/attention.hpp"
#include "cvla/conditioning.hpp"

namespace cvla {

/// Global pathway state: the query bank plus the instruction-to-FiLM generators.
struct StcParams {
  TensorD queries;  // [k×D]
  std::optional<AttentionProjections> proj;
  Mlp mlp_task;  // lang_dim → 2D → D
  Mlp mlp_film;  // D → 2·k·D

  std::size_t k() const { return queries.dim(0); }
  std::size_t d() const { return queries.dim(1); }
};

struct StcOutput {
  TensorD z_g;   // [k×D]
  TensorD attn;  // [k×N], post-softmax
};

template <typename T>
struct AttentionVars {
  Var<T> out;
  Var<T> attn;
};

/// γ ⊙ Q + β.
TensorD condition_queries(const StcParams& params, const FilmParams& film);
StcOutput cross_attend(const TensorD& q_con, const TensorD& x, const StcParams& params);
/// guidance=false attends with the raw query bank and never evaluates the FiLM generators.
StcOutput stc_forward(const StcParams& params, const TensorD& x, const PooledInstruction& pooled,
                      bool guidance);

template <typename T>
Var<T> condition_queries(const Var<T>& queries, const FilmVars<T>& film);

/// softmax((q Wq)(x Wk)ᵀ / sqrt(D)) (x Wv), then Wo. x is [N×D].
template <typename T>
AttentionVars<T> cross_attend(const Var<T>& q_con, const Var<T>& x,
                              const std::optional<AttentionProjections>& proj,
                              ParamBinder<T>& bind);

/// The query bank, FiLM-conditioned unless film == nullptr. Shared by all views.
template <typename T>
Var<T> stc_queries(const StcParams& params, const FilmVars<T>* film, ParamBinder<T>& bind);

/// Task embedding and FiLM parameters from the pooled instruction.
template <typename T>
FilmVars<T> stc_film(const StcParams& params, const Var<T>& pooled, ParamBinder<T>& bind);

}  // namespace cvla
