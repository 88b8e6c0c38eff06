#include "cvla/stc.hpp"

#include "cvla/errors.hpp"

namespace cvla {

template <typename T>
Var<T> condition_queries(const Var<T>& queries, const FilmVars<T>& film) {
  if (film.gamma.dims() != queries.dims() || film.beta.dims() != queries.dims()) {
    throw ShapeError("FiLM parameters " + shape_string(film.gamma.dims()) + "/" +
                     shape_string(film.beta.dims()) + " do not match query bank " +
                     shape_string(queries.dims()));
  }
  return ad::add(ad::hadamard(film.gamma, queries), film.beta);
}

template <typename T>
AttentionVars<T> cross_attend(const Var<T>& q_con, const Var<T>& x,
                              const std::optional<AttentionProjections>& proj,
                              ParamBinder<T>& bind) {
  if (x.value().rank() != 2 || x.dims()[0] == 0) {
    if (x.value().rank() == 2) throw ContractError("empty visual sequence");
    throw ShapeError("visual tokens must be [N x D], got " + shape_string(x.dims()));
  }
  if (q_con.value().rank() != 2 || q_con.dims()[1] != x.dims()[1]) {
    throw ShapeError("queries " + shape_string(q_con.dims()) + " do not match visual tokens " +
                     shape_string(x.dims()));
  }
  const std::size_t d = x.dims()[1];
  const Var<T> q = project(proj, &AttentionProjections::q, q_con, bind);
  const Var<T> k = project(proj, &AttentionProjections::k, x, bind);
  const Var<T> v = project(proj, &AttentionProjections::v, x, bind);
  const Var<T> attn = ad::softmax_rows(ad::scale(ad::matmul_bt(q, k), attention_scale<T>(d)));
  return {project(proj, &AttentionProjections::o, ad::matmul(attn, v), bind), attn};
}

template <typename T>
FilmVars<T> stc_film(const StcParams& params, const Var<T>& pooled, ParamBinder<T>& bind) {
  const Var<T> task = mlp_forward(params.mlp_task, pooled, bind);
  return film_forward(task, params.mlp_film, params.k(), params.d(), bind);
}

template <typename T>
Var<T> stc_queries(const StcParams& params, const FilmVars<T>* film, ParamBinder<T>& bind) {
  const Var<T> queries = bind(params.queries);
  return film ? condition_queries(queries, *film) : queries;
}

TensorD condition_queries(const StcParams& params, const FilmParams& film) {
  return condition_queries(Var<double>::constant(params.queries),
                           FilmVars<double>{Var<double>::constant(film.gamma),
                                            Var<double>::constant(film.beta)})
      .value();
}

StcOutput cross_attend(const TensorD& q_con, const TensorD& x, const StcParams& params) {
  ParamBinder<double> bind;
  auto out = cross_attend(Var<double>::constant(q_con), Var<double>::constant(x), params.proj, bind);
  return {out.out.value(), out.attn.value()};
}

StcOutput stc_forward(const StcParams& params, const TensorD& x, const PooledInstruction& pooled,
                      bool guidance) {
  ParamBinder<double> bind;
  const Var<double> xv = Var<double>::constant(x);
  AttentionVars<double> out;
  if (guidance) {
    const FilmVars<double> film = stc_film(params, Var<double>::constant(pooled.vector), bind);
    out = cross_attend(stc_queries(params, &film, bind), xv, params.proj, bind);
  } else {
    out = cross_attend(stc_queries<double>(params, nullptr, bind), xv, params.proj, bind);
  }
  return {out.out.value(), out.attn.value()};
}

#define CVLA_INSTANTIATE_STC(T)                                                              \
  template Var<T> condition_queries(const Var<T>&, const FilmVars<T>&);                     \
  template AttentionVars<T> cross_attend(const Var<T>&, const Var<T>&,                      \
                                         const std::optional<AttentionProjections>&,        \
                                         ParamBinder<T>&);                                  \
  template FilmVars<T> stc_film(const StcParams&, const Var<T>&, ParamBinder<T>&);          \
  template Var<T> stc_queries(const StcParams&, const FilmVars<T>*, ParamBinder<T>&);

CVLA_INSTANTIATE_STC(float)
CVLA_INSTANTIATE_STC(double)

#undef CVLA_INSTANTIATE_STC

}  // namespace cvla
