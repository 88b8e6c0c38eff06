#include "cvla/src.hpp"

#include <sstream>

#include "cvla/errors.hpp"
#include "cvla/ops.hpp"

namespace cvla {

std::vector<std::size_t> valid_windows(std::size_t h, std::size_t w) {
  std::vector<std::size_t> out;
  for (std::size_t c = 1; c <= std::min(h, w); ++c)
    if (h % c == 0 && w % c == 0) out.push_back(c);
  return out;
}

void require_window(std::size_t h, std::size_t w_grid, std::size_t window) {
  if (window != 0 && h % window == 0 && w_grid % window == 0) return;
  std::ostringstream msg;
  msg << "window size " << window << " does not tile a " << h << "x" << w_grid
      << " grid; valid w: {";
  const auto valid = valid_windows(h, w_grid);
  for (std::size_t i = 0; i < valid.size(); ++i) msg << (i ? ", " : "") << valid[i];
  msg << "}";
  throw ContractError(msg.str());
}

std::vector<std::size_t> window_order(std::size_t h, std::size_t w_grid, std::size_t window) {
  require_window(h, w_grid, window);
  std::vector<std::size_t> rows;
  rows.reserve(h * w_grid);
  for (std::size_t wr = 0; wr < h / window; ++wr)
    for (std::size_t wc = 0; wc < w_grid / window; ++wc)
      for (std::size_t r = 0; r < window; ++r)
        for (std::size_t c = 0; c < window; ++c)
          rows.push_back((wr * window + r) * w_grid + wc * window + c);
  return rows;
}

namespace {

void require_grid(const TensorD& grid) {
  if (grid.rank() != 3 || grid.dim(0) == 0 || grid.dim(1) == 0) {
    throw ShapeError("feature grid must be [H x W x D] with H, W >= 1, got " +
                     shape_string(grid.dims()));
  }
}

void require_square_window(const TensorD& win) {
  if (win.rank() != 3 || win.dim(0) != win.dim(1) || win.dim(0) == 0) {
    throw ShapeError("window must be [w x w x D], got " + shape_string(win.dims()));
  }
}

}  // namespace

std::vector<TensorD> partition_windows(const FeatureGrid& grid, std::size_t w) {
  require_grid(grid.grid);
  const std::size_t d = grid.channels();
  const auto rows = window_order(grid.height(), grid.width(), w);
  const TensorD gathered = gather_rows(grid.tokens(), rows);
  std::vector<TensorD> out;
  const std::size_t per = w * w * d;
  for (std::size_t start = 0; start < gathered.size(); start += per) {
    out.emplace_back(Shape{w, w, d}, std::vector<double>(gathered.data().begin() + start,
                                                         gathered.data().begin() + start + per));
  }
  return out;
}

TensorD downsample_window(const TensorD& win) {
  require_square_window(win);
  const std::size_t s = win.dim(0) * win.dim(1);
  return group_mean_rows(win.reshaped({s, win.dim(2)}), s).reshaped({win.dim(2)});
}

template <typename T>
AttentionVars<T> src_view_forward(const SrcParams& params, const Var<T>& x, std::size_t h,
                                  std::size_t w_grid, std::size_t window,
                                  const QueryModulation<T>& mod, ParamBinder<T>& bind) {
  if (x.value().rank() != 2 || x.dims()[0] != h * w_grid) {
    throw ShapeError("local pathway expects " + std::to_string(h * w_grid) +
                     " tokens, got " + shape_string(x.dims()));
  }
  const std::size_t s = window * window, d = x.dims()[1];
  const auto order = window_order(h, w_grid, window);
  const Var<T> windows = ad::gather_rows(x, order);  // [N′·s×D]
  Var<T> q = ad::group_mean_rows(windows, s);       // [N′×D]
  if (mod.scale) q = ad::mul_bias(q, *mod.scale);
  if (mod.shift) q = ad::add_bias(q, *mod.shift);
  q = project(params.proj, &AttentionProjections::q, q, bind);
  const Var<T> k = project(params.proj, &AttentionProjections::k, windows, bind);
  const Var<T> v = project(params.proj, &AttentionProjections::v, windows, bind);
  const Var<T> attn = ad::softmax_rows(ad::scale(ad::grouped_scores(q, k), attention_scale<T>(d)));
  return {project(params.proj, &AttentionProjections::o, ad::grouped_mix(attn, v), bind), attn};
}

template <typename T>
Var<T> src_injection(const SrcParams& params, const Var<T>& pooled, ParamBinder<T>& bind) {
  return mlp_forward(params.mlp_inject, pooled, bind);
}

template <typename T>
FilmVars<T> src_film(const SrcParams& params, const Var<T>& pooled, ParamBinder<T>& bind) {
  const Var<T> flat = mlp_forward(params.mlp_film, pooled, bind);
  const std::size_t d = flat.value().size() / 2;
  const FilmVars<T> film = split_film(flat, 1, d);
  return {ad::reshape(film.gamma, {d}), ad::reshape(film.beta, {d})};
}

namespace {

QueryModulation<double> additive(const SrcInjection& injection, bool guidance) {
  QueryModulation<double> mod;
  if (guidance) mod.shift = Var<double>::constant(injection.vector);
  return mod;
}

}  // namespace

WindowOutput src_window_forward(const TensorD& win, const SrcInjection& injection,
                                const SrcParams& params, bool guidance) {
  require_square_window(win);
  if (win.dim(0) != params.window) {
    throw ShapeError("window extent " + std::to_string(win.dim(0)) + " does not match w=" +
                     std::to_string(params.window));
  }
  ParamBinder<double> bind;
  const std::size_t w = win.dim(0);
  const auto out = src_view_forward(params, Var<double>::constant(win.reshaped({w * w, win.dim(2)})),
                                    w, w, w, additive(injection, guidance), bind);
  return {out.out.value().reshaped({win.dim(2)}), out.attn.value().reshaped({w * w})};
}

SrcOutput src_forward(const FeatureGrid& grid, const SrcInjection& injection,
                      const SrcParams& params, bool guidance) {
  require_grid(grid.grid);
  ParamBinder<double> bind;
  const auto out = src_view_forward(params, Var<double>::constant(grid.tokens()), grid.height(),
                                    grid.width(), params.window, additive(injection, guidance), bind);
  return {out.out.value(), out.attn.value()};
}

#define CVLA_INSTANTIATE_SRC(T)                                                              \
  template AttentionVars<T> src_view_forward(const SrcParams&, const Var<T>&, std::size_t,  \
                                             std::size_t, std::size_t,                      \
                                             const QueryModulation<T>&, ParamBinder<T>&);   \
  template Var<T> src_injection(const SrcParams&, const Var<T>&, ParamBinder<T>&);          \
  template FilmVars<T> src_film(const SrcParams&, const Var<T>&, ParamBinder<T>&);

CVLA_INSTANTIATE_SRC(float)
CVLA_INSTANTIATE_SRC(double)

#undef CVLA_INSTANTIATE_SRC

}  // namespace cvla
