#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cvla/attention.hpp"
#include "cvla/conditioning.hpp"
#include "cvla/stc.hpp"

namespace cvla {

/// One view's encoder output [H×W×D].
struct FeatureGrid {
  TensorD grid;
  std::string view_id;

  std::size_t height() const { return grid.dim(0); }
  std::size_t width() const { return grid.dim(1); }
  std::size_t channels() const { return grid.dim(2); }
  /// Row-major [H·W×D] token view.
  TensorD tokens() const { return grid.reshaped({height() * width(), channels()}); }
};

/// Local pathway state.
struct SrcParams {
  std::optional<AttentionProjections> proj;
  Mlp mlp_inject;  // lang_dim → D
  Mlp mlp_film;    // lang_dim → 2D, used only by the FiLM-modulated variant
  std::size_t window = 2;
};

struct SrcOutput {
  TensorD z_l;   // [N′×D], windows in row-major order
  TensorD attn;  // [N′×w²]
};

struct WindowOutput {
  TensorD z;     // [D]
  TensorD attn;  // [w²]
};

/// How the instruction reaches the window queries.
template <typename T>
struct QueryModulation {
  std::optional<Var<T>> shift;  // added to every window query
  std::optional<Var<T>> scale;  // multiplies every window query before the shift
};

/// Valid window sizes for an H×W grid: the common divisors of H and W.
std::vector<std::size_t> valid_windows(std::size_t h, std::size_t w);
/// Throws ContractError listing the valid sizes when w does not tile the grid.
void require_window(std::size_t h, std::size_t w_grid, std::size_t window);

/// Row indices into the flattened grid, window by window, row-major within each window.
std::vector<std::size_t> window_order(std::size_t h, std::size_t w_grid, std::size_t window);

std::vector<TensorD> partition_windows(const FeatureGrid& grid, std::size_t w);
/// Mean over the w² positions of a [w×w×D] window.
TensorD downsample_window(const TensorD& win);
WindowOutput src_window_forward(const TensorD& win, const SrcInjection& injection,
                                const SrcParams& params, bool guidance);
SrcOutput src_forward(const FeatureGrid& grid, const SrcInjection& injection,
                      const SrcParams& params, bool guidance);

/// Local summaries for one view given as x[H·W×D], using window size `window`.
template <typename T>
AttentionVars<T> src_view_forward(const SrcParams& params, const Var<T>& x, std::size_t h,
                                  std::size_t w_grid, std::size_t window,
                                  const QueryModulation<T>& mod, ParamBinder<T>& bind);

/// Additive injection E′_L as a length-D vector.
template <typename T>
Var<T> src_injection(const SrcParams& params, const Var<T>& pooled, ParamBinder<T>& bind);

/// Per-channel scale and shift (each length D) for the FiLM-modulated variant.
template <typename T>
FilmVars<T> src_film(const SrcParams& params, const Var<T>& pooled, ParamBinder<T>& bind);

}  // namespace cvla
