#include "cvla/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cvla/binary_io.hpp"
#include "cvla/errors.hpp"

namespace cvla {

GrayImage quantize(const TensorD& map) {
  if (map.rank() != 2 || map.empty()) {
    throw ShapeError("heatmap needs a non-empty [rows x cols] map, got " + shape_string(map.dims()));
  }
  GrayImage image;
  image.height = map.dim(0);
  image.width = map.dim(1);
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  image.min = *lo;
  image.max = *hi;
  const double span = image.max - image.min;
  image.pixels.reserve(map.size());
  for (double v : map.data()) {
    const double level = span > 0.0 ? std::round((v - image.min) / span * (kGrayLevels - 1)) : 0.0;
    image.pixels.push_back(static_cast<std::uint8_t>(level));
  }
  return image;
}

std::vector<char> encode_pgm(const GrayImage& image) {
  std::ostringstream header;
  header.precision(17);
  header << "P5\n# linear gray: 0 = " << image.min << ", " << (kGrayLevels - 1) << " = " << image.max
         << "\n"
         << image.width << " " << image.height << "\n"
         << (kGrayLevels - 1) << "\n";
  const std::string text = header.str();
  std::vector<char> out(text.begin(), text.end());
  for (std::uint8_t p : image.pixels) out.push_back(static_cast<char>(p));
  return out;
}

TensorD tile_local_attention(const TensorD& attn_l, std::size_t h, std::size_t w_grid,
                             std::size_t window) {
  const std::size_t per_row = w_grid / window;
  if (attn_l.dims() != Shape{(h / window) * per_row, window * window}) {
    throw ShapeError("local attention " + shape_string(attn_l.dims()) + " does not fit a " +
                     std::to_string(h) + "x" + std::to_string(w_grid) + " grid with w=" +
                     std::to_string(window));
  }
  TensorD out({h, w_grid});
  for (std::size_t win = 0; win < attn_l.dim(0); ++win)
    for (std::size_t r = 0; r < window; ++r)
      for (std::size_t c = 0; c < window; ++c)
        out.at((win / per_row) * window + r, (win % per_row) * window + c) =
            attn_l.at(win, r * window + c);
  return out;
}

std::vector<std::filesystem::path> export_attention(const CompressedOutput& output,
                                                    const CompressionConfig& config,
                                                    const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create attention directory " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const TensorD& map) {
    const auto path = dir / name;
    write_file(path, encode_pgm(quantize(map)));
    written.push_back(path);
  };
  for (std::size_t v = 0; v < output.views.size(); ++v) {
    const ViewOutput& view = output.views[v];
    for (std::size_t q = 0; q < view.attn_g.dim(0); ++q) {
      TensorD map({config.h, config.width});
      for (std::size_t i = 0; i < map.size(); ++i) map[i] = view.attn_g.at(q, i);
      emit("view" + std::to_string(v) + "_query" + std::to_string(q) + ".pgm", map);
    }
    if (view.attn_l.dim(0) > 0) {
      emit("view" + std::to_string(v) + "_local.pgm",
           tile_local_attention(view.attn_l, config.h, config.width, config.w));
    }
  }
  return written;
}

}  // namespace cvla
