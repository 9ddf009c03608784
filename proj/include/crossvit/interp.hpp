#pragma once

// Interpolation weights for token grids and images.
//
// Bilinear resampling uses half-pixel centers (corners not aligned), the
// usual image-resize convention. Bicubic resampling (Keys kernel, a = -0.75)
// aligns corners so that source knots land exactly on output samples when
// the grid is enlarged by an integer factor of (n - 1).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "crossvit/ops.hpp"

namespace crossvit {

struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

namespace interp {

using Taps = std::vector<std::pair<std::size_t, double>>;

inline std::vector<Taps> bilinear_1d(std::size_t in, std::size_t out) {
  std::vector<Taps> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = i0 + 1 < in ? i0 + 1 : in - 1;
    const double w1 = src - static_cast<double>(i0);
    taps[o] = {{i0, 1.0 - w1}, {i1, w1}};
  }
  return taps;
}

inline double cubic_weight(double x, double a = -0.75) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

inline std::vector<Taps> bicubic_1d(std::size_t in, std::size_t out) {
  std::vector<Taps> taps(out);
  const double ratio = out > 1 ? static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
  for (std::size_t o = 0; o < out; ++o) {
    const double src = static_cast<double>(o) * ratio;
    const double base = std::floor(src);
    const double t = src - base;
    for (int k = -1; k <= 2; ++k) {
      long idx = static_cast<long>(base) + k;
      idx = std::max(0L, std::min(idx, static_cast<long>(in) - 1));
      taps[o].emplace_back(static_cast<std::size_t>(idx), cubic_weight(t - k));
    }
  }
  return taps;
}

// Separable 2D weights mapping a row-major grid onto another.
inline RowMix grid_mix(const Grid& from, const Grid& to, bool bicubic) {
  const auto ty = bicubic ? bicubic_1d(from.rows, to.rows) : bilinear_1d(from.rows, to.rows);
  const auto tx = bicubic ? bicubic_1d(from.cols, to.cols) : bilinear_1d(from.cols, to.cols);
  RowMix mix;
  mix.in_rows = from.size();
  mix.rows.resize(to.size());
  for (std::size_t y = 0; y < to.rows; ++y)
    for (std::size_t x = 0; x < to.cols; ++x) {
      auto& row = mix.rows[y * to.cols + x];
      for (const auto& [iy, wy] : ty[y])
        for (const auto& [ix, wx] : tx[x]) row.emplace_back(iy * from.cols + ix, wy * wx);
    }
  return mix;
}

// Differentiable bilinear resize of [from.size() x C] grid tokens.
inline Tensor resize_tokens_bilinear(const Tensor& tokens, const Grid& from, const Grid& to) {
  if (from == to) return tokens;
  return mix_rows(tokens, grid_mix(from, to, false));
}

// Bilinear resize of a channel-planar image [channels x side x side].
inline std::vector<double> resize_image_bilinear(std::span<const double> image,
                                                 std::size_t channels, std::size_t side,
                                                 std::size_t new_side) {
  const auto ty = bilinear_1d(side, new_side);
  std::vector<double> out(channels * new_side * new_side, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = image.data() + c * side * side;
    double* dst = out.data() + c * new_side * new_side;
    for (std::size_t y = 0; y < new_side; ++y)
      for (std::size_t x = 0; x < new_side; ++x) {
        double acc = 0.0;
        for (const auto& [iy, wy] : ty[y])
          for (const auto& [ix, wx] : ty[x]) acc += wy * wx * plane[iy * side + ix];
        dst[y * new_side + x] = acc;
      }
  }
  return out;
}

}  // namespace interp
}  // namespace crossvit
