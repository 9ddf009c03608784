#pragma once

// Forward ops with their reverse-mode rules. All reductions run in a fixed
// sequential order so results are bitwise reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "crossvit/instrument.hpp"
#include "crossvit/tensor.hpp"

namespace crossvit {

namespace detail {

using ImplPtr = std::shared_ptr<TensorImpl>;

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_str(t.shape()));
}

// Splits `shape` around `axis` into (outer, length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};
inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline void check_axis(const Tensor& t, std::size_t axis, const char* op) {
  if (axis >= t.rank())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_str(t.shape()));
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions differ for " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  detail::tally_macs(static_cast<std::uint64_t>(m) * k * n);
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  auto ai = a.handle(), bi = b.handle();
  return Tensor::make_result(
      {m, n}, std::move(out), "matmul", {ai, bi}, [ai, bi, m, k, n](const std::vector<double>& g) {
        if (ai->requires_grad) {
          // dA = G * B^T, accumulated row-wise over a transposed copy of B.
          std::vector<double> bt(n * k);
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = bi->data[p * n + j];
          auto& ga = ai->grad_buffer();
          for (std::size_t i = 0; i < m; ++i) {
            double* dst = ga.data() + i * k;
            for (std::size_t j = 0; j < n; ++j) {
              const double gv = g[i * n + j];
              const double* src = bt.data() + j * k;
              for (std::size_t p = 0; p < k; ++p) dst[p] += gv * src[p];
            }
          }
        }
        if (bi->requires_grad) {
          // dB = A^T * G
          auto& gb = bi->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double av = ai->data[i * k + p];
              double* dst = gb.data() + p * n;
              const double* src = g.data() + i * n;
              for (std::size_t j = 0; j < n; ++j) dst[j] += av * src[j];
            }
        }
      });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  const auto X = x.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = X[i * c + j];
  auto xi = x.handle();
  return Tensor::make_result({c, r}, std::move(out), "transpose", {xi},
                             [xi, r, c](const std::vector<double>& g) {
                               auto& gx = xi->grad_buffer();
                               for (std::size_t i = 0; i < r; ++i)
                                 for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
                             });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shapes differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const std::size_t n = a.numel();
  detail::tally_elementwise(n);
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = A[i] + B[i];
  auto ai = a.handle(), bi = b.handle();
  return Tensor::make_result(a.shape(), std::move(out), "add", {ai, bi},
                             [ai, bi, n](const std::vector<double>& g) {
                               for (auto* p : {ai.get(), bi.get()}) {
                                 if (!p->requires_grad) continue;
                                 auto& gp = p->grad_buffer();
                                 for (std::size_t i = 0; i < n; ++i) gp[i] += g[i];
                               }
                             });
}

// x[..., n] + bias[n], broadcast over all leading positions.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.shape().back();
  if (bias.numel() != n)
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                     shape_str(x.shape()));
  const std::size_t rows = x.numel() / n;
  detail::tally_elementwise(x.numel());
  const auto X = x.data();
  const auto B = bias.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = X[r * n + j] + B[j];
  auto xi = x.handle(), bi = bias.handle();
  return Tensor::make_result(x.shape(), std::move(out), "add_bias", {xi, bi},
                             [xi, bi, rows, n](const std::vector<double>& g) {
                               if (xi->requires_grad) {
                                 auto& gx = xi->grad_buffer();
                                 for (std::size_t i = 0; i < rows * n; ++i) gx[i] += g[i];
                               }
                               if (bi->requires_grad) {
                                 auto& gb = bi->grad_buffer();
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                               }
                             });
}

inline Tensor scale(const Tensor& x, double s) {
  const std::size_t n = x.numel();
  detail::tally_elementwise(n);
  const auto X = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = X[i] * s;
  auto xi = x.handle();
  return Tensor::make_result(x.shape(), std::move(out), "scale", {xi},
                             [xi, n, s](const std::vector<double>& g) {
                               auto& gx = xi->grad_buffer();
                               for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * s;
                             });
}

// x * W + b with W stored [in x out]. `bias` may be undefined.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias) : y;
}

inline Tensor sum(const Tensor& x) {
  const std::size_t n = x.numel();
  detail::tally_elementwise(n);
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  auto xi = x.handle();
  return Tensor::make_result({1}, {acc}, "sum", {xi}, [xi, n](const std::vector<double>& g) {
    auto& gx = xi->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
  });
}

// Mean over the rows of a [m x n] matrix -> [1 x n].
inline Tensor mean_rows(const Tensor& x) {
  detail::require_rank(x, 2, "mean_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  detail::tally_elementwise(x.numel());
  const auto X = x.data();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += X[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  auto xi = x.handle();
  return Tensor::make_result({1, n}, std::move(out), "mean_rows", {xi},
                             [xi, m, n](const std::vector<double>& g) {
                               auto& gx = xi->grad_buffer();
                               const double w = 1.0 / static_cast<double>(m);
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j] * w;
                             });
}

inline Tensor softmax(const Tensor& x, std::size_t axis) {
  detail::check_axis(x, axis, "softmax");
  const auto s = detail::split_axis(x.shape(), axis);
  detail::tally_elementwise(x.numel());
  const auto X = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      double mx = X[base];
      for (std::size_t l = 1; l < s.length; ++l) mx = std::max(mx, X[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.length; ++l) {
        const double e = std::exp(X[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < s.length; ++l) out[base + l * s.inner] /= z;
    }
  auto xi = x.handle();
  auto y = std::make_shared<std::vector<double>>(out);
  return Tensor::make_result(x.shape(), std::move(out), "softmax", {xi},
                             [xi, y, s](const std::vector<double>& g) {
                               auto& gx = xi->grad_buffer();
                               const auto& Y = *y;
                               for (std::size_t o = 0; o < s.outer; ++o)
                                 for (std::size_t in = 0; in < s.inner; ++in) {
                                   const std::size_t base = o * s.length * s.inner + in;
                                   double dot = 0.0;
                                   for (std::size_t l = 0; l < s.length; ++l) {
                                     const std::size_t i = base + l * s.inner;
                                     dot += g[i] * Y[i];
                                   }
                                   for (std::size_t l = 0; l < s.length; ++l) {
                                     const std::size_t i = base + l * s.inner;
                                     gx[i] += Y[i] * (g[i] - dot);
                                   }
                                 }
                             });
}

// Normalizes each length-C row of x, then applies gamma/beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-6) {
  const std::size_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / c;
  detail::tally_elementwise(x.numel());
  const auto X = x.data();
  const auto G = gamma.data();
  const auto Bt = beta.data();
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = X.data() + r * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mean) * is;
      (*xhat)[r * c + j] = h;
      out[r * c + j] = h * G[j] + Bt[j];
    }
  }
  auto xi = x.handle(), gi = gamma.handle(), bi = beta.handle();
  return Tensor::make_result(
      x.shape(), std::move(out), "layer_norm", {xi, gi, bi},
      [xi, gi, bi, xhat, inv_std, rows, c](const std::vector<double>& g) {
        const auto& H = *xhat;
        if (gi->requires_grad) {
          auto& gg = gi->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * H[r * c + j];
        }
        if (bi->requires_grad) {
          auto& gb = bi->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
        }
        if (xi->requires_grad) {
          auto& gx = xi->grad_buffer();
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0, mean_dh = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g[r * c + j] * gi->data[j];
              mean_d += d;
              mean_dh += d * H[r * c + j];
            }
            mean_d *= inv_c;
            mean_dh *= inv_c;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g[r * c + j] * gi->data[j];
              gx[r * c + j] += (*inv_std)[r] * (d - mean_d - H[r * c + j] * mean_dh);
            }
          }
        }
      });
}

// tanh-approximated GELU.
inline Tensor gelu(const Tensor& x) {
  constexpr double k = 0.044715;
  const double s = std::sqrt(2.0 / std::numbers::pi);
  const std::size_t n = x.numel();
  detail::tally_elementwise(n);
  const auto X = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = X[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(s * (v + k * v * v * v)));
  }
  auto xi = x.handle();
  return Tensor::make_result(x.shape(), std::move(out), "gelu", {xi},
                             [xi, n, s](const std::vector<double>& g) {
                               auto& gx = xi->grad_buffer();
                               for (std::size_t i = 0; i < n; ++i) {
                                 const double v = xi->data[i];
                                 const double t = std::tanh(s * (v + k * v * v * v));
                                 const double d = 0.5 * (1.0 + t) +
                                                  0.5 * v * (1.0 - t * t) * s * (1.0 + 3.0 * k * v * v);
                                 gx[i] += g[i] * d;
                               }
                             });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  detail::check_axis(parts[0], axis, "concat");
  Shape shape = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == shape.size();
    for (std::size_t d = 0; ok && d < shape.size(); ++d)
      ok = d == axis || p.dim(d) == shape[d];
    if (!ok)
      throw ShapeError("concat: " + shape_str(p.shape()) + " incompatible with " +
                       shape_str(shape) + " along axis " + std::to_string(axis));
    total += p.dim(axis);
  }
  shape[axis] = total;
  const auto s = detail::split_axis(shape, axis);
  std::vector<double> out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::vector<detail::ImplPtr> impls;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.dim(axis) * s.inner;
    const auto P = p.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(P.data() + o * chunk, chunk, out.data() + o * total * s.inner + offset);
    offsets.push_back(offset);
    impls.push_back(p.handle());
    offset += chunk;
  }
  auto parents = impls;
  return Tensor::make_result(
      std::move(shape), std::move(out), "concat", std::move(parents),
      [impls, offsets, s, total](const std::vector<double>& g) {
        for (std::size_t t = 0; t < impls.size(); ++t) {
          auto* p = impls[t].get();
          if (!p->requires_grad) continue;
          auto& gp = p->grad_buffer();
          const std::size_t chunk = p->data.size() / s.outer;
          for (std::size_t o = 0; o < s.outer; ++o) {
            const double* src = g.data() + o * total * s.inner + offsets[t];
            double* dst = gp.data() + o * chunk;
            for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
          }
        }
      });
}

// Elements [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  detail::check_axis(x, axis, "slice");
  if (begin >= end || end > x.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for axis " + std::to_string(axis) + " of " +
                     shape_str(x.shape()));
  const auto s = detail::split_axis(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * s.inner;
  const std::size_t stride = s.length * s.inner;
  const std::size_t start = begin * s.inner;
  const auto X = x.data();
  std::vector<double> out(s.outer * chunk);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(X.data() + o * stride + start, chunk, out.data() + o * chunk);
  auto xi = x.handle();
  return Tensor::make_result(std::move(shape), std::move(out), "slice", {xi},
                             [xi, s, chunk, stride, start](const std::vector<double>& g) {
                               auto& gx = xi->grad_buffer();
                               for (std::size_t o = 0; o < s.outer; ++o)
                                 for (std::size_t i = 0; i < chunk; ++i)
                                   gx[o * stride + start + i] += g[o * chunk + i];
                             });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  auto xi = x.handle();
  const std::size_t n = x.numel();
  return Tensor::make_result(std::move(shape), std::move(out), "reshape", {xi},
                             [xi, n](const std::vector<double>& g) {
                               auto& gx = xi->grad_buffer();
                               for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
                             });
}

// Gathers k x k windows of a channel-last grid into rows.
//   x: [height*width x channels] -> [out_h*out_w x k*k*channels]
// Column order is (ky, kx, channel), channel innermost. Out-of-bounds
// (padding) positions read zero.
struct ConvGeometry {
  std::size_t height, width, channels, kernel, stride, pad;
  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

inline Tensor im2col(const Tensor& x, const ConvGeometry& geo) {
  detail::require_rank(x, 2, "im2col");
  if (x.dim(0) != geo.height * geo.width || x.dim(1) != geo.channels)
    throw ShapeError("im2col: input " + shape_str(x.shape()) + " is not a " +
                     std::to_string(geo.height) + "x" + std::to_string(geo.width) + " grid of " +
                     std::to_string(geo.channels) + " channels");
  if (geo.kernel == 0 || geo.stride == 0 || geo.height + 2 * geo.pad < geo.kernel ||
      geo.width + 2 * geo.pad < geo.kernel)
    throw ShapeError("im2col: kernel does not fit the padded input");
  const std::size_t oh = geo.out_height(), ow = geo.out_width();
  const std::size_t cols = geo.kernel * geo.kernel * geo.channels;
  // Source row index per (output position, kernel tap); -1 for padding.
  auto src = std::make_shared<std::vector<long>>(oh * ow * geo.kernel * geo.kernel, -1);
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t ky = 0; ky < geo.kernel; ++ky)
        for (std::size_t kx = 0; kx < geo.kernel; ++kx) {
          const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.pad);
          const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.pad);
          if (iy < 0 || ix < 0 || iy >= static_cast<long>(geo.height) ||
              ix >= static_cast<long>(geo.width))
            continue;
          (*src)[((oy * ow + ox) * geo.kernel + ky) * geo.kernel + kx] =
              iy * static_cast<long>(geo.width) + ix;
        }
  const std::size_t c = geo.channels;
  const std::size_t taps = geo.kernel * geo.kernel;
  const auto X = x.data();
  std::vector<double> out(oh * ow * cols, 0.0);
  for (std::size_t r = 0; r < oh * ow; ++r)
    for (std::size_t t = 0; t < taps; ++t) {
      const long s = (*src)[r * taps + t];
      if (s >= 0) std::copy_n(X.data() + s * c, c, out.data() + r * cols + t * c);
    }
  auto xi = x.handle();
  const std::size_t rows = oh * ow;
  return Tensor::make_result({rows, cols}, std::move(out), "im2col", {xi},
                             [xi, src, rows, taps, c, cols](const std::vector<double>& g) {
                               auto& gx = xi->grad_buffer();
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t t = 0; t < taps; ++t) {
                                   const long s = (*src)[r * taps + t];
                                   if (s < 0) continue;
                                   for (std::size_t ch = 0; ch < c; ++ch)
                                     gx[s * c + ch] += g[r * cols + t * c + ch];
                                 }
                             });
}

// Fixed linear mixing of rows: out[i] = sum_j w_ij * x[j]. Used for grid
// interpolation, where each output row touches a few input rows.
struct RowMix {
  std::size_t in_rows = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;
};

inline Tensor mix_rows(const Tensor& x, const RowMix& mix) {
  detail::require_rank(x, 2, "mix_rows");
  if (x.dim(0) != mix.in_rows)
    throw ShapeError("mix_rows: expected " + std::to_string(mix.in_rows) + " rows, got " +
                     shape_str(x.shape()));
  const std::size_t d = x.dim(1);
  const std::size_t out_rows = mix.rows.size();
  detail::tally_elementwise(out_rows * d);
  const auto X = x.data();
  std::vector<double> out(out_rows * d, 0.0);
  for (std::size_t i = 0; i < out_rows; ++i)
    for (const auto& [j, w] : mix.rows[i])
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += w * X[j * d + c];
  auto xi = x.handle();
  auto weights = std::make_shared<RowMix>(mix);
  return Tensor::make_result({out_rows, d}, std::move(out), "mix_rows", {xi},
                             [xi, weights, d](const std::vector<double>& g) {
                               auto& gx = xi->grad_buffer();
                               for (std::size_t i = 0; i < weights->rows.size(); ++i)
                                 for (const auto& [j, w] : weights->rows[i])
                                   for (std::size_t c = 0; c < d; ++c) gx[j * d + c] += w * g[i * d + c];
                             });
}

// Softmax cross-entropy of a logit vector against an integer label.
inline Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  const std::size_t k = logits.numel();
  if (label >= k)
    throw ShapeError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     shape_str(logits.shape()));
  const auto Z = logits.data();
  const double mx = *std::max_element(Z.begin(), Z.end());
  double z = 0.0;
  for (double v : Z) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  auto probs = std::make_shared<std::vector<double>>(k);
  for (std::size_t i = 0; i < k; ++i) (*probs)[i] = std::exp(Z[i] - lse);
  auto li = logits.handle();
  return Tensor::make_result({1}, {lse - Z[label]}, "cross_entropy", {li},
                             [li, probs, label, k](const std::vector<double>& g) {
                               auto& gl = li->grad_buffer();
                               for (std::size_t i = 0; i < k; ++i)
                                 gl[i] += g[0] * ((*probs)[i] - (i == label ? 1.0 : 0.0));
                             });
}

}  // namespace crossvit
