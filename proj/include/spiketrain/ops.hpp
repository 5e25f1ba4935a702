#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <vector>

#include "spiketrain/tensor.hpp"

// Dense kernels. All results are freshly allocated; inputs are never
// touched. Kernels are sequential; callers may run them concurrently on
// disjoint data.

namespace spiketrain {

enum class Padding { Valid, Same };

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                      const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// b's shape must be a suffix of a's shape (empty suffix = scalar).
template <typename T>
void check_suffix(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.size() > as.size() ||
      !std::equal(bs.begin(), bs.end(), as.end() - bs.size()))
    throw ShapeError(std::string(op) + ": " + shape_str(bs) +
                     " is not a trailing suffix of " + shape_str(as));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + c;
  return out;
}

// a op b with b broadcast along a's leading axes (b.shape is a suffix of
// a.shape; an empty shape broadcasts everywhere).
template <typename T>
Tensor<T> add_bcast(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_suffix(a, b, "add_bcast");
  Tensor<T> out(a.shape());
  const std::size_t inner = std::max<std::size_t>(b.size(), 1);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i % inner];
  return out;
}

template <typename T>
Tensor<T> mul_bcast(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_suffix(a, b, "mul_bcast");
  Tensor<T> out(a.shape());
  const std::size_t inner = std::max<std::size_t>(b.size(), 1);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i % inner];
  return out;
}

// a [D0, C, inner...] plus b [C] broadcast over axis 1 (per-channel bias).
template <typename T>
Tensor<T> add_bias_axis1(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() < 2 || b.ndim() != 1 || b.dim(0) != a.dim(1))
    throw ShapeError("add_bias_axis1: " + shape_str(a.shape()) + " + " +
                     shape_str(b.shape()));
  const std::size_t d0 = a.dim(0), c = a.dim(1);
  const std::size_t inner = a.size() / std::max<std::size_t>(d0 * c, 1);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < d0; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const T bj = b[j];
      const T* src = a.data() + (i * c + j) * inner;
      T* dst = out.data() + (i * c + j) * inner;
      for (std::size_t k = 0; k < inner; ++k) dst[k] = src[k] + bj;
    }
  return out;
}

// Reduce a over its leading axes down to b_shape (adjoint of the broadcast).
template <typename T>
Tensor<T> sum_to_suffix(const Tensor<T>& a, const Shape& suffix) {
  Tensor<T> out = Tensor<T>::zeros(suffix);
  const std::size_t inner = std::max<std::size_t>(shape_numel(suffix), 1);
  if (out.size() == 0) {
    // scalar target
    Tensor<T> s = Tensor<T>::zeros(Shape{});
    for (std::size_t i = 0; i < a.size(); ++i) s[0] += a[i];
    return s;
  }
  for (std::size_t i = 0; i < a.size(); ++i) out[i % inner] += a[i];
  return out;
}

template <typename T>
Tensor<T> clip(const Tensor<T>& a, T lo, T hi) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = std::min(hi, std::max(lo, a[i]));
  return out;
}

// ---------------------------------------------------------------------------
// matmul: a is [..., K] with leading axes flattened to rows, b is [K, N].

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() < 1 || b.ndim() != 2)
    throw ShapeError("matmul: need a[...,K] and b[K,N], got " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t k = a.dim(a.ndim() - 1);
  if (k != b.dim(0))
    throw ShapeError("matmul: inner dims disagree, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  const std::size_t rows = a.size() / std::max<std::size_t>(k, 1);
  const std::size_t n = b.dim(1);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* arow = ap + r * k;
    T* orow = op + r * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      if (av == T(0)) continue;
      const T* brow = bp + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

// g [R, N] x b [K, N] -> [R, K]  (g . b^T); the grad-of-input kernel.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& g, const Tensor<T>& b) {
  const std::size_t n = g.dim(g.ndim() - 1);
  if (b.ndim() != 2 || b.dim(1) != n)
    throw ShapeError("matmul_nt: " + shape_str(g.shape()) + " x " +
                     shape_str(b.shape()));
  const std::size_t rows = g.size() / std::max<std::size_t>(n, 1);
  const std::size_t k = b.dim(0);
  Shape out_shape(g.shape().begin(), g.shape().end() - 1);
  out_shape.push_back(k);
  Tensor<T> out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* grow = g.data() + r * n;
    T* orow = out.data() + r * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* brow = b.data() + kk * n;
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      orow[kk] = acc;
    }
  }
  return out;
}

// a [R, K] x g [R, N] -> [K, N]  (a^T . g); the grad-of-weight kernel.
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& g) {
  const std::size_t k = a.dim(a.ndim() - 1);
  const std::size_t n = g.dim(g.ndim() - 1);
  const std::size_t rows = a.size() / std::max<std::size_t>(k, 1);
  if (g.size() / std::max<std::size_t>(n, 1) != rows)
    throw ShapeError("matmul_tn: " + shape_str(a.shape()) + " x " +
                     shape_str(g.shape()));
  Tensor<T> out = Tensor<T>::zeros(Shape{k, n});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* arow = a.data() + r * k;
    const T* grow = g.data() + r * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      if (av == T(0)) continue;
      T* orow = out.data() + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, input [B,C,H,W], kernels [F,C,Kh,Kw].

struct Conv2dGeometry {
  std::size_t b, c, h, w, f, kh, kw, sh, sw, oh, ow;
  long ph, pw;  // top/left padding
};

template <typename T>
Conv2dGeometry conv2d_geometry(const Tensor<T>& input,
                               const Tensor<T>& kernels, std::size_t sh,
                               std::size_t sw, Padding padding) {
  if (input.ndim() != 4 || kernels.ndim() != 4)
    throw ShapeError("conv2d: need input[B,C,H,W] and kernels[F,C,Kh,Kw], "
                     "got " + shape_str(input.shape()) + " and " +
                     shape_str(kernels.shape()));
  if (sh == 0 || sw == 0) throw ArgumentError("conv2d: zero stride");
  Conv2dGeometry g;
  g.b = input.dim(0), g.c = input.dim(1), g.h = input.dim(2),
  g.w = input.dim(3);
  g.f = kernels.dim(0), g.kh = kernels.dim(2), g.kw = kernels.dim(3);
  if (kernels.dim(1) != g.c)
    throw ShapeError("conv2d: input has " + std::to_string(g.c) +
                     " channels, kernels expect " +
                     std::to_string(kernels.dim(1)));
  g.sh = sh, g.sw = sw;
  if (padding == Padding::Valid) {
    if (g.kh > g.h || g.kw > g.w)
      throw ShapeError("conv2d: kernel " + std::to_string(g.kh) + "x" +
                       std::to_string(g.kw) + " larger than input " +
                       std::to_string(g.h) + "x" + std::to_string(g.w));
    g.oh = (g.h - g.kh) / sh + 1;
    g.ow = (g.w - g.kw) / sw + 1;
    g.ph = g.pw = 0;
  } else {
    g.oh = (g.h + sh - 1) / sh;
    g.ow = (g.w + sw - 1) / sw;
    const long pad_h =
        std::max<long>(0, long((g.oh - 1) * sh + g.kh) - long(g.h));
    const long pad_w =
        std::max<long>(0, long((g.ow - 1) * sw + g.kw) - long(g.w));
    g.ph = pad_h / 2;
    g.pw = pad_w / 2;
    if (long(g.kh) > long(g.h) + pad_h || long(g.kw) > long(g.w) + pad_w)
      throw ShapeError("conv2d: kernel larger than padded input");
  }
  return g;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels,
                 std::size_t sh = 1, std::size_t sw = 1,
                 Padding padding = Padding::Valid) {
  const auto g = conv2d_geometry(input, kernels, sh, sw, padding);
  Tensor<T> out = Tensor<T>::zeros(Shape{g.b, g.f, g.oh, g.ow});
  for (std::size_t b = 0; b < g.b; ++b)
    for (std::size_t f = 0; f < g.f; ++f)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          T acc = 0;
          for (std::size_t c = 0; c < g.c; ++c) {
            const T* in_ch = input.data() + ((b * g.c + c) * g.h) * g.w;
            const T* k_ch =
                kernels.data() + ((f * g.c + c) * g.kh) * g.kw;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const long y = long(oy * g.sh + ky) - g.ph;
              if (y < 0 || y >= long(g.h)) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const long x = long(ox * g.sw + kx) - g.pw;
                if (x < 0 || x >= long(g.w)) continue;
                acc += in_ch[std::size_t(y) * g.w + std::size_t(x)] *
                       k_ch[ky * g.kw + kx];
              }
            }
          }
          out[((b * g.f + f) * g.oh + oy) * g.ow + ox] = acc;
        }
  return out;
}

template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& input,
                            const Tensor<T>& kernels, std::size_t sh,
                            std::size_t sw, Padding padding) {
  const auto g = conv2d_geometry(input, kernels, sh, sw, padding);
  Tensor<T> gin = Tensor<T>::zeros(input.shape());
  for (std::size_t b = 0; b < g.b; ++b)
    for (std::size_t f = 0; f < g.f; ++f)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          const T go = grad_out[((b * g.f + f) * g.oh + oy) * g.ow + ox];
          if (go == T(0)) continue;
          for (std::size_t c = 0; c < g.c; ++c) {
            T* gin_ch = gin.data() + ((b * g.c + c) * g.h) * g.w;
            const T* k_ch =
                kernels.data() + ((f * g.c + c) * g.kh) * g.kw;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const long y = long(oy * g.sh + ky) - g.ph;
              if (y < 0 || y >= long(g.h)) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const long x = long(ox * g.sw + kx) - g.pw;
                if (x < 0 || x >= long(g.w)) continue;
                gin_ch[std::size_t(y) * g.w + std::size_t(x)] +=
                    go * k_ch[ky * g.kw + kx];
              }
            }
          }
        }
  return gin;
}

template <typename T>
Tensor<T> conv2d_grad_kernels(const Tensor<T>& grad_out,
                              const Tensor<T>& input,
                              const Tensor<T>& kernels, std::size_t sh,
                              std::size_t sw, Padding padding) {
  const auto g = conv2d_geometry(input, kernels, sh, sw, padding);
  Tensor<T> gk = Tensor<T>::zeros(kernels.shape());
  for (std::size_t b = 0; b < g.b; ++b)
    for (std::size_t f = 0; f < g.f; ++f)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          const T go = grad_out[((b * g.f + f) * g.oh + oy) * g.ow + ox];
          if (go == T(0)) continue;
          for (std::size_t c = 0; c < g.c; ++c) {
            const T* in_ch = input.data() + ((b * g.c + c) * g.h) * g.w;
            T* gk_ch = gk.data() + ((f * g.c + c) * g.kh) * g.kw;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const long y = long(oy * g.sh + ky) - g.ph;
              if (y < 0 || y >= long(g.h)) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const long x = long(ox * g.sw + kx) - g.pw;
                if (x < 0 || x >= long(g.w)) continue;
                gk_ch[ky * g.kw + kx] +=
                    go * in_ch[std::size_t(y) * g.w + std::size_t(x)];
              }
            }
          }
        }
  return gk;
}

// ---------------------------------------------------------------------------
// maxpool2d: non-overlapping windows; partial windows at the edge pool over
// the available elements (the implicit -inf padding is never selected).
// argmax records the flat input index of the first maximal element, which is
// where the gradient routes.

template <typename T>
struct MaxPoolResult {
  Tensor<T> out;
  Tensor<std::int64_t> argmax;
};

template <typename T>
MaxPoolResult<T> maxpool2d_with_argmax(const Tensor<T>& input, std::size_t wh,
                                       std::size_t ww) {
  if (wh == 0 || ww == 0) throw ArgumentError("maxpool2d: zero-sized window");
  if (input.ndim() != 4)
    throw ShapeError("maxpool2d: need [B,C,H,W], got " +
                     shape_str(input.shape()));
  const std::size_t b = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t oh = (h + wh - 1) / wh, ow = (w + ww - 1) / ww;
  MaxPoolResult<T> r{Tensor<T>(Shape{b, c, oh, ow}),
                     Tensor<std::int64_t>(Shape{b, c, oh, ow})};
  for (std::size_t bc = 0; bc < b * c; ++bc) {
    const T* in = input.data() + bc * h * w;
    T* out = r.out.data() + bc * oh * ow;
    std::int64_t* am = r.argmax.data() + bc * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t y = oy * wh; y < std::min(h, (oy + 1) * wh); ++y)
          for (std::size_t x = ox * ww; x < std::min(w, (ox + 1) * ww); ++x) {
            const T v = in[y * w + x];
            if (v > best) {
              best = v;
              best_idx = y * w + x;
            }
          }
        out[oy * ow + ox] = best;
        am[oy * ow + ox] = std::int64_t(bc * h * w + best_idx);
      }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::size_t wh, std::size_t ww) {
  return maxpool2d_with_argmax(input, wh, ww).out;
}

// ---------------------------------------------------------------------------
// roll: circular shift along the named axes. Negative axes count from the
// end; shifts may be any sign/magnitude.

template <typename T>
Tensor<T> roll(const Tensor<T>& t, const std::vector<long>& shifts,
               const std::vector<long>& axes) {
  if (shifts.size() != axes.size())
    throw ArgumentError("roll: " + std::to_string(shifts.size()) +
                        " shifts for " + std::to_string(axes.size()) +
                        " axes");
  Tensor<T> cur = t;
  for (std::size_t i = 0; i < axes.size(); ++i) {
    long ax = axes[i];
    if (ax < 0) ax += long(t.ndim());
    if (ax < 0 || std::size_t(ax) >= t.ndim())
      throw ArgumentError("roll: axis " + std::to_string(axes[i]) +
                          " out of range for " + shape_str(t.shape()));
    const std::size_t n = t.dim(std::size_t(ax));
    if (n == 0) continue;
    long s = shifts[i] % long(n);
    if (s < 0) s += long(n);
    if (s == 0) continue;
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < std::size_t(ax); ++d) outer *= t.dim(d);
    for (std::size_t d = std::size_t(ax) + 1; d < t.ndim(); ++d)
      inner *= t.dim(d);
    Tensor<T> next(t.shape());
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t dst = (j + std::size_t(s)) % n;
        std::memcpy(next.data() + (o * n + dst) * inner,
                    cur.data() + (o * n + j) * inner, inner * sizeof(T));
      }
    cur = next;
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Axis-1 helpers used by the time-unrolled network schedules. All of them
// treat tensors as [D0, D1, inner...].

template <typename T>
Tensor<T> slice_axis1(const Tensor<T>& t, std::size_t lo, std::size_t hi) {
  if (t.ndim() < 2 || lo > hi || hi > t.dim(1))
    throw ShapeError("slice_axis1: [" + std::to_string(lo) + "," +
                     std::to_string(hi) + ") of " + shape_str(t.shape()));
  const std::size_t d0 = t.dim(0), d1 = t.dim(1);
  const std::size_t inner = t.size() / std::max<std::size_t>(d0 * d1, 1);
  Shape out_shape = t.shape();
  out_shape[1] = hi - lo;
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < d0; ++i)
    std::memcpy(out.data() + i * (hi - lo) * inner,
                t.data() + (i * d1 + lo) * inner,
                (hi - lo) * inner * sizeof(T));
  return out;
}

template <typename T>
Tensor<T> sum_axis1(const Tensor<T>& t) {
  if (t.ndim() < 2) throw ShapeError("sum_axis1: need >=2 dims");
  const std::size_t d0 = t.dim(0), d1 = t.dim(1);
  const std::size_t inner = t.size() / std::max<std::size_t>(d0 * d1, 1);
  Shape out_shape;
  out_shape.push_back(d0);
  for (std::size_t d = 2; d < t.ndim(); ++d) out_shape.push_back(t.dim(d));
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  for (std::size_t i = 0; i < d0; ++i)
    for (std::size_t j = 0; j < d1; ++j) {
      const T* src = t.data() + (i * d1 + j) * inner;
      T* dst = out.data() + i * inner;
      for (std::size_t k = 0; k < inner; ++k) dst[k] += src[k];
    }
  return out;
}

// Stack K same-shaped [D0, inner...] tensors into [D0, K, inner...].
template <typename T>
Tensor<T> stack_axis1(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ArgumentError("stack_axis1: empty");
  const Shape& s = parts[0].shape();
  const std::size_t d0 = s[0];
  const std::size_t inner = parts[0].size() / std::max<std::size_t>(d0, 1);
  Shape out_shape;
  out_shape.push_back(d0);
  out_shape.push_back(parts.size());
  for (std::size_t d = 1; d < s.size(); ++d) out_shape.push_back(s[d]);
  Tensor<T> out(out_shape);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (!parts[k].same_shape(parts[0]))
      throw ShapeError("stack_axis1: ragged parts");
    for (std::size_t i = 0; i < d0; ++i)
      std::memcpy(out.data() + (i * parts.size() + k) * inner,
                  parts[k].data() + i * inner, inner * sizeof(T));
  }
  return out;
}

}  // namespace spiketrain
