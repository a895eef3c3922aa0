#include "boxseg/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "boxseg/error.hpp"

namespace boxseg::kernels {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvShape {
  Nchw in;
  std::size_t cout, kh, kw, oh, ow;
  std::size_t patch() const { return in.c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
  bool pointwise(const ConvGeometry& g) const {
    return kh == 1 && kw == 1 && g.stride == 1 && g.pad == 0;
  }
};

ConvShape conv_shape(const Tensor& x, const Tensor& kernel, ConvGeometry geo) {
  ConvShape s{};
  s.in = as_nchw(x.dims(), "conv2d");
  if (kernel.rank() != 4) {
    throw Error(ErrorKind::kShape,
                "conv2d: kernel must be rank 4, got " + shape_string(kernel.dims()),
                "kernel_rank");
  }
  s.cout = kernel.dim(0);
  s.kh = kernel.dim(2);
  s.kw = kernel.dim(3);
  if (kernel.dim(1) != s.in.c) throw_shape("conv2d", "in_channels", kernel.dim(1), s.in.c);
  if (geo.stride < 1) throw_invalid("conv2d: stride must be >= 1");
  if (s.in.h + 2 * geo.pad < s.kh) throw_shape("conv2d", "height", s.kh, s.in.h + 2 * geo.pad);
  if (s.in.w + 2 * geo.pad < s.kw) throw_shape("conv2d", "width", s.kw, s.in.w + 2 * geo.pad);
  s.oh = (s.in.h + 2 * geo.pad - s.kh) / geo.stride + 1;
  s.ow = (s.in.w + 2 * geo.pad - s.kw) / geo.stride + 1;
  return s;
}

// Output columns [lo, hi) whose input column ox*stride + kx - pad lies inside [0, w).
struct ColRange {
  std::size_t lo, hi;
};

ColRange valid_cols(const ConvShape& s, ConvGeometry geo, std::size_t kx) {
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(geo.pad);
  const std::ptrdiff_t st = static_cast<std::ptrdiff_t>(geo.stride);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(s.in.w);
  const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>(s.ow);
  const std::ptrdiff_t lo = off >= 0 ? 0 : (-off + st - 1) / st;
  const std::ptrdiff_t hi = w - off <= 0 ? 0 : (w - off + st - 1) / st;
  return {static_cast<std::size_t>(std::min(lo, ow)), static_cast<std::size_t>(std::clamp(hi, lo, ow))};
}

void im2col(const double* img, const ConvShape& s, ConvGeometry geo, double* cols) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(geo.pad);
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(s.in.h);
  const std::size_t p = s.positions(), st = geo.stride;
  for (std::size_t kx = 0; kx < s.kw; ++kx) {
    const ColRange r = valid_cols(s, geo, kx);
    const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(r.lo * st + kx) - pad;
    for (std::size_t c = 0; c < s.in.c; ++c) {
      const double* plane = img + c * s.in.plane();
      for (std::size_t ky = 0; ky < s.kh; ++ky) {
        double* row = cols + ((c * s.kh + ky) * s.kw + kx) * p;
        for (std::size_t oy = 0; oy < s.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * st + ky) - pad;
          double* out = row + oy * s.ow;
          if (iy < 0 || iy >= h) {
            std::fill_n(out, s.ow, 0.0);
            continue;
          }
          std::fill_n(out, r.lo, 0.0);
          const double* src = plane + iy * static_cast<std::ptrdiff_t>(s.in.w) + x0;
          if (st == 1) {
            std::copy_n(src, r.hi - r.lo, out + r.lo);
          } else {
            for (std::size_t ox = r.lo; ox < r.hi; ++ox) out[ox] = src[(ox - r.lo) * st];
          }
          std::fill_n(out + r.hi, s.ow - r.hi, 0.0);
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvShape& s, ConvGeometry geo, double* img) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(geo.pad);
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(s.in.h);
  const std::size_t p = s.positions(), st = geo.stride;
  for (std::size_t kx = 0; kx < s.kw; ++kx) {
    const ColRange r = valid_cols(s, geo, kx);
    const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(r.lo * st + kx) - pad;
    for (std::size_t c = 0; c < s.in.c; ++c) {
      double* plane = img + c * s.in.plane();
      for (std::size_t ky = 0; ky < s.kh; ++ky) {
        const double* row = cols + ((c * s.kh + ky) * s.kw + kx) * p;
        for (std::size_t oy = 0; oy < s.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * st + ky) - pad;
          if (iy < 0 || iy >= h) continue;
          double* dst = plane + iy * static_cast<std::ptrdiff_t>(s.in.w) + x0;
          const double* in = row + oy * s.ow;
          for (std::size_t ox = r.lo; ox < r.hi; ++ox) dst[(ox - r.lo) * st] += in[ox];
        }
      }
    }
  }
}

Shape with_batch(const Shape& like, std::size_t n, std::size_t c, std::size_t h,
                 std::size_t w) {
  if (like.size() == 3) return {c, h, w};
  return {n, c, h, w};
}

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.dims());
  const double* src = x.ptr();
  double* dst = out.ptr();
  for (std::size_t i = 0; i < x.numel(); ++i) dst[i] = f(src[i]);
  return out;
}


// Stride-1 convs with few output channels: one GEMM per kernel tap against
// the unfolded input, then a shifted accumulate. Avoids an im2col buffer
// that is kh*kw times the input size.
using Strided = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
using TapMap = Eigen::Map<const RowMat, 0, Strided>;
using MutTapMap = Eigen::Map<RowMat, 0, Strided>;

bool use_taps(const ConvShape& s, const ConvGeometry& g) {
  return g.stride == 1 && !s.pointwise(g) && s.cout < s.in.c;
}

// Valid output columns [lo, hi) for tap column kx.
void tap_range(const ConvShape& s, std::size_t pad, std::size_t kx, std::size_t* lo,
               std::size_t* hi) {
  *lo = pad > kx ? pad - kx : 0;
  *hi = std::min(s.ow, s.in.w + pad - kx);
}

// Runs f(out_offset, in_offset, count) over every valid row segment of a tap.
template <typename F>
void for_tap_rows(const ConvShape& s, ConvGeometry geo, std::size_t ky, std::size_t kx, F f) {
  std::size_t lo = 0, hi = 0;
  tap_range(s, geo.pad, kx, &lo, &hi);
  if (lo >= hi) return;
  for (std::size_t oy = 0; oy < s.oh; ++oy) {
    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(geo.pad);
    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.in.h)) continue;
    f(oy * s.ow + lo, static_cast<std::size_t>(iy) * s.in.w + lo + kx - geo.pad, hi - lo);
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              ConvGeometry geo) {
  const ConvShape s = conv_shape(x, kernel, geo);
  if (bias.numel() != s.cout) throw_shape("conv2d", "bias", s.cout, bias.numel());
  Tensor out(with_batch(x.dims(), s.in.n, s.cout, s.oh, s.ow));
  const std::size_t p = s.positions();
  const bool pointwise = s.pointwise(geo);
  if (use_taps(s, geo)) {
    const std::size_t taps = s.kh * s.kw, hw = s.in.plane();
    RowMat z(s.cout, hw);
    for (std::size_t n = 0; n < s.in.n; ++n) {
      ConstMapMat xin(x.ptr() + n * s.in.image(), s.in.c, hw);
      double* y = out.ptr() + n * s.cout * p;
      for (std::size_t co = 0; co < s.cout; ++co) std::fill_n(y + co * p, p, bias[co]);
      for (std::size_t ky = 0; ky < s.kh; ++ky) {
        for (std::size_t kx = 0; kx < s.kw; ++kx) {
          TapMap kt(kernel.ptr() + ky * s.kw + kx, s.cout, s.in.c, Strided(s.in.c * taps, taps));
          z.noalias() = kt * xin;
          for_tap_rows(s, geo, ky, kx, [&](std::size_t o, std::size_t i, std::size_t len) {
            for (std::size_t co = 0; co < s.cout; ++co) {
              double* dst = y + co * p + o;
              const double* src = z.data() + co * hw + i;
              for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
            }
          });
        }
      }
    }
    return out;
  }
  Buffer cols(pointwise ? 0 : s.patch() * p);
  ConstMapMat k(kernel.ptr(), s.cout, s.patch());
  for (std::size_t n = 0; n < s.in.n; ++n) {
    const double* img = x.ptr() + n * s.in.image();
    const double* colp = img;
    if (!pointwise) {
      im2col(img, s, geo, cols.data());
      colp = cols.data();
    }
    MapMat y(out.ptr() + n * s.cout * p, s.cout, p);
    y.noalias() = k * ConstMapMat(colp, s.patch(), p);
    for (std::size_t co = 0; co < s.cout; ++co) y.row(co).array() += bias[co];
  }
  return out;
}

void conv2d_backward(const Tensor& x, const Tensor& kernel, ConvGeometry geo,
                     const Tensor& dy, Tensor* dx, Tensor* dkernel, Tensor* dbias) {
  const ConvShape s = conv_shape(x, kernel, geo);
  const std::size_t p = s.positions();
  const bool pointwise = s.pointwise(geo);
  if (use_taps(s, geo)) {
    const std::size_t taps = s.kh * s.kw, hw = s.in.plane();
    RowMat gt(s.cout, hw);
    for (std::size_t n = 0; n < s.in.n; ++n) {
      const double* g = dy.ptr() + n * s.cout * p;
      if (dbias) {
        for (std::size_t co = 0; co < s.cout; ++co)
          (*dbias)[co] += ConstMapMat(g + co * p, 1, p).sum();
      }
      if (!dkernel && !dx) continue;
      ConstMapMat xin(x.ptr() + n * s.in.image(), s.in.c, hw);
      for (std::size_t ky = 0; ky < s.kh; ++ky) {
        for (std::size_t kx = 0; kx < s.kw; ++kx) {
          // Output gradient moved onto the input grid of this tap.
          gt.setZero();
          for_tap_rows(s, geo, ky, kx, [&](std::size_t o, std::size_t i, std::size_t len) {
            for (std::size_t co = 0; co < s.cout; ++co)
              std::copy_n(g + co * p + o, len, gt.data() + co * hw + i);
          });
          const std::size_t off = ky * s.kw + kx;
          if (dkernel) {
            MutTapMap dk(dkernel->ptr() + off, s.cout, s.in.c, Strided(s.in.c * taps, taps));
            dk.noalias() += gt * xin.transpose();
          }
          if (dx) {
            TapMap kt(kernel.ptr() + off, s.cout, s.in.c, Strided(s.in.c * taps, taps));
            MapMat(dx->ptr() + n * s.in.image(), s.in.c, hw).noalias() += kt.transpose() * gt;
          }
        }
      }
    }
    return;
  }
  Buffer cols(pointwise ? 0 : s.patch() * p);
  Buffer dcols(pointwise ? 0 : s.patch() * p);
  ConstMapMat k(kernel.ptr(), s.cout, s.patch());
  for (std::size_t n = 0; n < s.in.n; ++n) {
    ConstMapMat g(dy.ptr() + n * s.cout * p, s.cout, p);
    if (dbias) {
      for (std::size_t co = 0; co < s.cout; ++co) (*dbias)[co] += g.row(co).sum();
    }
    const double* img = x.ptr() + n * s.in.image();
    if (dkernel) {
      const double* colp = img;
      if (!pointwise) {
        im2col(img, s, geo, cols.data());
        colp = cols.data();
      }
      MapMat dk(dkernel->ptr(), s.cout, s.patch());
      dk.noalias() += g * ConstMapMat(colp, s.patch(), p).transpose();
    }
    if (dx) {
      double* dimg = dx->ptr() + n * s.in.image();
      if (pointwise) {
        MapMat(dimg, s.patch(), p).noalias() += k.transpose() * g;
      } else {
        MapMat dc(dcols.data(), s.patch(), p);
        dc.noalias() = k.transpose() * g;
        col2im(dcols.data(), s, geo, dimg);
      }
    }
  }
}

Tensor relu(const Tensor& x) {
  return map(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return map(x, [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Tensor softmax_channels(const Tensor& x) {
  const Nchw s = as_nchw(x.dims(), "softmax");
  Tensor out(x.dims());
  const std::size_t plane = s.plane();
  std::vector<double> mx(plane);
  std::vector<double> total(plane);
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* in = x.ptr() + n * s.image();
    double* o = out.ptr() + n * s.image();
    std::fill(mx.begin(), mx.end(), -std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < plane; ++i) mx[i] = std::max(mx[i], in[c * plane + i]);
    std::fill(total.begin(), total.end(), 0.0);
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        const double e = std::exp(in[c * plane + i] - mx[i]);
        o[c * plane + i] = e;
        total[i] += e;
      }
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < plane; ++i) o[c * plane + i] /= total[i];
  }
  return out;
}

Tensor log_softmax_channels(const Tensor& x) {
  const Nchw s = as_nchw(x.dims(), "log_softmax");
  Tensor out(x.dims());
  const std::size_t plane = s.plane();
  std::vector<double> mx(plane);
  std::vector<double> total(plane);
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* in = x.ptr() + n * s.image();
    double* o = out.ptr() + n * s.image();
    std::fill(mx.begin(), mx.end(), -std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < plane; ++i) mx[i] = std::max(mx[i], in[c * plane + i]);
    std::fill(total.begin(), total.end(), 0.0);
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < plane; ++i) total[i] += std::exp(in[c * plane + i] - mx[i]);
    for (std::size_t i = 0; i < plane; ++i) total[i] = mx[i] + std::log(total[i]);
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < plane; ++i) o[c * plane + i] = in[c * plane + i] - total[i];
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.dims() == b.dims()) {
    Tensor out(a.dims());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
    return out;
  }
  // b broadcast along the batch axis only.
  const bool batch_broadcast =
      a.rank() == b.rank() && a.rank() >= 2 && b.dim(0) == 1 &&
      std::equal(a.dims().begin() + 1, a.dims().end(), b.dims().begin() + 1);
  if (!batch_broadcast) {
    for (std::size_t axis = 0; axis < std::min(a.rank(), b.rank()); ++axis) {
      if (a.dim(axis) != b.dim(axis) && !(axis == 0 && b.dim(0) == 1)) {
        throw_shape("mul", "axis" + std::to_string(axis), a.dim(axis), b.dim(axis));
      }
    }
    throw_shape("mul", "rank", a.rank(), b.rank());
  }
  Tensor out(a.dims());
  const std::size_t inner = b.numel();
  for (std::size_t n = 0; n < a.dim(0); ++n)
    for (std::size_t i = 0; i < inner; ++i) out[n * inner + i] = a[n * inner + i] * b[i];
  return out;
}

Tensor resize_nearest(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (out_h < 1 || out_w < 1) throw_invalid("resize_nearest: target must be >= 1x1");
  const Nchw s = as_nchw(x.dims(), "resize_nearest");
  Tensor out(with_batch(x.dims(), s.n, s.c, out_h, out_w));
  std::vector<std::size_t> col(out_w);
  for (std::size_t j = 0; j < out_w; ++j) col[j] = j * s.w / out_w;
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const double* in = x.ptr() + nc * s.plane();
    double* o = out.ptr() + nc * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const double* row = in + (i * s.h / out_h) * s.w;
      for (std::size_t j = 0; j < out_w; ++j) o[i * out_w + j] = row[col[j]];
    }
  }
  return out;
}

void resize_nearest_backward(const Tensor& dy, Tensor& dx) {
  const Nchw s = as_nchw(dx.dims(), "resize_nearest");
  const Nchw o = as_nchw(dy.dims(), "resize_nearest");
  std::vector<std::size_t> col(o.w);
  for (std::size_t j = 0; j < o.w; ++j) col[j] = j * s.w / o.w;
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    double* in = dx.ptr() + nc * s.plane();
    const double* g = dy.ptr() + nc * o.plane();
    for (std::size_t i = 0; i < o.h; ++i) {
      double* row = in + (i * s.h / o.h) * s.w;
      for (std::size_t j = 0; j < o.w; ++j) row[col[j]] += g[i * o.w + j];
    }
  }
}

namespace {

// Half-pixel centres, edge-clamped: the two source taps and the weight of the upper one.
struct LerpTap {
  std::size_t lo, hi;
  double t;
};

std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double ratio = double(in) / double(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double src = std::clamp((double(i) + 0.5) * ratio - 0.5, 0.0, double(in - 1));
    const std::size_t lo = static_cast<std::size_t>(src);
    taps[i] = {lo, std::min(lo + 1, in - 1), src - double(lo)};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (out_h < 1 || out_w < 1) throw_invalid("resize_bilinear: target must be >= 1x1");
  const Nchw s = as_nchw(x.dims(), "resize_bilinear");
  Tensor out(with_batch(x.dims(), s.n, s.c, out_h, out_w));
  const auto ty = lerp_taps(s.h, out_h), tx = lerp_taps(s.w, out_w);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const double* in = x.ptr() + nc * s.plane();
    double* o = out.ptr() + nc * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const double* r0 = in + ty[i].lo * s.w;
      const double* r1 = in + ty[i].hi * s.w;
      const double wy = ty[i].t;
      for (std::size_t j = 0; j < out_w; ++j) {
        const LerpTap& c = tx[j];
        const double top = r0[c.lo] + c.t * (r0[c.hi] - r0[c.lo]);
        const double bot = r1[c.lo] + c.t * (r1[c.hi] - r1[c.lo]);
        o[i * out_w + j] = top + wy * (bot - top);
      }
    }
  }
  return out;
}

void resize_bilinear_backward(const Tensor& dy, Tensor& dx) {
  const Nchw s = as_nchw(dx.dims(), "resize_bilinear");
  const Nchw o = as_nchw(dy.dims(), "resize_bilinear");
  const auto ty = lerp_taps(s.h, o.h), tx = lerp_taps(s.w, o.w);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    double* in = dx.ptr() + nc * s.plane();
    const double* g = dy.ptr() + nc * o.plane();
    for (std::size_t i = 0; i < o.h; ++i) {
      double* r0 = in + ty[i].lo * s.w;
      double* r1 = in + ty[i].hi * s.w;
      const double wy = ty[i].t;
      for (std::size_t j = 0; j < o.w; ++j) {
        const LerpTap& c = tx[j];
        const double v = g[i * o.w + j];
        r0[c.lo] += (1 - wy) * (1 - c.t) * v;
        r0[c.hi] += (1 - wy) * c.t * v;
        r1[c.lo] += wy * (1 - c.t) * v;
        r1[c.hi] += wy * c.t * v;
      }
    }
  }
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Nchw sa = as_nchw(a.dims(), "concat_channels");
  const Nchw sb = as_nchw(b.dims(), "concat_channels");
  if (a.rank() != b.rank()) throw_shape("concat_channels", "rank", a.rank(), b.rank());
  if (sa.n != sb.n) throw_shape("concat_channels", "batch", sa.n, sb.n);
  if (sa.h != sb.h) throw_shape("concat_channels", "height", sa.h, sb.h);
  if (sa.w != sb.w) throw_shape("concat_channels", "width", sa.w, sb.w);
  Tensor out(with_batch(a.dims(), sa.n, sa.c + sb.c, sa.h, sa.w));
  for (std::size_t n = 0; n < sa.n; ++n) {
    double* o = out.ptr() + n * (sa.image() + sb.image());
    std::copy_n(a.ptr() + n * sa.image(), sa.image(), o);
    std::copy_n(b.ptr() + n * sb.image(), sb.image(), o + sa.image());
  }
  return out;
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  const Nchw s = as_nchw(x.dims(), "slice_channels");
  if (begin > end || end > s.c) throw_shape("slice_channels", "channels", s.c, end);
  const std::size_t count = end - begin;
  Tensor out(with_batch(x.dims(), s.n, count, s.h, s.w));
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(x.ptr() + n * s.image() + begin * s.plane(), count * s.plane(),
                out.ptr() + n * count * s.plane());
  }
  return out;
}

double sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return total;
}

}  // namespace boxseg::kernels
