#include "togan/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace togan::ad {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// [N, C, rest] view of a tensor shape.
struct NCR {
  int64_t n, c, r;
};
NCR ncr(const Shape& s, const char* op) {
  require(s.size() >= 2, std::string(op) + ": need rank >= 2, got " + shape_str(s));
  int64_t r = 1;
  for (size_t i = 2; i < s.size(); ++i) r *= s[i];
  return {s[0], s[1], r};
}

template <typename T, typename F>
Tensor<T> map_unary(const Tensor<T>& x, F f) {
  Tensor<T> y(x.shape());
  const T* px = x.data();
  T* py = y.data();
  for (int64_t i = 0; i < x.size(); ++i) py[i] = f(px[i]);
  return y;
}

template <typename T, typename F>
Tensor<T> map_binary(const Tensor<T>& a, const Tensor<T>& b, F f) {
  Tensor<T> y(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* py = y.data();
  for (int64_t i = 0; i < a.size(); ++i) py[i] = f(pa[i], pb[i]);
  return y;
}

// ---------------------------------------------------------------- conv

struct ConvGeom {
  int64_t n, c, h, w, o, k, ho, wo;
  int stride, pad;
};

// Valid output-column range [lo, hi) for kernel offset kx.
inline void valid_range(int64_t wo, int64_t w, int stride, int pad, int64_t kx, int64_t& lo, int64_t& hi) {
  // need 0 <= ox*stride - pad + kx < w
  lo = std::max<int64_t>(0, (pad - kx + stride - 1) / stride);
  hi = std::min<int64_t>(wo, (w + pad - kx + stride - 1) / stride);
  if (pad - kx < 0) lo = 0;
  if (hi < lo) hi = lo;
}

// Writes one sample's patches into rows of `cols` with leading dimension ld.
template <typename T>
void im2col_sample(const T* x, const ConvGeom& g, T* cols, int64_t ld) {
  for (int64_t c = 0; c < g.c; ++c) {
    const T* plane = x + c * g.h * g.w;
    for (int64_t ky = 0; ky < g.k; ++ky)
      for (int64_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * ld;
        int64_t lo, hi;
        valid_range(g.wo, g.w, g.stride, g.pad, kx, lo, hi);
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = plane + iy * g.w - g.pad + kx;
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int64_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
          }
          std::fill(dst + hi, dst + g.wo, T(0));
        }
      }
  }
}

template <typename T>
void col2im_sample(const T* cols, const ConvGeom& g, T* x, int64_t ld) {
  std::fill(x, x + g.c * g.h * g.w, T(0));
  for (int64_t c = 0; c < g.c; ++c) {
    T* plane = x + c * g.h * g.w;
    for (int64_t ky = 0; ky < g.k; ++ky)
      for (int64_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((c * g.k + ky) * g.k + kx) * ld;
        int64_t lo, hi;
        valid_range(g.wo, g.w, g.stride, g.pad, kx, lo, hi);
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + oy * g.wo;
          T* dst = plane + iy * g.w - g.pad + kx;
          if (g.stride == 1) {
            for (int64_t ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (int64_t ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
          }
        }
      }
  }
}

// NCHW <-> C x (N*HW) layout shuffles.
template <typename T>
void nchw_to_cm(const T* x, int64_t n, int64_t c, int64_t hw, T* out) {
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) std::copy_n(x + (i * c + j) * hw, hw, out + j * n * hw + i * hw);
}
template <typename T>
void cm_to_nchw(const T* m, int64_t n, int64_t c, int64_t hw, T* out) {
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) std::copy_n(m + j * n * hw + i * hw, hw, out + (i * c + j) * hw);
}

bool is_pointwise(const ConvGeom& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

ConvGeom conv_geom(const Shape& xs, const Shape& ws, int stride, int pad) {
  require(xs.size() == 4 && ws.size() == 4, "conv2d: need NCHW input and OIkk weight, got " + shape_str(xs) +
                                                 " and " + shape_str(ws));
  require(xs[1] == ws[1], "conv2d: input channels " + std::to_string(xs[1]) + " != weight " + std::to_string(ws[1]));
  require(ws[2] == ws[3] && ws[2] % 2 == 1, "conv2d: kernel must be square and odd");
  require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  require(pad >= 0, "conv2d: negative padding");
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], 0, 0, stride, pad};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  require(g.ho > 0 && g.wo > 0, "conv2d: empty output");
  return g;
}

// Large spatial extents run one GEMM per sample so the patch matrix stays in
// cache; small ones batch all samples into a single GEMM.
bool per_sample(const ConvGeom& g) { return g.ho * g.wo >= 64; }

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const ConvGeom& g) {
  const int64_t ckk = g.c * g.k * g.k;
  const int64_t hw_out = g.ho * g.wo;
  Tensor<T> y(Shape{g.n, g.o, g.ho, g.wo});
  CMapR<T> W(w.data(), g.o, ckk);
  if (per_sample(g)) {
    std::vector<T> cols(is_pointwise(g) ? 0 : static_cast<size_t>(ckk * hw_out));
    for (int64_t n = 0; n < g.n; ++n) {
      const T* xn = x.data() + n * g.c * g.h * g.w;
      const T* src = xn;
      if (!is_pointwise(g)) {
        im2col_sample(xn, g, cols.data(), hw_out);
        src = cols.data();
      }
      MapR<T>(y.data() + n * g.o * hw_out, g.o, hw_out).noalias() = W * CMapR<T>(src, ckk, hw_out);
    }
    return y;
  }
  const int64_t cols_n = g.n * hw_out;
  std::vector<T> cols(static_cast<size_t>(ckk * cols_n));
  if (is_pointwise(g))
    nchw_to_cm(x.data(), g.n, g.c, g.h * g.w, cols.data());
  else
    for (int64_t n = 0; n < g.n; ++n) im2col_sample(x.data() + n * g.c * g.h * g.w, g, cols.data() + n * hw_out, cols_n);
  std::vector<T> om(static_cast<size_t>(g.o * cols_n));
  MapR<T>(om.data(), g.o, cols_n).noalias() = W * CMapR<T>(cols.data(), ckk, cols_n);
  cm_to_nchw(om.data(), g.n, g.o, hw_out, y.data());
  return y;
}

template <typename T>
Tensor<T> conv_input_grad(const Tensor<T>& gy, const Tensor<T>& w, const ConvGeom& g) {
  const int64_t ckk = g.c * g.k * g.k;
  const int64_t hw_out = g.ho * g.wo;
  const int64_t hw_in = g.h * g.w;
  Tensor<T> gx(Shape{g.n, g.c, g.h, g.w});
  CMapR<T> W(w.data(), g.o, ckk);
  if (per_sample(g)) {
    std::vector<T> cols(is_pointwise(g) ? 0 : static_cast<size_t>(ckk * hw_out));
    for (int64_t n = 0; n < g.n; ++n) {
      CMapR<T> G(gy.data() + n * g.o * hw_out, g.o, hw_out);
      if (is_pointwise(g)) {
        MapR<T>(gx.data() + n * g.c * hw_in, ckk, hw_out).noalias() = W.transpose() * G;
      } else {
        MapR<T>(cols.data(), ckk, hw_out).noalias() = W.transpose() * G;
        col2im_sample(cols.data(), g, gx.data() + n * g.c * hw_in, hw_out);
      }
    }
    return gx;
  }
  const int64_t cols_n = g.n * hw_out;
  std::vector<T> gm(static_cast<size_t>(g.o * cols_n));
  nchw_to_cm(gy.data(), g.n, g.o, hw_out, gm.data());
  std::vector<T> cols(static_cast<size_t>(ckk * cols_n));
  MapR<T>(cols.data(), ckk, cols_n).noalias() = W.transpose() * CMapR<T>(gm.data(), g.o, cols_n);
  if (is_pointwise(g))
    cm_to_nchw(cols.data(), g.n, g.c, hw_in, gx.data());
  else
    for (int64_t n = 0; n < g.n; ++n) col2im_sample(cols.data() + n * hw_out, g, gx.data() + n * g.c * hw_in, cols_n);
  return gx;
}

template <typename T>
Tensor<T> conv_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, const ConvGeom& g) {
  const int64_t ckk = g.c * g.k * g.k;
  const int64_t hw_out = g.ho * g.wo;
  Tensor<T> gw(Shape{g.o, g.c, g.k, g.k});
  MapR<T> GW(gw.data(), g.o, ckk);
  if (per_sample(g)) {
    std::vector<T> cols(is_pointwise(g) ? 0 : static_cast<size_t>(ckk * hw_out));
    for (int64_t n = 0; n < g.n; ++n) {
      const T* xn = x.data() + n * g.c * g.h * g.w;
      const T* src = xn;
      if (!is_pointwise(g)) {
        im2col_sample(xn, g, cols.data(), hw_out);
        src = cols.data();
      }
      GW.noalias() += CMapR<T>(gy.data() + n * g.o * hw_out, g.o, hw_out) * CMapR<T>(src, ckk, hw_out).transpose();
    }
    return gw;
  }
  const int64_t cols_n = g.n * hw_out;
  std::vector<T> cols(static_cast<size_t>(ckk * cols_n));
  if (is_pointwise(g))
    nchw_to_cm(x.data(), g.n, g.c, g.h * g.w, cols.data());
  else
    for (int64_t n = 0; n < g.n; ++n) im2col_sample(x.data() + n * g.c * g.h * g.w, g, cols.data() + n * hw_out, cols_n);
  std::vector<T> gm(static_cast<size_t>(g.o * cols_n));
  nchw_to_cm(gy.data(), g.n, g.o, hw_out, gm.data());
  GW.noalias() = CMapR<T>(gm.data(), g.o, cols_n) * CMapR<T>(cols.data(), ckk, cols_n).transpose();
  return gw;
}

// ---------------------------------------------------------------- resample

enum class RKind { Up, Down, UpAdj, DownAdj };

RKind adjoint(RKind k) {
  switch (k) {
    case RKind::Up: return RKind::UpAdj;
    case RKind::Down: return RKind::DownAdj;
    case RKind::UpAdj: return RKind::Up;
    case RKind::DownAdj: return RKind::Down;
  }
  return k;
}

// 1-D [1,2,1]/4 smoothing with clamped borders, and its adjoint, on a strided line.
template <typename T>
void smooth_line(const T* in, T* out, int64_t len, int64_t step) {
  for (int64_t i = 0; i < len; ++i) {
    const int64_t a = std::max<int64_t>(i - 1, 0), b = std::min<int64_t>(i + 1, len - 1);
    out[i * step] = T(0.25) * in[a * step] + T(0.5) * in[i * step] + T(0.25) * in[b * step];
  }
}
template <typename T>
void smooth_line_adj(const T* in, T* out, int64_t len, int64_t step) {
  for (int64_t i = 0; i < len; ++i) out[i * step] = T(0);
  for (int64_t i = 0; i < len; ++i) {
    const int64_t a = std::max<int64_t>(i - 1, 0), b = std::min<int64_t>(i + 1, len - 1);
    const T v = in[i * step];
    out[a * step] += T(0.25) * v;
    out[i * step] += T(0.5) * v;
    out[b * step] += T(0.25) * v;
  }
}

template <typename T>
void smooth_plane(const T* in, T* out, int64_t h, int64_t w, bool adj, std::vector<T>& tmp) {
  tmp.resize(static_cast<size_t>(h * w));
  auto line = adj ? &smooth_line_adj<T> : &smooth_line<T>;
  for (int64_t y = 0; y < h; ++y) line(in + y * w, tmp.data() + y * w, w, 1);
  for (int64_t x = 0; x < w; ++x) line(tmp.data() + x, out + x, h, w);
}

template <typename T>
Tensor<T> resample_kernel(const Tensor<T>& x, RKind kind) {
  require(x.rank() == 4, "resample2x: need NCHW, got " + shape_str(x.shape()));
  const int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> tmp, buf;
  switch (kind) {
    case RKind::Up: {
      Tensor<T> y(Shape{x.dim(0), x.dim(1), 2 * h, 2 * w});
      buf.resize(static_cast<size_t>(4 * h * w));
      for (int64_t p = 0; p < planes; ++p) {
        const T* src = x.data() + p * h * w;
        for (int64_t i = 0; i < 2 * h; ++i)
          for (int64_t j = 0; j < 2 * w; ++j) buf[i * 2 * w + j] = src[(i / 2) * w + j / 2];
        smooth_plane(buf.data(), y.data() + p * 4 * h * w, 2 * h, 2 * w, false, tmp);
      }
      return y;
    }
    case RKind::UpAdj: {
      require(h % 2 == 0 && w % 2 == 0, "resample2x: odd extents");
      Tensor<T> y(Shape{x.dim(0), x.dim(1), h / 2, w / 2});
      buf.resize(static_cast<size_t>(h * w));
      for (int64_t p = 0; p < planes; ++p) {
        smooth_plane(x.data() + p * h * w, buf.data(), h, w, true, tmp);
        T* dst = y.data() + p * (h / 2) * (w / 2);
        for (int64_t i = 0; i < h / 2; ++i)
          for (int64_t j = 0; j < w / 2; ++j)
            dst[i * (w / 2) + j] = buf[(2 * i) * w + 2 * j] + buf[(2 * i) * w + 2 * j + 1] +
                                   buf[(2 * i + 1) * w + 2 * j] + buf[(2 * i + 1) * w + 2 * j + 1];
      }
      return y;
    }
    case RKind::Down: {
      require(h % 2 == 0 && w % 2 == 0, "resample2x: down needs even extents, got " + shape_str(x.shape()));
      Tensor<T> y(Shape{x.dim(0), x.dim(1), h / 2, w / 2});
      buf.resize(static_cast<size_t>(h * w));
      for (int64_t p = 0; p < planes; ++p) {
        smooth_plane(x.data() + p * h * w, buf.data(), h, w, false, tmp);
        T* dst = y.data() + p * (h / 2) * (w / 2);
        for (int64_t i = 0; i < h / 2; ++i)
          for (int64_t j = 0; j < w / 2; ++j) dst[i * (w / 2) + j] = buf[(2 * i) * w + 2 * j];
      }
      return y;
    }
    case RKind::DownAdj: {
      Tensor<T> y(Shape{x.dim(0), x.dim(1), 2 * h, 2 * w});
      buf.assign(static_cast<size_t>(4 * h * w), T(0));
      for (int64_t p = 0; p < planes; ++p) {
        const T* src = x.data() + p * h * w;
        for (int64_t i = 0; i < h; ++i)
          for (int64_t j = 0; j < w; ++j) buf[(2 * i) * 2 * w + 2 * j] = src[i * w + j];
        smooth_plane(buf.data(), y.data() + p * 4 * h * w, 2 * h, 2 * w, true, tmp);
      }
      return y;
    }
  }
  return {};
}

template <typename T>
Var<T> resample_op(const Var<T>& x, RKind kind) {
  return make_op<T>("resample", resample_kernel(x.value(), kind), {x},
                    [kind](const Var<T>& g, const Var<T>&, const std::vector<bool>&) {
                      return std::vector<Var<T>>{resample_op(g, adjoint(kind))};
                    });
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  return make_op<T>("add", map_binary(a.value(), b.value(), [](T x, T y) { return x + y; }), {a, b},
                    [](const Var<T>& g, const Var<T>&, const std::vector<bool>&) {
                      return std::vector<Var<T>>{g, g};
                    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  return make_op<T>("sub", map_binary(a.value(), b.value(), [](T x, T y) { return x - y; }), {a, b},
                    [](const Var<T>& g, const Var<T>&, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{g, needs[1] ? scale(g, T(-1)) : Var<T>()};
                    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  return make_op<T>("mul", map_binary(a.value(), b.value(), [](T x, T y) { return x * y; }), {a, b},
                    [a, b](const Var<T>& g, const Var<T>&, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{needs[0] ? mul(g, b) : Var<T>(), needs[1] ? mul(g, a) : Var<T>()};
                    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  return make_op<T>("scale", map_unary(a.value(), [c](T x) { return x * c; }), {a},
                    [c](const Var<T>& g, const Var<T>&, const std::vector<bool>&) {
                      return std::vector<Var<T>>{scale(g, c)};
                    });
}

template <typename T>
Var<T> add_const(const Var<T>& a, T c) {
  return make_op<T>("add_const", map_unary(a.value(), [c](T x) { return x + c; }), {a},
                    [](const Var<T>& g, const Var<T>&, const std::vector<bool>&) { return std::vector<Var<T>>{g}; });
}

template <typename T>
Var<T> mul_const(const Var<T>& a, std::shared_ptr<const Tensor<T>> m) {
  require_same(a.shape(), m->shape(), "mul_const");
  return make_op<T>("mul_const", map_binary(a.value(), *m, [](T x, T y) { return x * y; }), {a},
                    [m](const Var<T>& g, const Var<T>&, const std::vector<bool>&) {
                      return std::vector<Var<T>>{mul_const(g, m)};
                    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T alpha, T gain) {
  require(alpha > T(0) && alpha < T(1), "leaky_relu: alpha must lie in (0,1)");
  const T ga = gain * alpha;
  return make_op<T>("leaky_relu", map_unary(x.value(), [gain, ga](T v) { return v >= T(0) ? gain * v : ga * v; }),
                    {x}, [x, gain, ga](const Var<T>& g, const Var<T>&, const std::vector<bool>&) {
                      auto slope = std::make_shared<const Tensor<T>>(
                          map_unary(x.value(), [gain, ga](T v) { return v >= T(0) ? gain : ga; }));
                      return std::vector<Var<T>>{mul_const(g, slope)};
                    });
}

template <typename T>
Var<T> rsqrt(const Var<T>& x) {
  return make_op<T>("rsqrt", map_unary(x.value(), [](T v) { return T(1) / std::sqrt(v); }), {x},
                    [](const Var<T>& g, const Var<T>& y, const std::vector<bool>&) {
                      return std::vector<Var<T>>{mul(g, scale(mul(y, mul(y, y)), T(-0.5)))};
                    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  auto f = [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); };
  return make_op<T>("sigmoid", map_unary(x.value(), f), {x},
                    [](const Var<T>& g, const Var<T>& y, const std::vector<bool>&) {
                      return std::vector<Var<T>>{mul(g, mul(y, add_const(scale(y, T(-1)), T(1))))};
                    });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  auto f = [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); };
  return make_op<T>("softplus", map_unary(x.value(), f), {x},
                    [x](const Var<T>& g, const Var<T>&, const std::vector<bool>&) {
                      return std::vector<Var<T>>{mul(g, sigmoid(x))};
                    });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x.value().span()) s += v;
  Shape in_shape = x.shape();
  return make_op<T>("sum", Tensor<T>::scalar(s), {x},
                    [in_shape](const Var<T>& g, const Var<T>&, const std::vector<bool>&) {
                      return std::vector<Var<T>>{expand_scalar(g, in_shape)};
                    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Var<T> expand_scalar(const Var<T>& s, const Shape& shape) {
  require(s.size() == 1, "expand_scalar: need one element");
  Shape s_shape = s.shape();
  return make_op<T>("expand_scalar", Tensor<T>(shape, s.value()[0]), {s},
                    [s_shape](const Var<T>& g, const Var<T>&, const std::vector<bool>&) {
                      return std::vector<Var<T>>{reshape(sum(g), s_shape)};
                    });
}

// ---------------------------------------------------------------- matmul

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta, bool tb) {
  require(a.value().rank() == 2 && b.value().rank() == 2, "matmul: need 2-D operands");
  const int64_t m = ta ? a.dim(1) : a.dim(0), ka = ta ? a.dim(0) : a.dim(1);
  const int64_t kb = tb ? b.dim(1) : b.dim(0), n = tb ? b.dim(0) : b.dim(1);
  require(ka == kb, "matmul: inner dims " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> y(Shape{m, n});
  CMapR<T> A(a.value().data(), a.dim(0), a.dim(1));
  CMapR<T> B(b.value().data(), b.dim(0), b.dim(1));
  MapR<T> Y(y.data(), m, n);
  if (!ta && !tb) Y.noalias() = A * B;
  else if (ta && !tb) Y.noalias() = A.transpose() * B;
  else if (!ta && tb) Y.noalias() = A * B.transpose();
  else Y.noalias() = A.transpose() * B.transpose();
  return make_op<T>("matmul", std::move(y), {a, b},
                    [a, b, ta, tb](const Var<T>& g, const Var<T>&, const std::vector<bool>& needs) {
                      Var<T> ga, gb;
                      if (needs[0]) ga = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
                      if (needs[1]) gb = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
                      return std::vector<Var<T>>{ga, gb};
                    });
}

template <typename T>
Var<T> matmul_bias(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return add_bias(matmul(x, w), b);
}

// ---------------------------------------------------------------- channel ops

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b) {
  auto d = ncr(x.shape(), "add_bias");
  require(b.value().rank() == 1 && b.dim(0) == d.c, "add_bias: bias " + shape_str(b.shape()) + " for input " +
                                                        shape_str(x.shape()));
  Tensor<T> y = x.value();
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t c = 0; c < d.c; ++c) {
      T* p = y.data() + (n * d.c + c) * d.r;
      const T bv = b.value()[c];
      for (int64_t i = 0; i < d.r; ++i) p[i] += bv;
    }
  return make_op<T>("add_bias", std::move(y), {x, b},
                    [](const Var<T>& g, const Var<T>&, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{g, needs[1] ? channel_sum(g) : Var<T>()};
                    });
}

template <typename T>
Var<T> channel_sum(const Var<T>& x) {
  auto d = ncr(x.shape(), "channel_sum");
  Tensor<T> y(Shape{d.c});
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t c = 0; c < d.c; ++c) {
      const T* p = x.value().data() + (n * d.c + c) * d.r;
      T s = 0;
      for (int64_t i = 0; i < d.r; ++i) s += p[i];
      y[c] += s;
    }
  Shape in_shape = x.shape();
  return make_op<T>("channel_sum", std::move(y), {x},
                    [in_shape](const Var<T>& g, const Var<T>&, const std::vector<bool>&) {
                      return std::vector<Var<T>>{broadcast_channels(g, in_shape)};
                    });
}

template <typename T>
Var<T> broadcast_channels(const Var<T>& b, const Shape& shape) {
  auto d = ncr(shape, "broadcast_channels");
  require(b.value().rank() == 1 && b.dim(0) == d.c, "broadcast_channels: bad bias shape");
  Tensor<T> y(shape);
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t c = 0; c < d.c; ++c) std::fill_n(y.data() + (n * d.c + c) * d.r, d.r, b.value()[c]);
  return make_op<T>("broadcast_channels", std::move(y), {b},
                    [](const Var<T>& g, const Var<T>&, const std::vector<bool>&) {
                      return std::vector<Var<T>>{channel_sum(g)};
                    });
}

template <typename T>
Var<T> mul_channels(const Var<T>& x, const Var<T>& s) {
  auto d = ncr(x.shape(), "mul_channels");
  require(s.shape() == Shape{d.n, d.c}, "mul_channels: scale " + shape_str(s.shape()) + " for input " +
                                            shape_str(x.shape()));
  Tensor<T> y(x.shape());
  for (int64_t i = 0; i < d.n * d.c; ++i) {
    const T sv = s.value()[i];
    const T* p = x.value().data() + i * d.r;
    T* q = y.data() + i * d.r;
    for (int64_t j = 0; j < d.r; ++j) q[j] = p[j] * sv;
  }
  return make_op<T>("mul_channels", std::move(y), {x, s},
                    [x, s](const Var<T>& g, const Var<T>&, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{needs[0] ? mul_channels(g, s) : Var<T>(),
                                                 needs[1] ? channel_dot(g, x) : Var<T>()};
                    });
}

template <typename T>
Var<T> channel_dot(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "channel_dot");
  auto d = ncr(a.shape(), "channel_dot");
  Tensor<T> y(Shape{d.n, d.c});
  for (int64_t i = 0; i < d.n * d.c; ++i) {
    const T* p = a.value().data() + i * d.r;
    const T* q = b.value().data() + i * d.r;
    T s = 0;
    for (int64_t j = 0; j < d.r; ++j) s += p[j] * q[j];
    y[i] = s;
  }
  return make_op<T>("channel_dot", std::move(y), {a, b},
                    [a, b](const Var<T>& g, const Var<T>&, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{needs[0] ? mul_channels(b, g) : Var<T>(),
                                                 needs[1] ? mul_channels(a, g) : Var<T>()};
                    });
}

template <typename T>
Var<T> spatial_sum(const Var<T>& x) {
  auto d = ncr(x.shape(), "spatial_sum");
  Tensor<T> y(Shape{d.n, d.c});
  for (int64_t i = 0; i < d.n * d.c; ++i) {
    const T* p = x.value().data() + i * d.r;
    T s = 0;
    for (int64_t j = 0; j < d.r; ++j) s += p[j];
    y[i] = s;
  }
  Shape in_shape = x.shape();
  return make_op<T>("spatial_sum", std::move(y), {x},
                    [in_shape](const Var<T>& g, const Var<T>&, const std::vector<bool>&) {
                      return std::vector<Var<T>>{expand_spatial(g, in_shape)};
                    });
}

template <typename T>
Var<T> expand_spatial(const Var<T>& s, const Shape& shape) {
  auto d = ncr(shape, "expand_spatial");
  require(s.shape() == Shape{d.n, d.c}, "expand_spatial: bad source shape");
  Tensor<T> y(shape);
  for (int64_t i = 0; i < d.n * d.c; ++i) std::fill_n(y.data() + i * d.r, d.r, s.value()[i]);
  return make_op<T>("expand_spatial", std::move(y), {s},
                    [](const Var<T>& g, const Var<T>&, const std::vector<bool>&) {
                      return std::vector<Var<T>>{spatial_sum(g)};
                    });
}

// ---------------------------------------------------------------- conv

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int stride, int pad) {
  const ConvGeom g = conv_geom(x.shape(), w.shape(), stride, pad);
  return make_op<T>("conv2d", conv_forward(x.value(), w.value(), g), {x, w},
                    [x, w, g](const Var<T>& gy, const Var<T>&, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{
                          needs[0] ? conv2d_input_grad(gy, w, g.stride, g.pad, g.h, g.w) : Var<T>(),
                          needs[1] ? conv2d_weight_grad(x, gy, g.stride, g.pad, g.k) : Var<T>()};
                    });
}

template <typename T>
Var<T> conv2d_input_grad(const Var<T>& gy, const Var<T>& w, int stride, int pad, int64_t in_h, int64_t in_w) {
  const ConvGeom g = conv_geom(Shape{gy.dim(0), w.dim(1), in_h, in_w}, w.shape(), stride, pad);
  require(gy.shape() == Shape({g.n, g.o, g.ho, g.wo}), "conv2d_input_grad: gradient shape mismatch");
  return make_op<T>("conv2d_input_grad", conv_input_grad(gy.value(), w.value(), g), {gy, w},
                    [gy, w, g](const Var<T>& h, const Var<T>&, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{needs[0] ? conv2d(h, w, g.stride, g.pad) : Var<T>(),
                                                 needs[1] ? conv2d_weight_grad(h, gy, g.stride, g.pad, g.k) : Var<T>()};
                    });
}

template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& gy, int stride, int pad, int64_t k) {
  const ConvGeom g = conv_geom(x.shape(), Shape{gy.dim(1), x.dim(1), k, k}, stride, pad);
  require(gy.shape() == Shape({g.n, g.o, g.ho, g.wo}), "conv2d_weight_grad: gradient shape mismatch");
  return make_op<T>("conv2d_weight_grad", conv_weight_grad(x.value(), gy.value(), g), {x, gy},
                    [x, gy, g](const Var<T>& h, const Var<T>&, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{
                          needs[0] ? conv2d_input_grad(gy, h, g.stride, g.pad, g.h, g.w) : Var<T>(),
                          needs[1] ? conv2d(x, h, g.stride, g.pad) : Var<T>()};
                    });
}

template <typename T>
Var<T> resample2x(const Var<T>& x, Resample dir) {
  return resample_op(x, dir == Resample::Up ? RKind::Up : RKind::Down);
}

// ---------------------------------------------------------------- shape ops

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  require(!xs.empty(), "concat_channels: no inputs");
  auto d0 = ncr(xs[0].shape(), "concat_channels");
  int64_t total = 0;
  std::vector<int64_t> widths;
  for (const auto& x : xs) {
    auto d = ncr(x.shape(), "concat_channels");
    Shape a = x.shape(), b = xs[0].shape();
    a[1] = b[1] = 0;
    require(a == b, "concat_channels: incompatible shapes " + shape_str(x.shape()) + " vs " + shape_str(xs[0].shape()));
    widths.push_back(d.c);
    total += d.c;
  }
  Shape out_shape = xs[0].shape();
  out_shape[1] = total;
  Tensor<T> y(out_shape);
  for (int64_t n = 0; n < d0.n; ++n) {
    T* dst = y.data() + n * total * d0.r;
    for (size_t i = 0; i < xs.size(); ++i) {
      const int64_t len = widths[i] * d0.r;
      std::copy_n(xs[i].value().data() + n * len, len, dst);
      dst += len;
    }
  }
  return make_op<T>("concat_channels", std::move(y), xs,
                    [widths](const Var<T>& g, const Var<T>&, const std::vector<bool>& needs) {
                      std::vector<Var<T>> out(widths.size());
                      int64_t off = 0;
                      for (size_t i = 0; i < widths.size(); ++i) {
                        if (needs[i]) out[i] = slice_channels(g, off, off + widths[i]);
                        off += widths[i];
                      }
                      return out;
                    });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int64_t begin, int64_t end) {
  auto d = ncr(x.shape(), "slice_channels");
  require(0 <= begin && begin < end && end <= d.c, "slice_channels: range out of bounds");
  Shape out_shape = x.shape();
  out_shape[1] = end - begin;
  Tensor<T> y(out_shape);
  const int64_t len = (end - begin) * d.r;
  for (int64_t n = 0; n < d.n; ++n)
    std::copy_n(x.value().data() + (n * d.c + begin) * d.r, len, y.data() + n * len);
  Shape in_shape = x.shape();
  return make_op<T>("slice_channels", std::move(y), {x},
                    [in_shape, begin, end](const Var<T>& g, const Var<T>&, const std::vector<bool>&) {
                      std::vector<Var<T>> parts;
                      Shape s = in_shape;
                      if (begin > 0) {
                        s[1] = begin;
                        parts.push_back(constant(Tensor<T>(s)));
                      }
                      parts.push_back(g);
                      if (end < in_shape[1]) {
                        s[1] = in_shape[1] - end;
                        parts.push_back(constant(Tensor<T>(s)));
                      }
                      return std::vector<Var<T>>{parts.size() == 1 ? g : concat_channels(parts)};
                    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, const Shape& shape) {
  Shape in_shape = x.shape();
  return make_op<T>("reshape", x.value().reshaped(shape), {x},
                    [in_shape](const Var<T>& g, const Var<T>&, const std::vector<bool>&) {
                      return std::vector<Var<T>>{reshape(g, in_shape)};
                    });
}

template <typename T>
Var<T> normalize_2nd_moment(const Var<T>& x) {
  require(x.value().rank() == 2 && x.dim(1) >= 1, "normalize_2nd_moment: need N x D with D >= 1");
  const int64_t n = x.dim(0), d = x.dim(1);
  Var<T> rows = reshape(x, Shape{n, 1, d});
  Var<T> ms = scale(channel_dot(rows, rows), T(1) / static_cast<T>(d));
  return reshape(mul_channels(rows, rsqrt(add_const(ms, T(1e-8)))), Shape{n, d});
}

namespace kernels {
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  return conv_forward(x, w, conv_geom(x.shape(), w.shape(), stride, pad));
}
template <typename T>
Tensor<T> resample2x(const Tensor<T>& x, Resample dir) {
  return resample_kernel(x, dir == Resample::Up ? RKind::Up : RKind::Down);
}
}  // namespace kernels

#define TOGAN_INSTANTIATE_OPS(T)                                                                 \
  template Var<T> add(const Var<T>&, const Var<T>&);                                             \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                             \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                             \
  template Var<T> scale(const Var<T>&, T);                                                       \
  template Var<T> add_const(const Var<T>&, T);                                                   \
  template Var<T> mul_const(const Var<T>&, std::shared_ptr<const Tensor<T>>);                    \
  template Var<T> leaky_relu(const Var<T>&, T, T);                                               \
  template Var<T> rsqrt(const Var<T>&);                                                          \
  template Var<T> sigmoid(const Var<T>&);                                                        \
  template Var<T> softplus(const Var<T>&);                                                       \
  template Var<T> sum(const Var<T>&);                                                            \
  template Var<T> mean(const Var<T>&);                                                           \
  template Var<T> expand_scalar(const Var<T>&, const Shape&);                                    \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                              \
  template Var<T> matmul_bias(const Var<T>&, const Var<T>&, const Var<T>&);                      \
  template Var<T> add_bias(const Var<T>&, const Var<T>&);                                        \
  template Var<T> channel_sum(const Var<T>&);                                                    \
  template Var<T> broadcast_channels(const Var<T>&, const Shape&);                               \
  template Var<T> mul_channels(const Var<T>&, const Var<T>&);                                    \
  template Var<T> channel_dot(const Var<T>&, const Var<T>&);                                     \
  template Var<T> spatial_sum(const Var<T>&);                                                    \
  template Var<T> expand_spatial(const Var<T>&, const Shape&);                                   \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, int, int);                                \
  template Var<T> conv2d_input_grad(const Var<T>&, const Var<T>&, int, int, int64_t, int64_t);   \
  template Var<T> conv2d_weight_grad(const Var<T>&, const Var<T>&, int, int, int64_t);           \
  template Var<T> resample2x(const Var<T>&, Resample);                                           \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                                   \
  template Var<T> slice_channels(const Var<T>&, int64_t, int64_t);                               \
  template Var<T> reshape(const Var<T>&, const Shape&);                                          \
  template Var<T> normalize_2nd_moment(const Var<T>&);                                           \
  template Tensor<T> kernels::conv2d(const Tensor<T>&, const Tensor<T>&, int, int);              \
  template Tensor<T> kernels::resample2x(const Tensor<T>&, Resample);

TOGAN_INSTANTIATE_OPS(float)
TOGAN_INSTANTIATE_OPS(double)

}  // namespace togan::ad
