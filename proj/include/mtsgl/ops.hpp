#pragma once

// Differentiable primitives. Image tensors are NCHW. Binary element-wise ops
// accept either equal shapes or one scalar operand; every other alignment
// must go through an explicit reshape.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mtsgl/kernels.hpp"
#include "mtsgl/tensor.hpp"

namespace mtsgl::ops {

namespace detail {

using mtsgl::detail::fail;
using mtsgl::detail::require;
using mtsgl::detail::shape_str;

inline Tape* recording(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

inline double* g(const std::shared_ptr<TensorImpl>& t) { return t->grad.data(); }

// Splits `shape` around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  require(axis < shape.size(), op, "axis ", axis, " out of range for shape ",
          shape_str(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

enum class Binary { add, sub, mul, div };

inline Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* op) {
  const bool same = a.shape() == b.shape();
  const bool a_scalar = a.numel() == 1 && !same;
  const bool b_scalar = b.numel() == 1 && !same;
  require(same || a_scalar || b_scalar, op, "shape mismatch ", shape_str(a.shape()),
          " vs ", shape_str(b.shape()));
  const Shape& shape = a_scalar ? b.shape() : a.shape();
  Tensor out = Tensor::zeros(shape);
  const std::size_t n = out.numel();
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.mutable_data();
  const std::size_t sa = a_scalar ? 0 : 1;
  const std::size_t sb = b_scalar ? 0 : 1;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ad[i * sa], y = bd[i * sb];
    switch (kind) {
      case Binary::add: od[i] = x + y; break;
      case Binary::sub: od[i] = x - y; break;
      case Binary::mul: od[i] = x * y; break;
      case Binary::div: od[i] = x / y; break;
    }
  }
  if (Tape* tape = recording({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record(out, {ai, bi}, [ai, bi, oi, kind, sa, sb, n] {
      const double* go = g(oi);
      for (std::size_t i = 0; i < n; ++i) {
        const double x = ai->data[i * sa], y = bi->data[i * sb];
        double dx = 0, dy = 0;
        switch (kind) {
          case Binary::add: dx = go[i]; dy = go[i]; break;
          case Binary::sub: dx = go[i]; dy = -go[i]; break;
          case Binary::mul: dx = go[i] * y; dy = go[i] * x; break;
          case Binary::div: dx = go[i] / y; dy = -go[i] * x / (y * y); break;
        }
        if (ai->requires_grad) ai->grad[i * sa] += dx;
        if (bi->requires_grad) bi->grad[i * sb] += dy;
      }
    });
  }
  return out;
}

template <typename Fwd, typename Deriv>
inline Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  Tensor out = Tensor::zeros(x.shape());
  auto xd = x.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = fwd(xd[i]);
  if (Tape* tape = recording({&x})) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(out, {xi}, [xi, oi, deriv] {
      const double* go = g(oi);
      for (std::size_t i = 0; i < xi->data.size(); ++i) {
        xi->grad[i] += go[i] * deriv(xi->data[i], oi->data[i]);
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, detail::Binary::add, "add");
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, detail::Binary::sub, "sub");
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, detail::Binary::mul, "mul");
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(a, b, detail::Binary::div, "div");
}

inline Tensor scale(const Tensor& x, double alpha) {
  return detail::unary(
      x, [alpha](double v) { return alpha * v; },
      [alpha](double, double) { return alpha; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor sqrt(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  detail::require(shape_numel(shape) == x.numel(), "reshape", "cannot reshape ",
                  detail::shape_str(x.shape()), " to ", detail::shape_str(shape));
  Tensor out = Tensor::from(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (Tape* tape = detail::recording({&x})) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(out, {xi}, [xi, oi] {
      kernels::axpy(1.0, detail::g(oi), detail::g(xi), xi->data.size());
    });
  }
  return out;
}

inline Tensor sum(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (Tape* tape = detail::recording({&x})) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(out, {xi}, [xi, oi] {
      const double go = oi->grad[0];
      for (double& v : xi->grad) v += go;
    });
  }
  return out;
}

inline Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul",
                  "incompatible operands ", detail::shape_str(a.shape()), " x ",
                  detail::shape_str(b.shape()));
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor out = Tensor::zeros({M, N});
  kernels::gemm_nn(M, N, K, a.data().data(), b.data().data(), out.mutable_data().data());
  if (Tape* tape = detail::recording({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record(out, {ai, bi}, [ai, bi, oi, M, N, K] {
      if (ai->requires_grad)
        kernels::gemm_nt(M, K, N, detail::g(oi), bi->data.data(), detail::g(ai));
      if (bi->requires_grad)
        kernels::gemm_tn(K, N, M, ai->data.data(), detail::g(oi), detail::g(bi));
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& x) {
  detail::require(x.rank() == 2, "transpose", "expected a matrix, got ",
                  detail::shape_str(x.shape()));
  const std::size_t R = x.dim(0), C = x.dim(1);
  Tensor out = Tensor::zeros({C, R});
  auto xd = x.data();
  auto od = out.mutable_data();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) od[c * R + r] = xd[r * C + c];
  if (Tape* tape = detail::recording({&x})) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(out, {xi}, [xi, oi, R, C] {
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) xi->grad[r * C + c] += oi->grad[c * R + r];
    });
  }
  return out;
}

/// y = x W^T + b for x [N,in], W [out,in], b [out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require(x.rank() == 2 && w.rank() == 2 && b.rank() == 1 && x.dim(1) == w.dim(1) &&
                      b.dim(0) == w.dim(0),
                  "linear", "incompatible operands x", detail::shape_str(x.shape()), " W",
                  detail::shape_str(w.shape()), " b", detail::shape_str(b.shape()));
  const std::size_t N = x.dim(0), I = x.dim(1), O = w.dim(0);
  Tensor out = Tensor::zeros({N, O});
  auto od = out.mutable_data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o) od[n * O + o] = b[o];
  kernels::gemm_nt(N, O, I, x.data().data(), w.data().data(), od.data());
  if (Tape* tape = detail::recording({&x, &w, &b})) {
    auto xi = x.impl(), wi = w.impl(), bi = b.impl(), oi = out.impl();
    tape->record(out, {xi, wi, bi}, [xi, wi, bi, oi, N, I, O] {
      const double* go = detail::g(oi);
      if (xi->requires_grad) kernels::gemm_nn(N, I, O, go, wi->data.data(), detail::g(xi));
      if (wi->requires_grad) kernels::gemm_tn(O, I, N, go, xi->data.data(), detail::g(wi));
      if (bi->requires_grad)
        for (std::size_t n = 0; n < N; ++n) kernels::axpy(1.0, go + n * O, detail::g(bi), O);
    });
  }
  return out;
}

/// 2-D convolution (cross-correlation) of x [N,Cin,H,W] with w [Cout,Cin,kh,kw]
/// and bias b [Cout].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                     std::size_t pad) {
  detail::require(x.rank() == 4 && w.rank() == 4 && b.rank() == 1, "conv2d",
                  "expected x[N,C,H,W], w[O,C,kh,kw], b[O]; got ", detail::shape_str(x.shape()),
                  ", ", detail::shape_str(w.shape()), ", ", detail::shape_str(b.shape()));
  detail::require(x.dim(1) == w.dim(1) && b.dim(0) == w.dim(0) && stride > 0, "conv2d",
                  "channel mismatch: input ", detail::shape_str(x.shape()), ", weight ",
                  detail::shape_str(w.shape()), ", bias ", detail::shape_str(b.shape()));
  const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  detail::require(H + 2 * pad >= kh && W + 2 * pad >= kw, "conv2d", "kernel ", kh, "x", kw,
                  " larger than padded input ", detail::shape_str(x.shape()));
  kernels::ConvGeometry geo{Cin, H, W, kh, kw, stride, pad,
                            (H + 2 * pad - kh) / stride + 1, (W + 2 * pad - kw) / stride + 1};
  const std::size_t K = Cin * kh * kw, P = geo.out_h * geo.out_w;
  Tensor out = Tensor::zeros({N, Cout, geo.out_h, geo.out_w});
  std::vector<double> col(K * P);
  auto od = out.mutable_data();
  for (std::size_t n = 0; n < N; ++n) {
    kernels::im2col(geo, x.data().data() + n * Cin * H * W, col.data());
    double* on = od.data() + n * Cout * P;
    for (std::size_t o = 0; o < Cout; ++o) std::fill_n(on + o * P, P, b[o]);
    kernels::gemm_nn(Cout, P, K, w.data().data(), col.data(), on);
  }
  if (Tape* tape = detail::recording({&x, &w, &b})) {
    auto xi = x.impl(), wi = w.impl(), bi = b.impl(), oi = out.impl();
    tape->record(out, {xi, wi, bi}, [xi, wi, bi, oi, geo, N, K, P, Cout] {
      const std::size_t in_plane = geo.channels * geo.height * geo.width;
      std::vector<double> col(K * P), dcol(K * P);
      for (std::size_t n = 0; n < N; ++n) {
        const double* go = detail::g(oi) + n * Cout * P;
        if (wi->requires_grad) {
          kernels::im2col(geo, xi->data.data() + n * in_plane, col.data());
          kernels::gemm_nt(Cout, K, P, go, col.data(), detail::g(wi));
        }
        if (bi->requires_grad) {
          for (std::size_t o = 0; o < Cout; ++o) {
            double s = 0;
            for (std::size_t p = 0; p < P; ++p) s += go[o * P + p];
            bi->grad[o] += s;
          }
        }
        if (xi->requires_grad) {
          std::fill(dcol.begin(), dcol.end(), 0.0);
          kernels::gemm_tn(K, P, Cout, wi->data.data(), go, dcol.data());
          kernels::col2im_add(geo, dcol.data(), detail::g(xi) + n * in_plane);
        }
      }
    });
  }
  return out;
}

/// Nearest-neighbour 2x upsampling of x [N,C,H,W].
inline Tensor upsample2x(const Tensor& x) {
  detail::require(x.rank() == 4, "upsample2x", "expected NCHW, got ",
                  detail::shape_str(x.shape()));
  const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out = Tensor::zeros({x.dim(0), x.dim(1), 2 * H, 2 * W});
  auto xd = x.data();
  auto od = out.mutable_data();
  for (std::size_t c = 0; c < NC; ++c)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t xx = 0; xx < 2 * W; ++xx)
        od[(c * 2 * H + y) * 2 * W + xx] = xd[(c * H + y / 2) * W + xx / 2];
  if (Tape* tape = detail::recording({&x})) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(out, {xi}, [xi, oi, NC, H, W] {
      for (std::size_t c = 0; c < NC; ++c)
        for (std::size_t y = 0; y < 2 * H; ++y)
          for (std::size_t xx = 0; xx < 2 * W; ++xx)
            xi->grad[(c * H + y / 2) * W + xx / 2] += oi->grad[(c * 2 * H + y) * 2 * W + xx];
    });
  }
  return out;
}

namespace detail {

inline Tensor pool2d(const Tensor& x, std::size_t k, std::size_t stride, bool is_max,
                     const char* op) {
  require(x.rank() == 4 && k > 0 && stride > 0 && x.dim(2) >= k && x.dim(3) >= k, op,
          "window ", k, " does not fit input ", shape_str(x.shape()));
  const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = (H - k) / stride + 1, Wo = (W - k) / stride + 1;
  Tensor out = Tensor::zeros({x.dim(0), x.dim(1), Ho, Wo});
  std::vector<std::size_t> argmax(is_max ? out.numel() : 0);
  auto xd = x.data();
  auto od = out.mutable_data();
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t c = 0; c < NC; ++c) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const std::size_t o = (c * Ho + oy) * Wo + ox;
        double acc = is_max ? -std::numeric_limits<double>::infinity() : 0.0;
        std::size_t best = 0;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t idx = (c * H + oy * stride + i) * W + ox * stride + j;
            if (is_max) {
              if (xd[idx] > acc) {
                acc = xd[idx];
                best = idx;
              }
            } else {
              acc += xd[idx];
            }
          }
        }
        od[o] = is_max ? acc : acc * inv;
        if (is_max) argmax[o] = best;
      }
    }
  }
  if (Tape* tape = recording({&x})) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(out, {xi}, [xi, oi, argmax = std::move(argmax), is_max, NC, H, W, Ho, Wo, k,
                             stride, inv] {
      for (std::size_t c = 0; c < NC; ++c) {
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::size_t o = (c * Ho + oy) * Wo + ox;
            const double go = oi->grad[o];
            if (is_max) {
              xi->grad[argmax[o]] += go;
              continue;
            }
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j)
                xi->grad[(c * H + oy * stride + i) * W + ox * stride + j] += go * inv;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor max_pool2d(const Tensor& x, std::size_t k, std::size_t stride) {
  return detail::pool2d(x, k, stride, true, "max_pool2d");
}

inline Tensor avg_pool2d(const Tensor& x, std::size_t k, std::size_t stride) {
  return detail::pool2d(x, k, stride, false, "avg_pool2d");
}

/// Mean over the spatial axes of x [N,C,H,W], giving [N,C].
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require(x.rank() == 4, "global_avg_pool", "expected NCHW, got ",
                  detail::shape_str(x.shape()));
  const std::size_t NC = x.dim(0) * x.dim(1), P = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({x.dim(0), x.dim(1)});
  auto xd = x.data();
  auto od = out.mutable_data();
  const double inv = 1.0 / static_cast<double>(P);
  for (std::size_t c = 0; c < NC; ++c) {
    double s = 0;
    for (std::size_t p = 0; p < P; ++p) s += xd[c * P + p];
    od[c] = s * inv;
  }
  if (Tape* tape = detail::recording({&x})) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(out, {xi}, [xi, oi, NC, P, inv] {
      for (std::size_t c = 0; c < NC; ++c) {
        const double go = oi->grad[c] * inv;
        for (std::size_t p = 0; p < P; ++p) xi->grad[c * P + p] += go;
      }
    });
  }
  return out;
}

/// Concatenates NCHW tensors along the channel axis.
inline Tensor concat_channels(const std::vector<Tensor>& xs) {
  detail::require(!xs.empty(), "concat_channels", "no inputs");
  const Shape& s0 = xs.front().shape();
  detail::require(s0.size() == 4, "concat_channels", "expected NCHW, got ",
                  detail::shape_str(s0));
  std::size_t C = 0;
  for (const auto& x : xs) {
    detail::require(x.rank() == 4 && x.dim(0) == s0[0] && x.dim(2) == s0[2] && x.dim(3) == s0[3],
                    "concat_channels", "extent mismatch ", detail::shape_str(x.shape()), " vs ",
                    detail::shape_str(s0));
    C += x.dim(1);
  }
  const std::size_t N = s0[0], P = s0[2] * s0[3];
  Tensor out = Tensor::zeros({N, C, s0[2], s0[3]});
  auto od = out.mutable_data();
  std::size_t offset = 0;
  for (const auto& x : xs) {
    const std::size_t Ci = x.dim(1);
    for (std::size_t n = 0; n < N; ++n)
      std::copy_n(x.data().data() + n * Ci * P, Ci * P, od.data() + (n * C + offset) * P);
    offset += Ci;
  }
  Tape* tape = Tape::active();
  bool any = false;
  for (const auto& x : xs) any = any || x.requires_grad();
  if (tape && any) {
    std::vector<std::shared_ptr<TensorImpl>> ins;
    for (const auto& x : xs) ins.push_back(x.impl());
    auto oi = out.impl();
    tape->record(out, ins, [ins, oi, N, C, P] {
      std::size_t off = 0;
      for (const auto& xi : ins) {
        const std::size_t Ci = xi->shape[1];
        if (xi->requires_grad)
          for (std::size_t n = 0; n < N; ++n)
            kernels::axpy(1.0, oi->grad.data() + (n * C + off) * P, xi->grad.data() + n * Ci * P,
                          Ci * P);
        off += Ci;
      }
    });
  }
  return out;
}

/// Slice `index` along axis 0, dropping that axis.
inline Tensor select(const Tensor& x, std::size_t index) {
  detail::require(x.rank() >= 2 && index < x.dim(0), "select", "index ", index,
                  " out of range for ", detail::shape_str(x.shape()));
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t block = shape_numel(shape);
  std::vector<double> vals(x.data().begin() + index * block,
                           x.data().begin() + (index + 1) * block);
  Tensor out = Tensor::from(std::move(shape), std::move(vals));
  if (Tape* tape = detail::recording({&x})) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(out, {xi}, [xi, oi, index, block] {
      kernels::axpy(1.0, oi->grad.data(), xi->grad.data() + index * block, block);
    });
  }
  return out;
}

namespace detail {

inline Tensor softmax_impl(const Tensor& x, std::size_t axis, bool log_space) {
  const AxisSplit s = split_axis(x.shape(), axis, log_space ? "log_softmax" : "softmax");
  Tensor out = Tensor::zeros(x.shape());
  auto xd = x.data();
  auto od = out.mutable_data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, xd[base + e * s.inner]);
      double z = 0;
      for (std::size_t e = 0; e < s.extent; ++e) z += std::exp(xd[base + e * s.inner] - mx);
      const double lz = std::log(z);
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double l = xd[base + e * s.inner] - mx - lz;
        od[base + e * s.inner] = log_space ? l : std::exp(l);
      }
    }
  }
  if (Tape* tape = recording({&x})) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(out, {xi}, [xi, oi, s, log_space] {
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.extent * s.inner + i;
          double acc = 0;
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t k = base + e * s.inner;
            acc += log_space ? oi->grad[k] : oi->grad[k] * oi->data[k];
          }
          for (std::size_t e = 0; e < s.extent; ++e) {
            const std::size_t k = base + e * s.inner;
            xi->grad[k] += log_space ? oi->grad[k] - std::exp(oi->data[k]) * acc
                                     : oi->data[k] * (oi->grad[k] - acc);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor softmax(const Tensor& x, std::size_t axis) {
  return detail::softmax_impl(x, axis, false);
}

inline Tensor log_softmax(const Tensor& x, std::size_t axis) {
  return detail::softmax_impl(x, axis, true);
}

/// Scalar sum_k weights[k] * x.flat[indices[k]].
inline Tensor gather_sum(const Tensor& x, std::vector<std::size_t> indices,
                         std::vector<double> weights) {
  detail::require(indices.size() == weights.size(), "gather_sum", indices.size(),
                  " indices but ", weights.size(), " weights");
  double s = 0;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    detail::require(indices[k] < x.numel(), "gather_sum", "index ", indices[k],
                    " out of range for ", detail::shape_str(x.shape()));
    s += weights[k] * x[indices[k]];
  }
  Tensor out = Tensor::scalar(s);
  if (Tape* tape = detail::recording({&x})) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(out, {xi}, [xi, oi, idx = std::move(indices), w = std::move(weights)] {
      const double go = oi->grad[0];
      for (std::size_t k = 0; k < idx.size(); ++k) xi->grad[idx[k]] += go * w[k];
    });
  }
  return out;
}

/// Divides each line of the matrix x along `axis` by sqrt(sum of squares + eps).
inline Tensor normalize_l2(const Tensor& x, std::size_t axis, double eps) {
  detail::require(x.rank() == 2 && axis < 2, "normalize_l2", "expected a matrix, got ",
                  detail::shape_str(x.shape()));
  const std::size_t R = x.dim(0), C = x.dim(1);
  const std::size_t lines = axis == 0 ? C : R, len = axis == 0 ? R : C;
  const std::size_t line_stride = axis == 0 ? 1 : C, elem_stride = axis == 0 ? C : 1;
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> norms(lines);
  auto xd = x.data();
  auto od = out.mutable_data();
  for (std::size_t l = 0; l < lines; ++l) {
    double ss = 0;
    for (std::size_t e = 0; e < len; ++e) {
      const double v = xd[l * line_stride + e * elem_stride];
      ss += v * v;
    }
    norms[l] = std::sqrt(ss + eps);
    for (std::size_t e = 0; e < len; ++e) {
      const std::size_t k = l * line_stride + e * elem_stride;
      od[k] = xd[k] / norms[l];
    }
  }
  if (Tape* tape = detail::recording({&x})) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(out, {xi}, [xi, oi, norms = std::move(norms), lines, len, line_stride,
                             elem_stride] {
      for (std::size_t l = 0; l < lines; ++l) {
        double acc = 0;
        for (std::size_t e = 0; e < len; ++e) {
          const std::size_t k = l * line_stride + e * elem_stride;
          acc += oi->grad[k] * oi->data[k];
        }
        for (std::size_t e = 0; e < len; ++e) {
          const std::size_t k = l * line_stride + e * elem_stride;
          xi->grad[k] += (oi->grad[k] - oi->data[k] * acc) / norms[l];
        }
      }
    });
  }
  return out;
}

}  // namespace mtsgl::ops
