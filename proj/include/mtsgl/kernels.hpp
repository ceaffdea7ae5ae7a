#pragma once

// Row-major dense kernels used by matmul and convolution. Loop orders keep
// the innermost loop contiguous so the compiler can vectorize it; reductions
// use four fixed accumulators so results do not depend on vector width.

#include <cstddef>

namespace mtsgl::kernels {

inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A,
                    const double* B, double* C) {
  for (std::size_t i = 0; i < M; ++i) {
    double* crow = C + i * N;
    const double* arow = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = arow[k];
      if (a == 0.0) continue;
      axpy(a, B + k * N, crow, N);
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
inline void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A,
                    const double* B, double* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* arow = A + i * K;
    double* crow = C + i * N;
    for (std::size_t j = 0; j < N; ++j) crow[j] += dot(arow, B + j * K, K);
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
inline void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A,
                    const double* B, double* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const double* arow = A + k * M;
    const double* brow = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const double a = arow[i];
      if (a == 0.0) continue;
      axpy(a, brow, C + i * N, N);
    }
  }
}

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t stride, pad;
  std::size_t out_h, out_w;
};

// col[(c*kh + i)*kw + j, oy*ow + ox] = x[c, oy*s + i - pad, ox*s + j - pad]
inline void im2col(const ConvGeometry& g, const double* x, double* col) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        double* dst = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          double* drow = dst + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) drow[ox] = 0.0;
            continue;
          }
          const double* srow = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            drow[ox] = (ix < 0 || ix >= static_cast<long>(g.width))
                           ? 0.0
                           : srow[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

inline void col2im_add(const ConvGeometry& g, const double* col, double* x) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const double* src = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          double* xrow = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const double* srow = src + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            xrow[static_cast<std::size_t>(ix)] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace mtsgl::kernels
