#pragma once

// Raster utilities shared by the losses and the data synthesis: exact
// Euclidean distance transform, nearest-neighbour affine warping, token grids
// and patchification.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mtsgl/geometry.hpp"
#include "mtsgl/image.hpp"

namespace mtsgl {

struct DistanceMap {
  static constexpr std::int64_t kInfinite = std::int64_t{1} << 50;

  std::size_t width = 0;
  std::size_t height = 0;
  /// Exact squared distances; kInfinite when no boundary pixel exists.
  std::vector<std::int64_t> squared;
  std::vector<double> values;

  /// True for empty or full masks, where the caller falls back to an
  /// unweighted loss.
  bool infinite() const { return !squared.empty() && squared.front() >= kInfinite; }
  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

namespace detail {

// One pass of the lower-envelope transform on squared distances along a line.
inline void envelope_1d(const std::int64_t* f, std::int64_t* d, std::size_t n,
                        std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr std::int64_t inf = DistanceMap::kInfinite;
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  std::size_t k = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto sq = [](std::int64_t q) { return q * q; };
  auto intersect = [&](std::size_t q, std::size_t p) {
    const auto qi = static_cast<std::int64_t>(q), pi = static_cast<std::int64_t>(p);
    return static_cast<double>((f[q] + sq(qi)) - (f[p] + sq(pi))) /
           static_cast<double>(2 * (qi - pi));
  };
  for (std::size_t q = 1; q < n; ++q) {
    double s = intersect(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const auto dq = static_cast<std::int64_t>(q) - static_cast<std::int64_t>(v[k]);
    d[q] = std::min(inf, dq * dq + f[v[k]]);
  }
}

}  // namespace detail

/// Exact squared Euclidean distance from every pixel to the nearest seed
/// pixel (seeds[i] != 0), separable row/column lower-envelope method.
inline std::vector<std::int64_t> squared_distance_to(const std::vector<std::uint8_t>& seeds,
                                                     std::size_t width, std::size_t height) {
  constexpr std::int64_t inf = DistanceMap::kInfinite;
  std::vector<std::int64_t> g(width * height), out(width * height);
  std::vector<std::int64_t> fcol(height), dcol(height);
  std::vector<std::size_t> v;
  std::vector<double> z;
  for (std::size_t x = 0; x < width; ++x) {
    for (std::size_t y = 0; y < height; ++y) fcol[y] = seeds[y * width + x] ? 0 : inf;
    detail::envelope_1d(fcol.data(), dcol.data(), height, v, z);
    for (std::size_t y = 0; y < height; ++y) g[y * width + x] = dcol[y];
  }
  for (std::size_t y = 0; y < height; ++y)
    detail::envelope_1d(g.data() + y * width, out.data() + y * width, width, v, z);
  return out;
}

/// Foreground pixels with a 4-neighbour inside the frame that is background.
inline std::vector<std::uint8_t> boundary_pixels(const BinaryMask& mask) {
  std::vector<std::uint8_t> b(mask.size(), 0);
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (!mask.get(x, y)) continue;
      const bool edge = (x > 0 && !mask.get(x - 1, y)) ||
                        (x + 1 < mask.width && !mask.get(x + 1, y)) ||
                        (y > 0 && !mask.get(x, y - 1)) ||
                        (y + 1 < mask.height && !mask.get(x, y + 1));
      b[y * mask.width + x] = edge ? 1 : 0;
    }
  }
  return b;
}

/// Euclidean distance of every pixel to the nearest boundary pixel of the
/// mask. Empty and full masks have no boundary and yield a uniform +inf map.
inline DistanceMap edt(const BinaryMask& mask) {
  detail::require(mask.width > 0 && mask.height > 0, "edt", "degenerate mask ", mask.width,
                  "x", mask.height);
  DistanceMap dm;
  dm.width = mask.width;
  dm.height = mask.height;
  dm.squared = squared_distance_to(boundary_pixels(mask), mask.width, mask.height);
  dm.values.resize(dm.squared.size());
  for (std::size_t i = 0; i < dm.squared.size(); ++i) {
    dm.values[i] = dm.squared[i] >= DistanceMap::kInfinite
                       ? std::numeric_limits<double>::infinity()
                       : std::sqrt(static_cast<double>(dm.squared[i]));
  }
  return dm;
}

/// Inverse-mapped nearest-neighbour warp: output pixel p takes the template
/// pixel nearest to M^-1(p).
inline BinaryMask warp_mask(const BinaryMask& tmpl, const AffineTransform& m, std::size_t out_w,
                            std::size_t out_h) {
  detail::require(is_invertible(m), "warp_mask", "singular transform ", to_string(m));
  const AffineTransform inv = invert(m);
  BinaryMask out(out_w, out_h);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      const Vec2 q = apply(inv, {static_cast<double>(x), static_cast<double>(y)});
      const long qx = static_cast<long>(std::floor(q.x + 0.5));
      const long qy = static_cast<long>(std::floor(q.y + 0.5));
      if (tmpl.contains(qx, qy) && tmpl.get(static_cast<std::size_t>(qx), static_cast<std::size_t>(qy)))
        out.set(x, y, true);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Token grids

struct GridCoord {
  double row = 0;
  double col = 0;
  friend bool operator==(const GridCoord&, const GridCoord&) = default;
};

/// (row, col) token coordinates of an h x w grid in row-major order.
inline std::vector<GridCoord> identity_grid(std::size_t h, std::size_t w) {
  detail::require(h > 0 && w > 0, "identity_grid", "empty grid ", h, "x", w);
  std::vector<GridCoord> g;
  g.reserve(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) g.push_back({double(i), double(j)});
  return g;
}

/// Pixel centre of token (row, col) under a stride-s encoder.
inline Vec2 token_center_px(double row, double col, std::size_t stride) {
  const double s = static_cast<double>(stride);
  return {s * col + s / 2 - 0.5, s * row + s / 2 - 0.5};
}

/// Token coordinates of the grid centres after mapping through M (pixel units).
inline std::vector<GridCoord> warp_grid(const AffineTransform& m, std::size_t h, std::size_t w,
                                        std::size_t stride) {
  std::vector<GridCoord> g = identity_grid(h, w);
  const double s = static_cast<double>(stride);
  for (auto& c : g) {
    const Vec2 p = apply(m, token_center_px(c.row, c.col, stride));
    c = {(p.y + 0.5 - s / 2) / s, (p.x + 0.5 - s / 2) / s};
  }
  return g;
}

/// depth x rows x cols grid; depth-major like an NCHW tensor without N.
struct TokenGrid {
  std::size_t rows = 0, cols = 0, depth = 0;
  std::vector<double> values;

  double at(std::size_t c, std::size_t i, std::size_t j) const {
    return values[(c * rows + i) * cols + j];
  }
};

/// Cuts the image into N x N patches and moves the N^2 pixels of each patch
/// into the channel axis; channel index is (dy * N + dx).
inline TokenGrid patchify(const FloatImage& img, std::size_t n) {
  detail::require(n > 0 && img.width % n == 0 && img.height % n == 0, "patchify", "image ",
                  img.width, "x", img.height, " not divisible by patch size ", n);
  TokenGrid t{img.height / n, img.width / n, n * n, {}};
  t.values.resize(img.size());
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t c = (y % n) * n + (x % n);
      t.values[(c * t.rows + y / n) * t.cols + x / n] = img.at(x, y);
    }
  return t;
}

inline FloatImage unpatchify(const TokenGrid& t) {
  const auto n = static_cast<std::size_t>(std::llround(std::sqrt(double(t.depth))));
  detail::require(n * n == t.depth, "unpatchify", "depth ", t.depth, " is not a square");
  FloatImage img(t.cols * n, t.rows * n);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      img.at(x, y) = t.values[(((y % n) * n + (x % n)) * t.rows + y / n) * t.cols + x / n];
  return img;
}

}  // namespace mtsgl
