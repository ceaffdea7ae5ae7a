#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary. These are deliberately naive.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mtsgl/imageops.hpp"
#include "mtsgl/losses.hpp"
#include "mtsgl/pareto.hpp"
#include "mtsgl/rng.hpp"

namespace mtsgl::oracle {

inline BinaryMask random_mask(Rng& rng, std::size_t w, std::size_t h, double density) {
  BinaryMask m(w, h);
  for (auto& p : m.pixels) p = rng.uniform() < density ? 1 : 0;
  return m;
}

/// Squared distance to the nearest boundary pixel by scanning all of them.
inline std::vector<std::int64_t> brute_force_edt(const BinaryMask& m) {
  std::vector<std::size_t> bx, by;
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      if (!m.get(x, y)) continue;
      bool edge = false;
      if (x > 0 && !m.get(x - 1, y)) edge = true;
      if (x + 1 < m.width && !m.get(x + 1, y)) edge = true;
      if (y > 0 && !m.get(x, y - 1)) edge = true;
      if (y + 1 < m.height && !m.get(x, y + 1)) edge = true;
      if (edge) {
        bx.push_back(x);
        by.push_back(y);
      }
    }
  std::vector<std::int64_t> out(m.size(), DistanceMap::kInfinite);
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x)
      for (std::size_t k = 0; k < bx.size(); ++k) {
        const auto dx = std::int64_t(x) - std::int64_t(bx[k]);
        const auto dy = std::int64_t(y) - std::int64_t(by[k]);
        out[y * m.width + x] = std::min(out[y * m.width + x], dx * dx + dy * dy);
      }
  return out;
}

inline std::vector<double> random_vector(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Three gradients in R^d. Every fourth instance makes two of them parallel
/// (positive multiples), which forces the closed form onto the boundary.
inline std::vector<std::vector<double>> random_gradient_triple(Rng& rng, std::size_t d,
                                                               int instance) {
  std::vector<std::vector<double>> g;
  for (int i = 0; i < 3; ++i) {
    auto v = random_vector(rng, d);
    const double s = std::exp(rng.uniform(-2, 2));
    for (auto& x : v) x *= s;
    g.push_back(std::move(v));
  }
  if (instance % 4 == 3) {
    const double c = rng.uniform(1.5, 4);
    for (std::size_t k = 0; k < d; ++k) g[1][k] = c * g[0][k];
  }
  return g;
}

inline GramMatrix loop_gram(const std::vector<std::vector<double>>& g) {
  GramMatrix G{g.size(), std::vector<double>(g.size() * g.size())};
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j) G(i, j) = dot(g[i], g[j]);
  return G;
}

struct GridMin {
  double norm_sq = std::numeric_limits<double>::infinity();
  double a[3] = {0, 0, 0};
};

/// Exhaustive search over the 3-simplex lattice with the given step.
inline GridMin simplex_grid_min(const GramMatrix& G, double step = 1e-3) {
  const long n = std::lround(1 / step);
  GridMin best;
  for (long i = 0; i <= n; ++i)
    for (long j = 0; i + j <= n; ++j) {
      const double a[3] = {double(i) / double(n), double(j) / double(n),
                           double(n - i - j) / double(n)};
      double q = 0;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) q += a[r] * G(r, c) * a[c];
      if (q < best.norm_sq) {
        best.norm_sq = q;
        for (int r = 0; r < 3; ++r) best.a[r] = a[r];
      }
    }
  return best;
}

/// Four-index loop over token pairs; bit (a, b) as in ConsistencyMask.
inline std::vector<std::uint8_t> brute_force_consistency(const AffineTransform& m, std::size_t h,
                                                          std::size_t w, std::size_t stride,
                                                          double phi, Direction dir) {
  const AffineTransform map = dir == Direction::source_to_target ? m : invert(m);
  const double s = double(stride);
  const double thr = phi * s;
  std::vector<std::uint8_t> bits(h * w * h * w, 0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < h; ++k)
        for (std::size_t l = 0; l < w; ++l) {
          const double ax = s * double(j) + s / 2 - 0.5, ay = s * double(i) + s / 2 - 0.5;
          const double bx = s * double(l) + s / 2 - 0.5, by = s * double(k) + s / 2 - 0.5;
          const double px = map.a11 * bx + map.a12 * by + map.a13;
          const double py = map.a21 * bx + map.a22 * by + map.a23;
          const double dx = ax - px, dy = ay - py;
          if (dx * dx + dy * dy <= thr * thr) bits[(i * w + j) * h * w + k * w + l] = 1;
        }
  return bits;
}

/// One-hot template tokens ft and image tokens fs that copy the template token
/// nearest to M^-1 of each image token centre. Image tokens mapping outside
/// the template grid get a random one-hot. Both are [h*w, h, w].
struct TokenPair {
  Tensor fs, ft;
};

inline TokenPair consistent_tokens(Rng& rng, const AffineTransform& m, std::size_t h,
                                   std::size_t w, std::size_t stride) {
  const std::size_t n = h * w;
  const double s = double(stride);
  std::vector<double> ft(n * n, 0.0), fs(n * n, 0.0);
  for (std::size_t t = 0; t < n; ++t) ft[t * n + t] = 1;  // channel t, token t
  const AffineTransform inv = invert(m);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double px = s * double(j) + s / 2 - 0.5, py = s * double(i) + s / 2 - 0.5;
      const double qx = inv.a11 * px + inv.a12 * py + inv.a13;
      const double qy = inv.a21 * px + inv.a22 * py + inv.a23;
      const long l = std::lround((qx + 0.5 - s / 2) / s), k = std::lround((qy + 0.5 - s / 2) / s);
      std::size_t src;
      if (k >= 0 && l >= 0 && k < long(h) && l < long(w))
        src = std::size_t(k) * w + std::size_t(l);
      else
        src = rng.below(n);
      fs[src * n + i * w + j] = 1;
    }
  return {Tensor::from({n, h, w}, std::move(fs), true), Tensor::from({n, h, w}, std::move(ft), true)};
}

/// Same tokens with the spatial positions of fs randomly permuted.
inline Tensor shuffle_tokens(Rng& rng, const Tensor& f) {
  const std::size_t d = f.dim(0), n = f.dim(1) * f.dim(2);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm.begin(), perm.end());
  std::vector<double> out(d * n);
  auto src = f.data();
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t t = 0; t < n; ++t) out[c * n + perm[t]] = src[c * n + t];
  return Tensor::from(f.shape(), std::move(out), true);
}

/// RMS over the foreground pixels p of `mask` of |est(truth^-1 p) - p|: how far
/// the estimated template placement lands from the stored one.
inline double placement_rms(const AffineTransform& est, const AffineTransform& truth,
                            const BinaryMask& mask) {
  const AffineTransform inv = invert(truth);
  double ss = 0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (!mask.get(x, y)) continue;
      const Vec2 p{double(x), double(y)};
      const Vec2 d = apply(est, apply(inv, p)) - p;
      ss += d.x * d.x + d.y * d.y;
      ++n;
    }
  return n ? std::sqrt(ss / double(n)) : 0.0;
}

}  // namespace mtsgl::oracle
