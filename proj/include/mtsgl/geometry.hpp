#pragma once

// Affine transform algebra, Hamming-space descriptor matching and affine
// estimation between point sets.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mtsgl/error.hpp"
#include "mtsgl/rng.hpp"

namespace mtsgl {

struct Vec2 {
  double x = 0;
  double y = 0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
};

inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }

/// 2x3 affine map p -> A p + t in pixel coordinates (x = column, y = row).
struct AffineTransform {
  double a11 = 1, a12 = 0, a13 = 0;
  double a21 = 0, a22 = 1, a23 = 0;

  static AffineTransform identity() { return {}; }
  static AffineTransform translation(double tx, double ty) { return {1, 0, tx, 0, 1, ty}; }
  static AffineTransform rotation(double theta, double tx = 0, double ty = 0) {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c, -s, tx, s, c, ty};
  }
  /// Rotation by theta about `center`, followed by a shift of `offset`.
  static AffineTransform rotation_about(double theta, Vec2 center, Vec2 offset = {}) {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c, -s, center.x - c * center.x + s * center.y + offset.x,
            s, c,  center.y - s * center.x - c * center.y + offset.y};
  }

  double det() const { return a11 * a22 - a12 * a21; }
  /// Rotation angle of the linear part (exact for rigid transforms).
  double angle() const { return std::atan2(a21, a11); }
  std::array<double, 6> coeffs() const { return {a11, a12, a13, a21, a22, a23}; }

  friend bool operator==(const AffineTransform&, const AffineTransform&) = default;
};

inline Vec2 apply(const AffineTransform& m, Vec2 p) {
  return {m.a11 * p.x + m.a12 * p.y + m.a13, m.a21 * p.x + m.a22 * p.y + m.a23};
}

/// compose(outer, inner) maps p to outer(inner(p)).
inline AffineTransform compose(const AffineTransform& outer, const AffineTransform& inner) {
  return {outer.a11 * inner.a11 + outer.a12 * inner.a21,
          outer.a11 * inner.a12 + outer.a12 * inner.a22,
          outer.a11 * inner.a13 + outer.a12 * inner.a23 + outer.a13,
          outer.a21 * inner.a11 + outer.a22 * inner.a21,
          outer.a21 * inner.a12 + outer.a22 * inner.a22,
          outer.a21 * inner.a13 + outer.a22 * inner.a23 + outer.a23};
}

inline bool is_invertible(const AffineTransform& m) {
  const double scale = std::abs(m.a11) + std::abs(m.a12) + std::abs(m.a21) + std::abs(m.a22);
  return std::isfinite(m.det()) && std::abs(m.det()) > 1e-12 * scale * scale;
}

inline AffineTransform invert(const AffineTransform& m) {
  detail::require(is_invertible(m), "invert", "singular linear part (det = ", m.det(), ")");
  const double inv = 1.0 / m.det();
  const double b11 = m.a22 * inv, b12 = -m.a12 * inv;
  const double b21 = -m.a21 * inv, b22 = m.a11 * inv;
  return {b11, b12, -(b11 * m.a13 + b12 * m.a23), b21, b22, -(b21 * m.a13 + b22 * m.a23)};
}

/// Six floats, row-major, on one line.
inline std::string to_string(const AffineTransform& m) {
  std::ostringstream os;
  os << std::setprecision(17);
  const auto c = m.coeffs();
  for (std::size_t i = 0; i < c.size(); ++i) os << (i ? " " : "") << c[i];
  return os.str();
}

inline AffineTransform parse_affine(const std::string& line) {
  std::istringstream is(line);
  AffineTransform m;
  is >> m.a11 >> m.a12 >> m.a13 >> m.a21 >> m.a22 >> m.a23;
  detail::require(static_cast<bool>(is), "parse_affine", "expected 6 floats, got '", line, "'");
  std::string rest;
  detail::require(!(is >> rest), "parse_affine", "trailing data in '", line, "'");
  return m;
}

// ---------------------------------------------------------------------------
// Correspondences and descriptors

/// p lies in image A, q in image B; fits estimate A <- B.
struct Correspondence {
  Vec2 p;
  Vec2 q;
};

struct BinaryDescriptor {
  static constexpr std::size_t kBits = 256;
  Vec2 location;
  std::array<std::uint64_t, kBits / 64> bits{};

  void set(std::size_t i, bool v) {
    const std::uint64_t mask = std::uint64_t{1} << (i % 64);
    bits[i / 64] = v ? (bits[i / 64] | mask) : (bits[i / 64] & ~mask);
  }
  bool test(std::size_t i) const { return (bits[i / 64] >> (i % 64)) & 1u; }
};

inline int hamming(const BinaryDescriptor& a, const BinaryDescriptor& b) {
  int d = 0;
  for (std::size_t w = 0; w < a.bits.size(); ++w) d += std::popcount(a.bits[w] ^ b.bits[w]);
  return d;
}

/// Brute-force 2-NN matching with Lowe's ratio test. A query whose two
/// nearest neighbours in B are both at distance zero is ambiguous and dropped.
inline std::vector<Correspondence> match_ratio_test(const std::vector<BinaryDescriptor>& desc_a,
                                                    const std::vector<BinaryDescriptor>& desc_b,
                                                    double ratio) {
  detail::require(!desc_a.empty() && !desc_b.empty(), "match_ratio_test",
                  "descriptor sets must be non-empty (|A|=", desc_a.size(),
                  ", |B|=", desc_b.size(), ")");
  detail::require(ratio > 0 && ratio < 1, "match_ratio_test", "ratio ", ratio,
                  " outside (0,1)");
  std::vector<Correspondence> out;
  if (desc_b.size() < 2) return out;
  for (const auto& qa : desc_a) {
    int d1 = std::numeric_limits<int>::max(), d2 = d1;
    std::size_t best = 0;
    for (std::size_t j = 0; j < desc_b.size(); ++j) {
      const int d = hamming(qa, desc_b[j]);
      if (d < d1) {
        d2 = d1;
        d1 = d;
        best = j;
      } else if (d < d2) {
        d2 = d;
      }
    }
    if (d2 == 0) continue;
    if (static_cast<double>(d1) < ratio * static_cast<double>(d2))
      out.push_back({qa.location, desc_b[best].location});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Affine estimation

namespace detail {

// Solves the symmetric 3x3 system A x = b by Gaussian elimination with
// partial pivoting. Returns nullopt when a pivot falls below `rel_tol`
// times the largest diagonal magnitude.
inline std::optional<std::array<double, 3>> solve3(std::array<std::array<double, 3>, 3> a,
                                                   std::array<double, 3> b, double rel_tol) {
  double scale = 0;
  for (int i = 0; i < 3; ++i) scale = std::max(scale, std::abs(a[i][i]));
  if (scale == 0) return std::nullopt;
  for (int c = 0; c < 3; ++c) {
    int piv = c;
    for (int r = c + 1; r < 3; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    if (std::abs(a[piv][c]) <= rel_tol * scale) return std::nullopt;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (int r = c + 1; r < 3; ++r) {
      const double f = a[r][c] / a[c][c];
      for (int k = c; k < 3; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::array<double, 3> x{};
  for (int r = 2; r >= 0; --r) {
    double s = b[r];
    for (int k = r + 1; k < 3; ++k) s -= a[r][k] * x[k];
    x[r] = s / a[r][r];
  }
  return x;
}

}  // namespace detail

/// Least-squares affine M minimising sum ||M(q) - p||^2 over the pairs. The
/// normal equations decouple into two 3x3 systems sharing one matrix; q is
/// centred first so the rank check is independent of absolute position.
inline AffineTransform fit_affine(const std::vector<Correspondence>& pairs) {
  detail::require(pairs.size() >= 3, "fit_affine", "need at least 3 pairs, got ", pairs.size());
  Vec2 cq{}, cp{};
  for (const auto& c : pairs) {
    cq = cq + c.q;
    cp = cp + c.p;
  }
  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  cq = inv_n * cq;
  cp = inv_n * cp;
  std::array<std::array<double, 3>, 3> ata{};
  std::array<double, 3> atx{}, aty{};
  for (const auto& c : pairs) {
    const std::array<double, 3> row{c.q.x - cq.x, c.q.y - cq.y, 1.0};
    const Vec2 p = c.p - cp;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) ata[i][j] += row[i] * row[j];
      atx[i] += row[i] * p.x;
      aty[i] += row[i] * p.y;
    }
  }
  auto sx = detail::solve3(ata, atx, 1e-10);
  auto sy = detail::solve3(ata, aty, 1e-10);
  detail::require(sx && sy, "fit_affine",
                  "rank-deficient normal equations (collinear or repeated points)");
  const auto& x = *sx;
  const auto& y = *sy;
  // Undo the centring: p = L (q - cq) + t' + cp.
  return {x[0], x[1], x[2] + cp.x - x[0] * cq.x - x[1] * cq.y,
          y[0], y[1], y[2] + cp.y - y[0] * cq.x - y[1] * cq.y};
}

struct RobustFitOptions {
  int iterations = 500;
  double inlier_px = 2.0;
  std::uint64_t seed = 0x5eed;
  /// The result is flagged unreliable below this inlier fraction.
  double min_inlier_fraction = 0.25;
};

struct RobustFit {
  AffineTransform transform;
  std::vector<std::size_t> inliers;
  double inlier_fraction = 0;
  /// RMS residual over the inliers after the final refit.
  double rms = 0;
  bool reliable = false;
};

inline double residual(const AffineTransform& m, const Correspondence& c) {
  return norm(apply(m, c.q) - c.p);
}

/// RANSAC over minimal 3-pair samples followed by a least-squares refit on
/// the best consensus set. Throws when no sample yields a consensus larger
/// than its own three points.
inline RobustFit fit_affine_robust(const std::vector<Correspondence>& pairs,
                                   const RobustFitOptions& opt = {}) {
  detail::require(pairs.size() >= 3, "fit_affine_robust", "need at least 3 pairs, got ",
                  pairs.size());
  Rng rng(opt.seed);
  auto pick = [&](Rng& r) { return static_cast<std::size_t>(r.below(pairs.size())); };
  auto consensus = [&](const AffineTransform& m) {
    std::vector<std::size_t> in;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (residual(m, pairs[i]) <= opt.inlier_px) in.push_back(i);
    return in;
  };
  std::vector<std::size_t> best;
  if (pairs.size() == 3) {
    try {
      best = consensus(fit_affine(pairs));
    } catch (const Error&) {
    }
  }
  for (int it = 0; it < opt.iterations && pairs.size() > 3; ++it) {
    const std::size_t i = pick(rng), j = pick(rng), k = pick(rng);
    if (i == j || j == k || i == k) continue;
    AffineTransform m;
    try {
      m = fit_affine({pairs[i], pairs[j], pairs[k]});
    } catch (const Error&) {
      continue;
    }
    auto in = consensus(m);
    if (in.size() > best.size()) best = std::move(in);
  }
  detail::require(best.size() >= 3 && (pairs.size() == 3 || best.size() > 3),
                  "fit_affine_robust", "no model reached a consensus beyond its own sample");
  // Refit, then re-collect inliers under the refined model.
  RobustFit out;
  auto subset = [&](const std::vector<std::size_t>& idx) {
    std::vector<Correspondence> s;
    for (auto i : idx) s.push_back(pairs[i]);
    return s;
  };
  out.transform = fit_affine(subset(best));
  for (int refine = 0; refine < 3; ++refine) {
    auto in = consensus(out.transform);
    if (in.size() < 3 || in == best) break;
    best = std::move(in);
    out.transform = fit_affine(subset(best));
  }
  out.inliers = best;
  out.inlier_fraction = static_cast<double>(best.size()) / static_cast<double>(pairs.size());
  double ss = 0;
  for (auto i : best) ss += std::pow(residual(out.transform, pairs[i]), 2);
  out.rms = std::sqrt(ss / static_cast<double>(best.size()));
  out.reliable = out.inlier_fraction >= opt.min_inlier_fraction && best.size() >= 6;
  return out;
}

}  // namespace mtsgl
