#pragma once

// Keypoints and 256-bit binary descriptors for binary silhouettes.
//
// Masks are first turned into a clamped signed-distance image so corner
// responses and intensity comparisons vary smoothly. Keypoints are Harris
// maxima with sub-pixel refinement; each descriptor compares pairs of
// bilinear samples from a fixed pattern inside a 15x15 patch, rotated by the
// intensity-centroid orientation so that rotated silhouettes still match.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "mtsgl/geometry.hpp"
#include "mtsgl/imageops.hpp"
#include "mtsgl/rng.hpp"

namespace mtsgl {

/// Signed distance to the silhouette edge (positive inside), clamped to
/// [-clamp, clamp] and rescaled to [0, 1].
inline FloatImage signed_distance_image(const BinaryMask& mask, double clamp = 4.0) {
  std::vector<std::uint8_t> fg(mask.pixels.begin(), mask.pixels.end());
  std::vector<std::uint8_t> bg(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) bg[i] = fg[i] ? 0 : 1;
  const auto to_bg = squared_distance_to(bg, mask.width, mask.height);
  const auto to_fg = squared_distance_to(fg, mask.width, mask.height);
  FloatImage out(mask.width, mask.height);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    // Half-pixel offsets put the zero level on the edge between pixels.
    const double d = fg[i] ? std::sqrt(double(std::min(to_bg[i], DistanceMap::kInfinite))) - 0.5
                           : 0.5 - std::sqrt(double(std::min(to_fg[i], DistanceMap::kInfinite)));
    out.pixels[i] = (std::clamp(d, -clamp, clamp) + clamp) / (2 * clamp);
  }
  return out;
}

inline FloatImage gaussian_blur(const FloatImage& img, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(2 * r + 1);
  double ks = 0;
  for (int i = -r; i <= r; ++i) ks += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= ks;
  const auto W = static_cast<long>(img.width), H = static_cast<long>(img.height);
  FloatImage tmp(img.width, img.height), out(img.width, img.height);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * img.at(std::clamp(x + i, 0L, W - 1), y);
      tmp.at(x, y) = s;
    }
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.at(x, std::clamp(y + i, 0L, H - 1));
      out.at(x, y) = s;
    }
  return out;
}

inline double bilinear(const FloatImage& img, double x, double y) {
  const double fx = std::clamp(x, 0.0, double(img.width - 1));
  const double fy = std::clamp(y, 0.0, double(img.height - 1));
  const auto x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double tx = fx - double(x0), ty = fy - double(y0);
  return (1 - ty) * ((1 - tx) * img.at(x0, y0) + tx * img.at(x1, y0)) +
         ty * ((1 - tx) * img.at(x0, y1) + tx * img.at(x1, y1));
}

struct Keypoint {
  Vec2 location;
  double response = 0;
  double angle = 0;
};

struct HarrisOptions {
  double sigma = 1.0;
  double k = 0.04;
  double rel_threshold = 0.001;
  int nms_radius = 1;
  // Large silhouettes reach within a few pixels of the frame, and losing the
  // wingtip corners hurts the fit far more than clamped patch samples do.
  std::size_t border = 2;
  std::size_t max_keypoints = 200;
};

inline std::vector<Keypoint> detect_harris(const FloatImage& img, const HarrisOptions& opt = {}) {
  const std::size_t W = img.width, H = img.height;
  FloatImage ixx(W, H), iyy(W, H), ixy(W, H);
  for (std::size_t y = 1; y + 1 < H; ++y)
    for (std::size_t x = 1; x + 1 < W; ++x) {
      const double gx = 0.5 * (img.at(x + 1, y) - img.at(x - 1, y));
      const double gy = 0.5 * (img.at(x, y + 1) - img.at(x, y - 1));
      ixx.at(x, y) = gx * gx;
      iyy.at(x, y) = gy * gy;
      ixy.at(x, y) = gx * gy;
    }
  ixx = gaussian_blur(ixx, opt.sigma);
  iyy = gaussian_blur(iyy, opt.sigma);
  ixy = gaussian_blur(ixy, opt.sigma);
  FloatImage resp(W, H);
  double peak = 0;
  for (std::size_t i = 0; i < resp.size(); ++i) {
    const double a = ixx.pixels[i], b = iyy.pixels[i], c = ixy.pixels[i];
    resp.pixels[i] = a * b - c * c - opt.k * (a + b) * (a + b);
    peak = std::max(peak, resp.pixels[i]);
  }
  std::vector<Keypoint> kps;
  if (peak <= 0) return kps;
  const long r = opt.nms_radius;
  for (std::size_t y = opt.border; y + opt.border < H; ++y) {
    for (std::size_t x = opt.border; x + opt.border < W; ++x) {
      const double v = resp.at(x, y);
      if (v < opt.rel_threshold * peak) continue;
      bool is_max = true;
      for (long dy = -r; dy <= r && is_max; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          if (!dx && !dy) continue;
          const double u = resp.at(std::size_t(long(x) + dx), std::size_t(long(y) + dy));
          // Strict on one side of the scan order so plateaus keep one pixel.
          if (u > v || (u == v && (dy < 0 || (dy == 0 && dx < 0)))) {
            is_max = false;
            break;
          }
        }
      if (!is_max) continue;
      // Quadratic sub-pixel refinement per axis.
      auto offset = [](double m, double c, double p) {
        const double den = m - 2 * c + p;
        return den < 0 ? std::clamp(0.5 * (m - p) / den, -0.5, 0.5) : 0.0;
      };
      const double ox = offset(resp.at(x - 1, y), v, resp.at(x + 1, y));
      const double oy = offset(resp.at(x, y - 1), v, resp.at(x, y + 1));
      kps.push_back({{double(x) + ox, double(y) + oy}, v, 0});
    }
  }
  std::stable_sort(kps.begin(), kps.end(),
                   [](const Keypoint& a, const Keypoint& b) { return a.response > b.response; });
  if (kps.size() > opt.max_keypoints) kps.resize(opt.max_keypoints);
  return kps;
}

/// Orientation of the intensity centroid inside a disc of radius 7.
inline double centroid_angle(const FloatImage& img, Vec2 c, int radius = 7) {
  double m10 = 0, m01 = 0;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy > radius * radius) continue;
      const double v = bilinear(img, c.x + dx, c.y + dy);
      m10 += dx * v;
      m01 += dy * v;
    }
  return std::atan2(m01, m10);
}

namespace detail {

struct SamplePair {
  Vec2 a, b;
};

// Fixed comparison pattern: isotropic Gaussian offsets clipped to the
// 15x15 patch, drawn once from a constant seed.
inline const std::array<SamplePair, BinaryDescriptor::kBits>& descriptor_pattern() {
  static const auto pattern = [] {
    std::array<SamplePair, BinaryDescriptor::kBits> p{};
    Rng rng(0xb81e5eedULL);
    const double sd = 15.0 / 5.0;
    auto draw = [&] {
      Vec2 v;
      do {
        v = {sd * rng.normal(), sd * rng.normal()};
      } while (v.x * v.x + v.y * v.y > 7.0 * 7.0);
      return v;
    };
    for (auto& sp : p) sp = {draw(), draw()};
    return p;
  }();
  return pattern;
}

}  // namespace detail

inline BinaryDescriptor describe(const FloatImage& img, const Keypoint& kp) {
  BinaryDescriptor d;
  d.location = kp.location;
  const double c = std::cos(kp.angle), s = std::sin(kp.angle);
  auto sample = [&](Vec2 o) {
    return bilinear(img, kp.location.x + c * o.x - s * o.y, kp.location.y + s * o.x + c * o.y);
  };
  const auto& pattern = detail::descriptor_pattern();
  for (std::size_t i = 0; i < pattern.size(); ++i)
    d.set(i, sample(pattern[i].a) < sample(pattern[i].b));
  return d;
}

struct RegistrationOptions {
  double ratio = 0.75;
  double clamp = 3.0;
  /// Blur levels of the signed-distance image; keypoints are pooled over all.
  std::vector<double> scales{0.8, 2.0};
  HarrisOptions harris;
  RobustFitOptions fit{500, 1.0, 0x5eed, 0.25};
  /// Guided re-matching after the robust fit: keypoints of the same scale
  /// that are mutual nearest neighbours within this radius under the
  /// current estimate join the least-squares refit.
  double guided_radius = 1.0;
  int guided_passes = 3;
};

/// Keypoints plus oriented descriptors for a binary silhouette, one list per
/// blur scale.
inline std::vector<std::vector<BinaryDescriptor>> mask_descriptors(
    const BinaryMask& mask, const RegistrationOptions& opt = {}) {
  const FloatImage sd = signed_distance_image(mask, opt.clamp);
  std::vector<std::vector<BinaryDescriptor>> out;
  for (double sigma : opt.scales) {
    const FloatImage img = gaussian_blur(sd, sigma);
    auto& level = out.emplace_back();
    for (auto kp : detect_harris(img, opt.harris)) {
      kp.angle = centroid_angle(img, kp.location);
      level.push_back(describe(img, kp));
    }
  }
  return out;
}

namespace detail {

inline std::vector<BinaryDescriptor> flatten(const std::vector<std::vector<BinaryDescriptor>>& v) {
  std::vector<BinaryDescriptor> out;
  for (const auto& level : v) out.insert(out.end(), level.begin(), level.end());
  return out;
}

inline std::size_t nearest(const std::vector<BinaryDescriptor>& set, Vec2 p) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double d = norm(set[i].location - p);
    if (d < bd) bd = d, best = i;
  }
  return best;
}

// Mutual nearest neighbours (mask point p, template point q) with
// |M(q) - p| <= radius, per scale.
inline std::vector<Correspondence> guided_pairs(const std::vector<std::vector<BinaryDescriptor>>& a,
                                                const std::vector<std::vector<BinaryDescriptor>>& b,
                                                const AffineTransform& m, double radius) {
  std::vector<Correspondence> out;
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (a[l].empty() || b[l].empty()) continue;
    std::vector<BinaryDescriptor> mapped = b[l];
    for (auto& d : mapped) d.location = apply(m, d.location);
    for (std::size_t i = 0; i < a[l].size(); ++i) {
      const std::size_t j = nearest(mapped, a[l][i].location);
      if (norm(mapped[j].location - a[l][i].location) > radius) continue;
      if (nearest(a[l], mapped[j].location) != i) continue;
      out.push_back({a[l][i].location, b[l][j].location});
    }
  }
  return out;
}

}  // namespace detail

/// Matches mask (A) against template (B) with the ratio test and fits the
/// affine map template -> mask.
inline RobustFit register_mask_to_template(const BinaryMask& mask, const BinaryMask& tmpl,
                                           const RegistrationOptions& opt = {}) {
  const auto la = mask_descriptors(mask, opt);
  const auto lb = mask_descriptors(tmpl, opt);
  const auto da = detail::flatten(la), db = detail::flatten(lb);
  detail::require(!da.empty() && !db.empty(), "register_mask_to_template",
                  "no keypoints found (mask ", da.size(), ", template ", db.size(), ")");
  RobustFit fit = fit_affine_robust(match_ratio_test(da, db, opt.ratio), opt.fit);
  for (int pass = 0; pass < opt.guided_passes; ++pass) {
    const auto pairs = detail::guided_pairs(la, lb, fit.transform, opt.guided_radius);
    if (pairs.size() < 6) break;
    try {
      fit.transform = fit_affine(pairs);
    } catch (const Error&) {
      break;
    }
    double ss = 0;
    for (const auto& c : pairs) ss += std::pow(residual(fit.transform, c), 2);
    fit.rms = std::sqrt(ss / double(pairs.size()));
  }
  return fit;
}

}  // namespace mtsgl
