#pragma once

// The three task objectives: image classification cross entropy,
// boundary-weighted segmentation cross entropy, and the structural
// consistency loss over normalized token correlations.

#include <cmath>
#include <cstdint>
#include <vector>

#include "mtsgl/imageops.hpp"
#include "mtsgl/ops.hpp"

namespace mtsgl {

/// Mean cross entropy. `logits` is [C] with one label or [N, C] with N labels.
inline Tensor loss_cls(const Tensor& logits, const std::vector<std::size_t>& labels) {
  detail::require(logits.rank() == 1 || logits.rank() == 2, "loss_cls",
                  "logits must be [C] or [N, C], got ", detail::shape_str(logits.shape()));
  const std::size_t N = logits.rank() == 2 ? logits.dim(0) : 1;
  const std::size_t C = logits.shape().back();
  detail::require(C >= 2, "loss_cls", "need at least 2 classes, got ", C);
  detail::require(labels.size() == N, "loss_cls", labels.size(), " labels for ", N, " rows");
  const Tensor lp = ops::log_softmax(logits, logits.rank() - 1);
  std::vector<std::size_t> idx(N);
  for (std::size_t n = 0; n < N; ++n) {
    detail::require(labels[n] < C, "loss_cls", "label ", labels[n], " out of range [0, ", C, ")");
    idx[n] = n * C + labels[n];
  }
  return ops::gather_sum(lp, std::move(idx), std::vector<double>(N, -1.0 / double(N)));
}

inline Tensor loss_cls(const Tensor& logits, std::size_t label) {
  return loss_cls(logits, std::vector<std::size_t>{label});
}

/// Per-pixel ground truth for one sample: class index in [0, C] (C is
/// background) and the boundary emphasis Phi = 1 / (1 + d).
struct SegTarget {
  std::size_t width = 0, height = 0;
  std::vector<std::size_t> classes;
  std::vector<double> phi;
};

/// Phi from a distance map; the +inf sentinel of empty or full masks maps to
/// 0, which leaves plain cross entropy.
inline std::vector<double> boundary_weights(const DistanceMap& dm) {
  std::vector<double> phi(dm.values.size(), 0.0);
  if (dm.infinite()) return phi;
  for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = 1.0 / (1.0 + dm.values[i]);
  return phi;
}

inline SegTarget make_seg_target(const BinaryMask& mask, std::size_t class_id,
                                 std::size_t num_classes) {
  detail::require(class_id < num_classes, "make_seg_target", "class ", class_id,
                  " out of range [0, ", num_classes, ")");
  SegTarget t{mask.width, mask.height, std::vector<std::size_t>(mask.size(), num_classes),
              boundary_weights(edt(mask))};
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.pixels[i]) t.classes[i] = class_id;
  return t;
}

/// Mean over all pixels of (1 + Phi) * CE. `logits` is [N, C+1, H, W].
inline Tensor loss_ssa(const Tensor& logits, const std::vector<SegTarget>& targets) {
  detail::require(logits.rank() == 4, "loss_ssa", "logits must be [N, C+1, H, W], got ",
                  detail::shape_str(logits.shape()));
  const std::size_t N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  detail::require(targets.size() == N, "loss_ssa", targets.size(), " targets for batch of ", N);
  const std::size_t P = H * W;
  std::vector<std::size_t> idx;
  std::vector<double> w;
  idx.reserve(N * P);
  w.reserve(N * P);
  const double inv = -1.0 / double(N * P);
  for (std::size_t n = 0; n < N; ++n) {
    const SegTarget& t = targets[n];
    detail::require(t.width == W && t.height == H && t.classes.size() == P && t.phi.size() == P,
                    "loss_ssa", "target ", n, " is ", t.width, "x", t.height, ", logits are ", W,
                    "x", H);
    for (std::size_t p = 0; p < P; ++p) {
      detail::require(t.classes[p] < K, "loss_ssa", "class ", t.classes[p], " at pixel ", p,
                      " exceeds ", K - 1);
      idx.push_back((n * K + t.classes[p]) * P + p);
      w.push_back(inv * (1.0 + t.phi[p]));
    }
  }
  return ops::gather_sum(ops::log_softmax(logits, 1), std::move(idx), std::move(w));
}

enum class Direction { source_to_target, target_to_source };

/// Rows index the "from" grid and columns the "to" grid in row-major token
/// order: values[a * hw + b]. For source_to_target a = (i, j) in the image
/// grid and b = (k, l) in the template grid.
struct CorrelationVolume {
  std::size_t h = 0, w = 0;
  Direction direction = Direction::source_to_target;
  Tensor values;  // [h*w, h*w]
};

struct CorrelationPair {
  CorrelationVolume st, ts;
};

inline constexpr double kCorrelationEps = 1e-8;

/// Normalized correlations between two [d, h, w] token grids. Inner products
/// are clamped at zero; C_st divides each template token's column by the L2
/// norm over all image tokens, and C_ts is the mirror image.
inline CorrelationPair correlation_volume(const Tensor& fs, const Tensor& ft) {
  detail::require(fs.rank() == 3 && fs.shape() == ft.shape(), "correlation_volume",
                  "feature grids must be equal [d, h, w], got ", detail::shape_str(fs.shape()),
                  " and ", detail::shape_str(ft.shape()));
  const std::size_t d = fs.dim(0), h = fs.dim(1), w = fs.dim(2);
  const Tensor a = ops::reshape(fs, {d, h * w});
  const Tensor b = ops::reshape(ft, {d, h * w});
  const Tensor p = ops::relu(ops::matmul(ops::transpose(a), b));  // [ij, kl]
  return {{h, w, Direction::source_to_target, ops::normalize_l2(p, 0, kCorrelationEps)},
          {h, w, Direction::target_to_source,
           ops::normalize_l2(ops::transpose(p), 0, kCorrelationEps)}};
}

struct ConsistencyMask {
  std::size_t h = 0, w = 0;
  double phi = 1.0;
  Direction direction = Direction::source_to_target;
  std::vector<std::uint8_t> bits;  // same layout as CorrelationVolume

  bool at(std::size_t a, std::size_t b) const { return bits[a * h * w + b] != 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : bits) n += v;
    return n;
  }
};

/// Token pairs that agree with M (template -> image) to within phi tokens.
/// Forward: |p(i,j) - M q(k,l)| <= phi * s; reverse: |q(k,l) - M^-1 p(i,j)|
/// <= phi * s, stored [kl][ij].
inline ConsistencyMask consistency_mask(const AffineTransform& m, std::size_t h, std::size_t w,
                                        std::size_t stride, double phi, Direction dir) {
  detail::require(is_invertible(m), "consistency_mask", "singular transform ", to_string(m));
  detail::require(h > 0 && w > 0 && stride > 0 && phi >= 0, "consistency_mask",
                  "bad grid ", h, "x", w, " stride ", stride, " phi ", phi);
  const AffineTransform map = dir == Direction::source_to_target ? m : invert(m);
  const std::size_t n = h * w;
  std::vector<Vec2> centers(n), mapped(n);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      centers[i * w + j] = token_center_px(double(i), double(j), stride);
      mapped[i * w + j] = apply(map, centers[i * w + j]);
    }
  const double r = phi * double(stride);
  ConsistencyMask out{h, w, phi, dir, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      const Vec2 d = centers[a] - mapped[b];
      out.bits[a * n + b] = d.x * d.x + d.y * d.y <= r * r ? 1 : 0;
    }
  return out;
}

struct ScrLoss {
  Tensor value;
  /// Both masks were empty (template mapped outside the frame); value is 0.
  bool empty = false;
};

/// -mean(C_st over m_st) - mean(C_ts over m_ts). An empty direction
/// contributes nothing.
inline ScrLoss loss_scr(const CorrelationVolume& cst, const CorrelationVolume& cts,
                        const ConsistencyMask& mst, const ConsistencyMask& mts) {
  const std::size_t n = cst.h * cst.w;
  auto check = [&](const CorrelationVolume& c, const ConsistencyMask& m, const char* which) {
    detail::require(c.values.defined() && c.values.shape() == Shape{n, n} &&
                        m.bits.size() == n * n && c.direction == m.direction,
                    "loss_scr", which, " volume/mask mismatch: ",
                    c.values.defined() ? detail::shape_str(c.values.shape()) : "<undefined>",
                    " vs ", m.bits.size(), " mask bits");
  };
  check(cst, mst, "source->target");
  check(cts, mts, "target->source");
  const Tensor* volumes[] = {&cst.values, &cts.values};
  const ConsistencyMask* masks[] = {&mst, &mts};
  Tensor total;
  for (int k = 0; k < 2; ++k) {
    const std::size_t count = masks[k]->count();
    if (count == 0) continue;
    std::vector<std::size_t> idx;
    idx.reserve(count);
    for (std::size_t i = 0; i < n * n; ++i)
      if (masks[k]->bits[i]) idx.push_back(i);
    Tensor term = ops::gather_sum(*volumes[k], std::move(idx),
                                  std::vector<double>(count, -1.0 / double(count)));
    total = total.defined() ? ops::add(total, term) : term;
  }
  if (!total.defined()) return {Tensor::scalar(0.0), true};
  return {total, false};
}

}  // namespace mtsgl
