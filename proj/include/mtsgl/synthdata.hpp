#pragma once

// Procedural stand-in for a SAR aircraft dataset: parametric top-view
// silhouettes, speckled scatterer renderings, annotation records and the
// translation corruption model for annotation-error studies.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mtsgl/geometry.hpp"
#include "mtsgl/image.hpp"
#include "mtsgl/imageops.hpp"
#include "mtsgl/rng.hpp"

namespace mtsgl {

enum class TailType { conventional, t_tail };

struct TemplateSpec {
  int class_id = 0;
  std::string name;
  double length = 40;     // S_l, px
  double wingspan = 40;   // S_w, px
  double sweep_deg = 25;  // leading-edge sweep
  int engines = 2;        // 2 or 4
  /// Lateral engine stations as fractions of the half-span, one per side.
  std::vector<double> engine_stations{0.35};
  TailType tail = TailType::conventional;

  friend bool operator==(const TemplateSpec&, const TemplateSpec&) = default;
};

/// Six classes along the confusable axes: sweep (A/B), engine count (C/D),
/// size and tail (C/F), plus a small regional type (E).
inline std::vector<TemplateSpec> default_specs() {
  return {
      {0, "A", 40, 40, 10, 2, {0.35}, TailType::conventional},
      {1, "B", 40, 40, 28, 2, {0.35}, TailType::conventional},
      {2, "C", 50, 48, 30, 4, {0.32, 0.62}, TailType::conventional},
      {3, "D", 50, 48, 30, 2, {0.38}, TailType::conventional},
      {4, "E", 34, 30, 22, 2, {0.30}, TailType::t_tail},
      {5, "F", 54, 52, 35, 4, {0.34, 0.64}, TailType::t_tail},
  };
}

inline Vec2 canvas_center(std::size_t w, std::size_t h) {
  return {(double(w) - 1) / 2, (double(h) - 1) / 2};
}

namespace detail {

struct Planform {
  double half_span, fuse_r, wing_le, root_chord, tip_chord, tan_sweep;
  double tail_le, tail_half_span, tail_root, tail_tip, tail_tan;
  double nacelle_a, nacelle_b;
};

inline Planform planform(const TemplateSpec& s) {
  Planform p{};
  const double L = s.length;
  p.half_span = s.wingspan / 2;
  p.fuse_r = std::max(1.5, 0.05 * L);
  p.wing_le = -0.12 * L;
  p.root_chord = 0.28 * L;
  p.tip_chord = 0.3 * p.root_chord;
  p.tan_sweep = std::tan(s.sweep_deg * std::numbers::pi / 180);
  const bool t_tail = s.tail == TailType::t_tail;
  p.tail_half_span = (t_tail ? 0.15 : 0.18) * s.wingspan;
  p.tail_root = (t_tail ? 0.12 : 0.14) * L;
  p.tail_tip = 0.45 * p.tail_root;
  p.tail_le = L / 2 - p.tail_root - (t_tail ? 0.0 : 0.06 * L);
  p.tail_tan = std::tan((s.sweep_deg + (t_tail ? 15.0 : 8.0)) * std::numbers::pi / 180);
  p.nacelle_a = std::max(1.5, 0.035 * L);
  p.nacelle_b = std::max(2.5, 0.07 * L);
  return p;
}

inline bool in_trapezoid(double u, double v, double le0, double half, double root, double tip,
                         double tan_sweep) {
  if (u > half) return false;
  const double le = le0 + u * tan_sweep;
  const double c = root + (tip - root) * (u / half);
  return v >= le && v <= le + c;
}

}  // namespace detail

/// Engine centres in canvas coordinates, left side first then right.
inline std::vector<Vec2> engine_positions(const TemplateSpec& s, std::size_t w, std::size_t h) {
  const auto p = detail::planform(s);
  const Vec2 c = canvas_center(w, h);
  std::vector<Vec2> out;
  for (double side : {-1.0, 1.0})
    for (double e : s.engine_stations) {
      const double u = e * p.half_span;
      out.push_back({c.x + side * u, c.y + p.wing_le + u * p.tan_sweep - 0.3 * p.nacelle_b});
    }
  return out;
}

/// Deterministic top-view silhouette, nose towards -y, mirror-symmetric
/// about the vertical axis through the canvas centre.
inline BinaryMask render_template(const TemplateSpec& s, std::size_t w, std::size_t h) {
  detail::require(s.engines == 2 || s.engines == 4, "render_template", "engine count ",
                  s.engines, " not in {2,4}");
  detail::require(static_cast<int>(s.engine_stations.size()) * 2 == s.engines,
                  "render_template", "engine stations do not match engine count");
  const Vec2 c = canvas_center(w, h);
  // Everything lies within |v| <= L/2 and |u| <= S_w/2; keep one pixel of margin.
  detail::require(s.length / 2 + 1 <= c.y && s.wingspan / 2 + 1 <= c.x, "render_template",
                  "silhouette ", s.length, "x", s.wingspan, " does not fit a ", w, "x", h,
                  " canvas");
  const auto p = detail::planform(s);
  const double L = s.length;
  const auto nacelles = engine_positions(s, w, h);
  BinaryMask m(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double u = std::abs(double(x) - c.x);
      const double v = double(y) - c.y;
      bool in = false;
      // Fuselage capsule.
      const double cap = L / 2 - p.fuse_r;
      if (std::abs(v) <= cap) in = u <= p.fuse_r;
      else in = std::hypot(u, std::abs(v) - cap) <= p.fuse_r;
      in = in || detail::in_trapezoid(u, v, p.wing_le, p.half_span, p.root_chord, p.tip_chord,
                                      p.tan_sweep);
      in = in || detail::in_trapezoid(u, v, p.tail_le, p.tail_half_span, p.tail_root,
                                      p.tail_tip, p.tail_tan);
      for (const Vec2& n : nacelles) {
        const double du = (u - std::abs(n.x - c.x)) / p.nacelle_a;
        const double dv = (v - (n.y - c.y)) / p.nacelle_b;
        in = in || du * du + dv * dv <= 1.0;
      }
      in = in && std::abs(v) <= L / 2;
      m.set(x, y, in);
    }
  }
  return m;
}

struct AnnotationRecord {
  int id = 0;
  GrayImage image;
  int label = 0;
  BinaryMask mask;
  int template_id = 0;
  AffineTransform transform;
  /// Set when a corrupted annotation pushed part of the silhouette off-frame.
  bool clipped = false;
};

struct RenderConfig {
  std::size_t width = 64, height = 64;
  double clutter = 0.05;           // mean background intensity
  double body = 0.15;              // diffuse return inside the silhouette
  bool speckle = true;             // unit-mean exponential multiplicative noise
  int scatterers_min = 14, scatterers_max = 28;
  double scatterer_min_amp = 0.25, scatterer_max_amp = 0.9;
  double engine_amp = 1.0;
  double blob_sigma = 0.8;
  double display_max = 1.0;        // amplitude mapped to 255

  static RenderConfig noiseless() {
    RenderConfig c;
    c.clutter = 0;
    c.speckle = false;
    return c;
  }
};

/// True when every template foreground pixel maps inside the output frame.
inline bool maps_inside(const BinaryMask& tmpl, const AffineTransform& m, std::size_t w,
                        std::size_t h) {
  for (std::size_t y = 0; y < tmpl.height; ++y)
    for (std::size_t x = 0; x < tmpl.width; ++x) {
      if (!tmpl.get(x, y)) continue;
      const Vec2 p = apply(m, {double(x), double(y)});
      if (p.x < 0 || p.y < 0 || p.x > double(w) - 1 || p.y > double(h) - 1) return false;
    }
  return true;
}

struct SynthesisStats {
  int scatterers = 0;
};

/// Renders one annotated sample: bright point scatterers on the warped
/// silhouette edge and at engine inlets over a weak body/clutter return,
/// all under multiplicative speckle.
inline AnnotationRecord synthesize_sample(const TemplateSpec& spec, const BinaryMask& tmpl,
                                          const AffineTransform& m, std::uint64_t noise_seed,
                                          const RenderConfig& cfg = {},
                                          SynthesisStats* stats = nullptr) {
  detail::require(maps_inside(tmpl, m, cfg.width, cfg.height), "synthesize_sample",
                  "warped silhouette is clipped by the frame (class ", spec.class_id, ")");
  Rng rng(noise_seed);
  AnnotationRecord rec;
  rec.label = spec.class_id;
  rec.template_id = spec.class_id;
  rec.transform = m;
  rec.mask = warp_mask(tmpl, m, cfg.width, cfg.height);

  FloatImage intensity(cfg.width, cfg.height, cfg.clutter);
  for (std::size_t i = 0; i < intensity.size(); ++i)
    if (rec.mask.pixels[i]) intensity.pixels[i] += cfg.body;

  const auto edges = boundary_pixels(rec.mask);
  std::vector<Vec2> edge_pts;
  for (std::size_t y = 0; y < cfg.height; ++y)
    for (std::size_t x = 0; x < cfg.width; ++x)
      if (edges[y * cfg.width + x]) edge_pts.push_back({double(x), double(y)});

  auto splat = [&](Vec2 c, double amp) {
    const double r = 2.5 * cfg.blob_sigma;
    const long x0 = long(std::ceil(c.x - r)), x1 = long(std::floor(c.x + r));
    const long y0 = long(std::ceil(c.y - r)), y1 = long(std::floor(c.y + r));
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        if (!intensity.contains(x, y)) continue;
        const double d2 = (x - c.x) * (x - c.x) + (y - c.y) * (y - c.y);
        if (d2 > r * r) continue;
        intensity.at(std::size_t(x), std::size_t(y)) +=
            amp * std::exp(-0.5 * d2 / (cfg.blob_sigma * cfg.blob_sigma));
      }
  };
  const int k = cfg.scatterers_min +
                int(rng.below(std::uint64_t(cfg.scatterers_max - cfg.scatterers_min + 1)));
  for (int i = 0; i < k && !edge_pts.empty(); ++i) {
    const Vec2 pt = edge_pts[rng.below(edge_pts.size())];
    splat(pt, rng.uniform(cfg.scatterer_min_amp, cfg.scatterer_max_amp));
  }
  for (const Vec2& e : engine_positions(spec, tmpl.width, tmpl.height))
    splat(apply(m, e), cfg.engine_amp * rng.uniform(0.7, 1.0));
  if (stats) stats->scatterers = k;

  rec.image = GrayImage(cfg.width, cfg.height);
  for (std::size_t i = 0; i < intensity.size(); ++i) {
    const double v = intensity.pixels[i] * (cfg.speckle ? rng.exponential() : 1.0);
    const double a = std::sqrt(v) / cfg.display_max;
    rec.image.pixels[i] = static_cast<std::uint8_t>(std::lround(255 * std::clamp(a, 0.0, 1.0)));
  }
  return rec;
}

/// Pose prior: a few preferred headings plus Gaussian jitter and a small
/// shift, applied about the canvas centre.
struct PoseConfig {
  std::vector<double> headings_deg{20, 110, 200, 290};
  double jitter_deg = 12;
  double max_shift = 2;
};

inline AffineTransform sample_pose(Rng& rng, std::size_t w, std::size_t h,
                                   const PoseConfig& cfg = {}) {
  const double base = cfg.headings_deg[rng.below(cfg.headings_deg.size())];
  const double theta = (base + cfg.jitter_deg * rng.normal()) * std::numbers::pi / 180;
  const Vec2 shift{rng.uniform(-cfg.max_shift, cfg.max_shift),
                   rng.uniform(-cfg.max_shift, cfg.max_shift)};
  return AffineTransform::rotation_about(theta, canvas_center(w, h), shift);
}

// ---------------------------------------------------------------------------
// Annotation corruption

struct CorruptionConfig {
  double lambda = 0;
  std::uint64_t seed = 0;
};

struct CorruptionOffsets {
  double along = 0;   // t1, along the fuselage axis
  double across = 0;  // t2, perpendicular to it
};

/// t1 ~ U(-lambda S_l, lambda S_l), t2 ~ U(-lambda S_w, lambda S_w).
inline CorruptionOffsets sample_corruption(Rng& rng, double lambda, double length,
                                           double wingspan) {
  detail::require(lambda >= 0, "sample_corruption", "negative error factor ", lambda);
  CorruptionOffsets t;
  t.along = rng.uniform(-lambda * length, lambda * length);
  t.across = rng.uniform(-lambda * wingspan, lambda * wingspan);
  return t;
}

/// Shifts the annotation by (t1, t2) in the aircraft frame given by the
/// rotation of M. The image is left untouched.
inline AnnotationRecord corrupt_annotation(const AnnotationRecord& rec, const TemplateSpec& spec,
                                           const BinaryMask& tmpl, const CorruptionConfig& cfg) {
  detail::require(cfg.lambda >= 0, "corrupt_annotation", "negative error factor ", cfg.lambda);
  if (cfg.lambda == 0) return rec;
  Rng rng(derive_seed(cfg.seed, std::uint64_t(rec.id), 0xC0de));
  const auto t = sample_corruption(rng, cfg.lambda, spec.length, spec.wingspan);
  const double theta = rec.transform.angle();
  // Template nose points to -y, so the aircraft axis in the image is R(0,-1).
  const Vec2 axis{std::sin(theta), -std::cos(theta)};
  const Vec2 perp{std::cos(theta), std::sin(theta)};
  const Vec2 shift = t.along * axis + t.across * perp;
  AnnotationRecord out = rec;
  out.transform = compose(AffineTransform::translation(shift.x, shift.y), rec.transform);
  out.mask = warp_mask(tmpl, out.transform, rec.mask.width, rec.mask.height);
  out.clipped = !maps_inside(tmpl, out.transform, rec.mask.width, rec.mask.height);
  return out;
}

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  std::vector<TemplateSpec> specs;
  std::vector<BinaryMask> templates;  // indexed by class id
  std::vector<AnnotationRecord> train;
  std::vector<AnnotationRecord> test;
};

struct DatasetConfig {
  std::vector<TemplateSpec> specs = default_specs();
  /// Samples per class before the split; imbalanced like a real collection.
  std::vector<int> counts{125, 105, 90, 75, 60, 45};
  double train_fraction = 0.6;  // 3:2 train:test
  std::uint64_t seed = 1;
  RenderConfig render{};
  PoseConfig pose{};
};

/// Samples of class c get consecutive ids; each sample's randomness derives
/// from (seed, id) only. Within a class, a seeded shuffle picks the
/// round(train_fraction * count) training samples.
inline Dataset build_dataset(const DatasetConfig& cfg) {
  detail::require(cfg.counts.size() == cfg.specs.size(), "build_dataset", cfg.counts.size(),
                  " counts for ", cfg.specs.size(), " classes");
  Dataset ds;
  ds.specs = cfg.specs;
  for (std::size_t c = 0; c < cfg.specs.size(); ++c) {
    detail::require(cfg.specs[c].class_id == int(c), "build_dataset",
                    "class ids must be 0..C-1 in order");
    ds.templates.push_back(render_template(cfg.specs[c], cfg.render.width, cfg.render.height));
  }
  int next_id = 0;
  for (std::size_t c = 0; c < cfg.specs.size(); ++c) {
    detail::require(cfg.counts[c] >= 1, "build_dataset", "class ", c, " has count ",
                    cfg.counts[c]);
    std::vector<AnnotationRecord> recs;
    for (int i = 0; i < cfg.counts[c]; ++i) {
      const int id = next_id++;
      Rng pose_rng(derive_seed(cfg.seed, std::uint64_t(id), 0x9053));
      AffineTransform m;
      do {
        m = sample_pose(pose_rng, cfg.render.width, cfg.render.height, cfg.pose);
      } while (!maps_inside(ds.templates[c], m, cfg.render.width, cfg.render.height));
      auto rec = synthesize_sample(cfg.specs[c], ds.templates[c], m,
                                   derive_seed(cfg.seed, std::uint64_t(id), 0x5a5a), cfg.render);
      rec.id = id;
      recs.push_back(std::move(rec));
    }
    std::vector<std::size_t> order(recs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng split_rng(derive_seed(cfg.seed, c, 0x5b11));
    split_rng.shuffle(order.begin(), order.end());
    const auto n_train = static_cast<std::size_t>(std::lround(cfg.train_fraction * recs.size()));
    std::vector<std::size_t> tr(order.begin(), order.begin() + long(n_train));
    std::vector<std::size_t> te(order.begin() + long(n_train), order.end());
    std::sort(tr.begin(), tr.end());
    std::sort(te.begin(), te.end());
    for (auto i : tr) ds.train.push_back(recs[i]);
    for (auto i : te) ds.test.push_back(recs[i]);
  }
  return ds;
}

namespace detail {

inline std::string sample_stem(int id) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << id;
  return os.str();
}

inline std::string tail_name(TailType t) { return t == TailType::t_tail ? "t_tail" : "conventional"; }

inline TailType parse_tail(const std::string& s) {
  if (s == "t_tail") return TailType::t_tail;
  require(s == "conventional", "parse_tail", "unknown tail type '", s, "'");
  return TailType::conventional;
}

inline void write_split(const std::filesystem::path& dir,
                        const std::vector<AnnotationRecord>& recs) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  for (const auto& r : recs) {
    const std::string stem = sample_stem(r.id);
    manifest << stem << '\n';
    write_pgm((dir / (stem + "_img.pgm")).string(), r.image);
    write_pgm((dir / (stem + "_mask.pgm")).string(), mask_to_gray(r.mask));
    std::ofstream meta(dir / (stem + "_meta.txt"));
    meta << "label " << r.label << '\n'
         << "template " << r.template_id << '\n'
         << "affine " << to_string(r.transform) << '\n';
  }
}

inline std::vector<AnnotationRecord> read_split(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  require(static_cast<bool>(manifest), "load_dataset", "missing manifest in ", dir.string());
  std::vector<AnnotationRecord> recs;
  std::string stem;
  while (std::getline(manifest, stem)) {
    if (stem.empty()) continue;
    AnnotationRecord r;
    r.id = std::stoi(stem);
    r.image = read_pgm((dir / (stem + "_img.pgm")).string());
    r.mask = gray_to_mask(read_pgm((dir / (stem + "_mask.pgm")).string()));
    std::ifstream meta(dir / (stem + "_meta.txt"));
    require(static_cast<bool>(meta), "load_dataset", "missing meta for sample ", stem);
    std::string key, line;
    bool have_label = false, have_tmpl = false, have_affine = false;
    while (meta >> key) {
      if (key == "label") have_label = static_cast<bool>(meta >> r.label);
      else if (key == "template") have_tmpl = static_cast<bool>(meta >> r.template_id);
      else if (key == "affine") {
        std::getline(meta, line);
        r.transform = parse_affine(line);
        have_affine = true;
      } else fail("load_dataset", "unknown meta key '", key, "' for sample ", stem);
    }
    require(have_label && have_tmpl && have_affine, "load_dataset", "incomplete meta for sample ",
            stem);
    recs.push_back(std::move(r));
  }
  return recs;
}

}  // namespace detail

/// Layout: classes.txt, templates/class_K.pgm, {train,test}/manifest.txt and
/// per sample XXXX_img.pgm, XXXX_mask.pgm, XXXX_meta.txt.
inline void write_dataset(const std::filesystem::path& root, const Dataset& ds) {
  std::filesystem::create_directories(root / "templates");
  std::ofstream classes(root / "classes.txt");
  classes << std::setprecision(17);
  for (const auto& s : ds.specs) {
    classes << s.class_id << ' ' << s.name << ' ' << s.length << ' ' << s.wingspan << ' '
            << s.sweep_deg << ' ' << s.engines << ' ';
    for (std::size_t i = 0; i < s.engine_stations.size(); ++i)
      classes << (i ? "," : "") << s.engine_stations[i];
    classes << ' ' << detail::tail_name(s.tail) << '\n';
  }
  for (std::size_t c = 0; c < ds.templates.size(); ++c)
    write_pgm((root / "templates" / ("class_" + std::to_string(c) + ".pgm")).string(),
              mask_to_gray(ds.templates[c]));
  detail::write_split(root / "train", ds.train);
  detail::write_split(root / "test", ds.test);
}

inline Dataset load_dataset(const std::filesystem::path& root) {
  Dataset ds;
  std::ifstream classes(root / "classes.txt");
  detail::require(static_cast<bool>(classes), "load_dataset", "missing classes.txt in ",
                  root.string());
  std::string line;
  while (std::getline(classes, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    TemplateSpec s;
    std::string stations, tail;
    is >> s.class_id >> s.name >> s.length >> s.wingspan >> s.sweep_deg >> s.engines >> stations >>
        tail;
    detail::require(static_cast<bool>(is), "load_dataset", "malformed class line '", line, "'");
    s.engine_stations.clear();
    std::istringstream ss(stations);
    for (std::string tok; std::getline(ss, tok, ',');) s.engine_stations.push_back(std::stod(tok));
    s.tail = detail::parse_tail(tail);
    ds.specs.push_back(s);
  }
  for (std::size_t c = 0; c < ds.specs.size(); ++c)
    ds.templates.push_back(gray_to_mask(
        read_pgm((root / "templates" / ("class_" + std::to_string(c) + ".pgm")).string())));
  ds.train = detail::read_split(root / "train");
  ds.test = detail::read_split(root / "test");
  return ds;
}

}  // namespace mtsgl
