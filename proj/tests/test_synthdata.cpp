#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "mtsgl/synthdata.hpp"

namespace mtsgl {
namespace {

namespace fs = std::filesystem;

struct Extent {
  double rows = 0, cols = 0;
};

Extent foreground_extent(const BinaryMask& m) {
  long x0 = long(m.width), x1 = -1, y0 = long(m.height), y1 = -1;
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x)
      if (m.get(x, y)) {
        x0 = std::min(x0, long(x));
        x1 = std::max(x1, long(x));
        y0 = std::min(y0, long(y));
        y1 = std::max(y1, long(y));
      }
  return {double(y1 - y0 + 1), double(x1 - x0 + 1)};
}

BinaryMask dilate(const BinaryMask& m, int r) {
  BinaryMask out(m.width, m.height);
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      if (!m.get(x, y)) continue;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
          if (out.contains(long(x) + dx, long(y) + dy))
            out.set(std::size_t(long(x) + dx), std::size_t(long(y) + dy), true);
    }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mtsgl_test_" + name);
  fs::remove_all(p);
  return p;
}

TEST(Template, MirrorSymmetricAboutFuselage) {
  for (const auto& s : default_specs()) {
    const auto m = render_template(s, 64, 64);
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) ASSERT_EQ(m.get(x, y), m.get(63 - x, y)) << s.name;
  }
}

TEST(Template, DeterministicAndDistinct) {
  const auto specs = default_specs();
  std::set<std::vector<std::uint8_t>> seen;
  for (const auto& s : specs) {
    EXPECT_EQ(render_template(s, 64, 64), render_template(s, 64, 64));
    seen.insert(render_template(s, 64, 64).pixels);
  }
  EXPECT_EQ(seen.size(), specs.size());
}

TEST(Template, ExtentMatchesLengthAndSpan) {
  for (const auto& s : default_specs()) {
    const auto e = foreground_extent(render_template(s, 64, 64));
    EXPECT_NEAR(e.rows, s.length, 2) << s.name;
    EXPECT_NEAR(e.cols, s.wingspan, 2) << s.name;
  }
}

TEST(Template, OutOfFrameRejected) {
  TemplateSpec big = default_specs()[0];
  big.length = 80;
  EXPECT_THROW(render_template(big, 64, 64), Error);
}

TEST(Synthesis, NoiselessImageStaysNearMask) {
  const auto specs = default_specs();
  Rng rng(90);
  for (std::size_t c = 0; c < specs.size(); ++c) {
    const auto tmpl = render_template(specs[c], 64, 64);
    const auto m = sample_pose(rng, 64, 64);
    if (!maps_inside(tmpl, m, 64, 64)) continue;
    const auto rec = synthesize_sample(specs[c], tmpl, m, 5, RenderConfig::noiseless());
    const auto grown = dilate(rec.mask, 3);
    for (std::size_t i = 0; i < rec.image.size(); ++i)
      if (rec.image.pixels[i]) {
        EXPECT_TRUE(grown.pixels[i]) << "class " << c << " pixel " << i;
      }
  }
}

TEST(Synthesis, SeedChangesImageOnly) {
  const auto spec = default_specs()[3];
  const auto tmpl = render_template(spec, 64, 64);
  const auto m = AffineTransform::rotation_about(0.4, canvas_center(64, 64));
  const auto a = synthesize_sample(spec, tmpl, m, 1);
  const auto b = synthesize_sample(spec, tmpl, m, 2);
  EXPECT_NE(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(a.transform, b.transform);
  EXPECT_EQ(a.mask, warp_mask(tmpl, m, 64, 64));
  EXPECT_EQ(a.label, a.template_id);
}

TEST(Synthesis, ScattererCountWithinConfig) {
  const auto spec = default_specs()[1];
  const auto tmpl = render_template(spec, 64, 64);
  RenderConfig cfg;
  cfg.scatterers_min = 5;
  cfg.scatterers_max = 9;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SynthesisStats st;
    synthesize_sample(spec, tmpl, AffineTransform::identity(), seed, cfg, &st);
    EXPECT_GE(st.scatterers, 5);
    EXPECT_LE(st.scatterers, 9);
  }
}

TEST(Synthesis, ClippedSilhouetteRejected) {
  const auto spec = default_specs()[5];
  const auto tmpl = render_template(spec, 64, 64);
  EXPECT_THROW(synthesize_sample(spec, tmpl, AffineTransform::translation(30, 0), 1), Error);
}

TEST(Corruption, ZeroLambdaIsIdentity) {
  const auto ds = build_dataset({});
  const auto& rec = ds.train.front();
  const auto out = corrupt_annotation(rec, ds.specs[std::size_t(rec.label)],
                                      ds.templates[std::size_t(rec.label)], {0.0, 4});
  EXPECT_EQ(out.mask, rec.mask);
  EXPECT_EQ(out.transform, rec.transform);
}

TEST(Corruption, OffsetsBoundedAndReachEdge) {
  Rng rng(91);
  double max_along = 0, max_across = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto t = sample_corruption(rng, 0.3, 40, 30);
    max_along = std::max(max_along, std::abs(t.along));
    max_across = std::max(max_across, std::abs(t.across));
  }
  EXPECT_LE(max_along, 12);
  EXPECT_GT(max_along, 11.9);
  EXPECT_LE(max_across, 9);
  EXPECT_GT(max_across, 8.9);
  EXPECT_THROW(sample_corruption(rng, -0.1, 40, 30), Error);
}

TEST(Corruption, DifferenceIsPureTranslationAlongAircraftAxes) {
  const auto ds = build_dataset({});
  for (std::size_t k = 0; k < 20; ++k) {
    const auto& rec = ds.train[k * 13];
    const auto& spec = ds.specs[std::size_t(rec.label)];
    const auto out = corrupt_annotation(rec, spec, ds.templates[std::size_t(rec.label)], {0.2, 9});
    const auto d = compose(out.transform, invert(rec.transform));
    EXPECT_NEAR(d.a11, 1, 1e-12);
    EXPECT_NEAR(d.a12, 0, 1e-12);
    EXPECT_NEAR(d.a21, 0, 1e-12);
    EXPECT_NEAR(d.a22, 1, 1e-12);
    // Recover (t1, t2) in the aircraft frame and check the bounds.
    const double th = rec.transform.angle();
    const double along = d.a13 * std::sin(th) - d.a23 * std::cos(th);
    const double across = d.a13 * std::cos(th) + d.a23 * std::sin(th);
    EXPECT_LE(std::abs(along), 0.2 * spec.length + 1e-9);
    EXPECT_LE(std::abs(across), 0.2 * spec.wingspan + 1e-9);
    EXPECT_EQ(out.image, rec.image);
    EXPECT_EQ(out.mask, warp_mask(ds.templates[std::size_t(rec.label)], out.transform, 64, 64));
  }
}

TEST(Dataset, SplitCountsAndDisjointIds) {
  DatasetConfig cfg;
  cfg.counts = {50, 50, 50, 50, 50, 50};
  const auto ds = build_dataset(cfg);
  std::vector<int> train(6, 0), test(6, 0);
  std::set<int> ids;
  for (const auto& r : ds.train) {
    ++train[std::size_t(r.label)];
    ids.insert(r.id);
  }
  for (const auto& r : ds.test) {
    ++test[std::size_t(r.label)];
    EXPECT_FALSE(ids.count(r.id));
  }
  for (int c = 0; c < 6; ++c) {
    EXPECT_EQ(train[std::size_t(c)], 30);
    EXPECT_EQ(test[std::size_t(c)], 20);
  }
}

TEST(Dataset, ImbalancedCountsPreserved) {
  DatasetConfig cfg;
  cfg.counts = {80, 60, 40, 30, 20, 10};
  const auto ds = build_dataset(cfg);
  std::vector<int> train(6, 0), test(6, 0);
  for (const auto& r : ds.train) ++train[std::size_t(r.label)];
  for (const auto& r : ds.test) ++test[std::size_t(r.label)];
  for (std::size_t c = 0; c < 6; ++c) {
    EXPECT_EQ(train[c] + test[c], cfg.counts[c]);
    EXPECT_EQ(train[c], std::lround(0.6 * cfg.counts[c]));
  }
}

TEST(Dataset, RecordsSatisfyMaskInvariant) {
  const auto ds = build_dataset({});
  for (const auto* split : {&ds.train, &ds.test})
    for (const auto& r : *split) {
      ASSERT_EQ(r.mask, warp_mask(ds.templates[std::size_t(r.template_id)], r.transform, 64, 64));
      ASSERT_EQ(r.label, r.template_id);
    }
}

TEST(Dataset, RegenerationIsByteIdentical) {
  const auto a = scratch_dir("regen_a"), b = scratch_dir("regen_b");
  write_dataset(a, build_dataset({}));
  write_dataset(b, build_dataset({}));
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    ASSERT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 1000u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, DiskRoundTrip) {
  const auto dir = scratch_dir("roundtrip");
  DatasetConfig cfg;
  cfg.counts = {5, 5, 5, 5, 5, 5};
  const auto ds = build_dataset(cfg);
  write_dataset(dir, ds);
  const auto back = load_dataset(dir);
  EXPECT_EQ(back.specs, ds.specs);
  EXPECT_EQ(back.templates, ds.templates);
  ASSERT_EQ(back.train.size(), ds.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    EXPECT_EQ(back.train[i].id, ds.train[i].id);
    EXPECT_EQ(back.train[i].image, ds.train[i].image);
    EXPECT_EQ(back.train[i].mask, ds.train[i].mask);
    EXPECT_EQ(back.train[i].label, ds.train[i].label);
    EXPECT_EQ(back.train[i].transform, ds.train[i].transform);
  }
  fs::remove_all(dir);
}

}  // namespace
}  // namespace mtsgl
