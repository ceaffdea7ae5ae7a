#include <gtest/gtest.h>

#include <numbers>

#include "mtsgl/features.hpp"
#include "mtsgl/synthdata.hpp"
#include "oracles.hpp"

namespace mtsgl {
namespace {

BinaryMask square(std::size_t size, std::size_t x0, std::size_t y0, std::size_t side) {
  BinaryMask m(size, size);
  for (std::size_t y = y0; y < y0 + side; ++y)
    for (std::size_t x = x0; x < x0 + side; ++x) m.set(x, y, true);
  return m;
}

TEST(SignedDistance, RangeAndSign) {
  const auto m = square(32, 8, 8, 16);
  const auto sd = signed_distance_image(m, 3.0);
  for (double v : sd.pixels) {
    EXPECT_GE(v, 0);
    EXPECT_LE(v, 1);
  }
  EXPECT_EQ(sd.at(16, 16), 1.0);  // deep inside
  EXPECT_EQ(sd.at(0, 0), 0.0);    // far outside
  EXPECT_GT(sd.at(8, 16), sd.at(7, 16));
}

TEST(GaussianBlur, PreservesConstantsAndMass) {
  FloatImage c(20, 20, 0.3);
  for (double v : gaussian_blur(c, 1.5).pixels) EXPECT_NEAR(v, 0.3, 1e-12);
  FloatImage dot(21, 21, 0.0);
  dot.at(10, 10) = 1;
  double mass = 0;
  for (double v : gaussian_blur(dot, 1.0).pixels) mass += v;
  EXPECT_NEAR(mass, 1, 1e-9);
}

TEST(Harris, FindsSquareCorners) {
  const auto img = gaussian_blur(signed_distance_image(square(48, 14, 14, 20), 3.0), 0.8);
  const auto kps = detect_harris(img);
  const Vec2 corners[] = {{14, 14}, {33, 14}, {14, 33}, {33, 33}};
  for (const Vec2& c : corners) {
    double best = 1e9;
    for (const auto& k : kps) best = std::min(best, norm(k.location - c));
    EXPECT_LT(best, 2.0) << c.x << "," << c.y;
  }
}

TEST(Harris, FlatImageHasNoKeypoints) {
  EXPECT_TRUE(detect_harris(FloatImage(32, 32, 0.5)).empty());
}

TEST(Descriptor, RotationKeepsCornerDescriptorsClose) {
  // Same corner seen before and after a quarter turn about the canvas centre.
  const auto m = square(48, 14, 14, 20);
  const auto r = AffineTransform::rotation_about(std::numbers::pi / 2, {23.5, 23.5});
  const auto a = gaussian_blur(signed_distance_image(m, 3.0), 0.8);
  const auto b = gaussian_blur(signed_distance_image(warp_mask(m, r, 48, 48), 3.0), 0.8);
  Keypoint ka{{14, 14}}, kb{apply(r, Vec2{14, 14})};
  ka.angle = centroid_angle(a, ka.location);
  kb.angle = centroid_angle(b, kb.location);
  // A quarter turn is exact on the pixel grid, so the corner reproduces.
  EXPECT_LE(hamming(describe(a, ka), describe(b, kb)), 4);
  // The midpoint of an edge looks different.
  Keypoint kc{{24, 14}};
  kc.angle = centroid_angle(a, kc.location);
  EXPECT_GE(hamming(describe(a, ka), describe(a, kc)), 30);
}

TEST(Registration, RecoversRotatedTemplate) {
  const auto specs = default_specs();
  const auto tmpl = render_template(specs[2], 64, 64);
  const auto m = AffineTransform::rotation_about(1.1, canvas_center(64, 64), {1.5, -1});
  const auto mask = warp_mask(tmpl, m, 64, 64);
  const auto fit = register_mask_to_template(mask, tmpl);
  EXPECT_TRUE(fit.reliable);
  EXPECT_LT(oracle::placement_rms(fit.transform, m, mask), 0.5);
}

TEST(Registration, LoopClosureOnSynthesizedRecords) {
  const auto specs = default_specs();
  std::vector<BinaryMask> templates;
  for (const auto& s : specs) templates.push_back(render_template(s, 64, 64));
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t c = std::size_t(i) % specs.size();
    Rng rng(derive_seed(11, std::uint64_t(i), 7));
    AffineTransform m;
    do {
      m = sample_pose(rng, 64, 64);
    } while (!maps_inside(templates[c], m, 64, 64));
    const auto rec = synthesize_sample(specs[c], templates[c], m, std::uint64_t(i));
    const auto fit = register_mask_to_template(rec.mask, templates[c]);
    const double rms = oracle::placement_rms(fit.transform, rec.transform, rec.mask);
    worst = std::max(worst, rms);
    EXPECT_LT(rms, 0.5) << "record " << i << " class " << c;
  }
  RecordProperty("worst_rms", std::to_string(worst));
}

TEST(Registration, EmptyMaskRejected) {
  const auto tmpl = render_template(default_specs()[0], 64, 64);
  EXPECT_THROW(register_mask_to_template(BinaryMask(64, 64), tmpl), Error);
}

}  // namespace
}  // namespace mtsgl
