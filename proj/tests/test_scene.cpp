#include <gtest/gtest.h>

#include <random>

#include "llmrg/scene.hpp"

using namespace llmrg;

namespace {

Scene good_scene() {
  Scene s;
  s.scene_id = "a";
  s.image_path = "img.png";
  s.image_size = {100, 50};
  s.expression = "the red car";
  s.gt_box = {10, 10, 40, 30};
  return s;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

TEST(BBox, AreaAndValidity) {
  const auto b = make_box(1, 2, 4, 8);
  EXPECT_DOUBLE_EQ(b.area(), 18.0);
  EXPECT_THROW(make_box(5, 0, 5, 10), std::invalid_argument);
  EXPECT_THROW(make_box(0, 0, 10, -1), std::invalid_argument);
  EXPECT_THROW(make_box(-1, 0, 10, 10), std::invalid_argument);
  EXPECT_THROW(make_box(0, 0, std::nan(""), 10), std::invalid_argument);
}

TEST(BBox, HalfOpenContainment) {
  const BBox2D b{0, 0, 10, 10};
  EXPECT_TRUE(b.contains(0, 0));
  EXPECT_TRUE(b.contains(9.999, 9.999));
  EXPECT_FALSE(b.contains(10, 5));
  EXPECT_FALSE(b.contains(5, 10));
}

TEST(BBoxCenter, Examples) {
  EXPECT_EQ(bbox_center({0, 0, 10, 10}), (PixelPoint{5, 5}));
  EXPECT_EQ(bbox_center({0, 0, 1, 1}), (PixelPoint{1, 1}));
  EXPECT_EQ(bbox_center({100, 200, 300, 400}), (PixelPoint{200, 300}));
  EXPECT_EQ(bbox_center({0, 0, 3, 5}), (PixelPoint{2, 3}));
}

TEST(BBoxCenter, InsideBoxWhenSidesExceedOnePixel) {
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> coord(0, 500);
  std::uniform_int_distribution<int> side(2, 200);
  for (int i = 0; i < 5000; ++i) {
    const double x1 = coord(rng);
    const double y1 = coord(rng);
    const BBox2D b{x1, y1, x1 + side(rng), y1 + side(rng)};
    const auto c = bbox_center(b);
    EXPECT_TRUE(b.contains(static_cast<double>(c.x), static_cast<double>(c.y))) << x1 << "," << y1;
  }
}

TEST(ValidateScene, WellFormedSceneHasNoViolations) { EXPECT_TRUE(validate_scene(good_scene()).empty()); }

TEST(ValidateScene, ReportsEveryViolation) {
  Scene s = good_scene();
  s.expression = "   ";
  s.gt_box = {40, 10, 10, 30};
  const auto v = validate_scene(s);
  EXPECT_TRUE(contains(v, "empty expression"));
  EXPECT_TRUE(contains(v, "degenerate box"));
  EXPECT_GE(v.size(), 2u);
}

TEST(ValidateScene, BoxBeyondImage) {
  Scene s = good_scene();
  s.gt_box = {10, 10, 120, 30};
  EXPECT_TRUE(contains(validate_scene(s), "box outside image bounds"));
}

TEST(Calibration, IdentityIsUsable) { EXPECT_TRUE(calibration_violations(Calibration{}).empty()); }

TEST(Calibration, RejectsScaledRotationAndReflection) {
  Calibration c;
  c.extrinsic.topLeftCorner<3, 3>() *= 2.0;
  EXPECT_FALSE(calibration_violations(c).empty());

  Calibration r;
  r.extrinsic(0, 0) = -1.0;
  const auto v = calibration_violations(r);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("determinant"), std::string::npos);
}

TEST(Calibration, RejectsNonPositiveFocalLength) {
  Calibration c;
  c.intrinsic(1, 1) = 0.0;
  EXPECT_FALSE(calibration_violations(c).empty());
}

TEST(FailureMode, StringRoundTrip) {
  for (auto m : {FailureMode::none, FailureMode::no_id, FailureMode::out_of_range, FailureMode::no_detections,
                 FailureMode::no_box, FailureMode::backend_fatal}) {
    EXPECT_EQ(failure_mode_from_string(to_string(m)), m);
  }
  EXPECT_THROW(failure_mode_from_string("bogus"), std::invalid_argument);
}
