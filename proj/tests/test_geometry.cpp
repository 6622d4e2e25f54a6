#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Geometry>

#include "llmrg/geometry.hpp"

using namespace llmrg;
using namespace llmrg::geometry;

namespace {

// Pixel-lattice IoU: counts unit cells covered under the half-open rule.
double pixel_iou(const BBox2D& a, const BBox2D& b) {
  long inter = 0;
  long uni = 0;
  const int x_hi = static_cast<int>(std::max(a.x2, b.x2));
  const int y_hi = static_cast<int>(std::max(a.y2, b.y2));
  for (int y = 0; y < y_hi; ++y) {
    for (int x = 0; x < x_hi; ++x) {
      const bool ia = a.contains(x, y);
      const bool ib = b.contains(x, y);
      inter += ia && ib;
      uni += ia || ib;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

BBox2D random_box(std::mt19937& rng, int limit) {
  std::uniform_int_distribution<int> c(0, limit - 1);
  int x1 = c(rng), x2 = c(rng), y1 = c(rng), y2 = c(rng);
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  return {static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x2 + 1), static_cast<double>(y2 + 1)};
}

Calibration test_calibration() {
  Calibration c;
  c.intrinsic << 1000, 0, 800, 0, 1000, 450, 0, 0, 1;
  c.extrinsic << 0, -1, 0, 0.1, 0, 0, -1, 1.5, 1, 0, 0, -0.3, 0, 0, 0, 1;
  return c;
}

// Per-point oracle: homogeneous transform, homogeneous projection, half-open test.
std::vector<std::size_t> oracle_inside(const PointCloud& cloud, const Calibration& calib, const BBox2D& box, double depth_min) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const Eigen::Vector4d cam = calib.extrinsic * Eigen::Vector4d(p.x, p.y, p.z, 1.0);
    if (!(cam.z() > depth_min)) continue;
    const Eigen::Vector3d q = calib.intrinsic * cam.head<3>();
    const double u = q.x() / q.z();
    const double v = q.y() / q.z();
    if (u >= box.x1 && u < box.x2 && v >= box.y1 && v < box.y2) out.push_back(i);
  }
  return out;
}

}  // namespace

TEST(Iou, Examples) {
  EXPECT_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
  EXPECT_EQ(iou({0, 0, 10, 10}, {20, 20, 30, 30}), 0.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {5, 0, 15, 10}), 1.0 / 3.0);
  EXPECT_EQ(iou({0, 0, 10, 10}, {10, 0, 20, 10}), 0.0);
}

TEST(Iou, MatchesPixelCountingOracle) {
  std::mt19937 rng(2024);
  for (int i = 0; i < 300; ++i) {
    const auto a = random_box(rng, 64);
    const auto b = random_box(rng, 64);
    EXPECT_EQ(iou(a, b), pixel_iou(a, b));
  }
}

TEST(Iou, SymmetricBoundedAndReflexive) {
  std::mt19937 rng(5);
  for (int i = 0; i < 2000; ++i) {
    const auto a = random_box(rng, 256);
    const auto b = random_box(rng, 256);
    const double v = iou(a, b);
    EXPECT_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_EQ(iou(a, a), 1.0);
  }
}

TEST(Iou, MatrixAgreesWithPairwise) {
  std::mt19937 rng(9);
  std::vector<BBox2D> a, b;
  for (int i = 0; i < 17; ++i) a.push_back(random_box(rng, 100));
  for (int i = 0; i < 11; ++i) b.push_back(random_box(rng, 100));
  const auto m = iou_matrix(a, b);
  ASSERT_EQ(m.size(), a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) EXPECT_EQ(m[i * b.size() + j], iou(a[i], b[j]));
  }
}

TEST(RigidTransform, Examples) {
  const std::vector<Eigen::Vector3d> pts{{1, 0, 0}, {0, 0, 0}};
  EXPECT_EQ(apply_rigid_transform(pts, Eigen::Matrix4d::Identity())[0], pts[0]);

  Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
  t.topRightCorner<3, 1>() << 1, 2, 3;
  EXPECT_EQ(apply_rigid_transform(pts, t)[1], Eigen::Vector3d(1, 2, 3));

  Eigen::Matrix4d rz = Eigen::Matrix4d::Identity();
  rz.topLeftCorner<3, 3>() = Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  EXPECT_LT((apply_rigid_transform(pts, rz)[0] - Eigen::Vector3d(0, 1, 0)).norm(), 1e-9);
}

TEST(RigidTransform, PreservesDistances) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> d(-50, 50);
  Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
  t.topLeftCorner<3, 3>() = Eigen::Quaterniond::UnitRandom().toRotationMatrix();
  t.topRightCorner<3, 1>() << 3, -7, 11;
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 200; ++i) pts.emplace_back(d(rng), d(rng), d(rng));
  const auto out = apply_rigid_transform(pts, t);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double before = (pts[i] - pts[i - 1]).norm();
    const double after = (out[i] - out[i - 1]).norm();
    EXPECT_NEAR(after, before, 1e-9 * before);
  }
}

TEST(Projection, Examples) {
  Eigen::Matrix3d k;
  k << 1000, 0, 800, 0, 1000, 450, 0, 0, 1;
  const std::vector<Eigen::Vector3d> pts{{0, 0, 10}, {1, 0, 10}, {0, 0, -5}};
  const auto p = project_points(k, pts);
  EXPECT_TRUE(p[0].valid);
  EXPECT_EQ(p[0].u, 800.0);
  EXPECT_EQ(p[0].v, 450.0);
  EXPECT_EQ(p[0].depth, 10.0);
  EXPECT_DOUBLE_EQ(p[1].u, 900.0);
  EXPECT_FALSE(p[2].valid);
  ASSERT_EQ(p.size(), 3u);
}

TEST(Projection, DepthCutKeepsIndices) {
  const std::vector<Eigen::Vector3d> pts{{0, 0, 0.4}, {0, 0, 0.5}, {0, 0, 0.6}};
  const auto p = project_points(Eigen::Matrix3d::Identity(), pts, 0.5);
  EXPECT_FALSE(p[0].valid);
  EXPECT_FALSE(p[1].valid);
  EXPECT_TRUE(p[2].valid);
  EXPECT_EQ(p[0].depth, 0.4);
}

TEST(Centroid, Examples) {
  const std::vector<Eigen::Vector3d> a{{0, 0, 0}, {2, 2, 2}};
  EXPECT_EQ(centroid(a), Eigen::Vector3d(1, 1, 1));
  const std::vector<Eigen::Vector3d> b{{4, 5, 6}};
  EXPECT_EQ(centroid(b), Eigen::Vector3d(4, 5, 6));
  const std::vector<Eigen::Vector3d> c{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  EXPECT_LT((centroid(c) - Eigen::Vector3d::Constant(1.0 / 3.0)).norm(), 1e-15);
  EXPECT_THROW(centroid(std::span<const Eigen::Vector3d>{}), std::invalid_argument);
}

TEST(Lift, FourPointsInsideTenPointCloud) {
  Calibration calib;
  calib.intrinsic << 100, 0, 50, 0, 100, 50, 0, 0, 1;
  PointCloud cloud;
  // Four points in a unit cluster at z = 5 projecting into [40,60)^2, six elsewhere.
  cloud.points = {{0.1f, 0.1f, 5.f}, {-0.2f, 0.3f, 5.f}, {0.4f, -0.1f, 5.f}, {-0.3f, -0.3f, 5.f}, {5.f, 5.f, 5.f},
                  {-5.f, 0.f, 5.f},  {0.f, 0.f, -3.f},   {0.f, 9.f, 5.f},    {9.f, 9.f, 9.f},    {0.f, 0.f, 0.1f}};
  LiftPolicy policy;
  policy.min_points = 4;
  const auto out = lift_box_to_3d({40, 40, 60, 60}, cloud, calib, policy);
  ASSERT_TRUE(out.has_value());
  EXPECT_EQ(out->point_count, 4u);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (int i = 0; i < 4; ++i) mean += Eigen::Vector3d(cloud.points[i].x, cloud.points[i].y, cloud.points[i].z);
  mean /= 4.0;
  EXPECT_LT((out->centroid - mean).norm(), 1e-6);
  EXPECT_FALSE(lift_box_to_3d({40, 40, 60, 60}, cloud, calib).has_value());
}

TEST(Lift, InsufficientCases) {
  Calibration calib;
  EXPECT_FALSE(lift_box_to_3d({0, 0, 10, 10}, PointCloud{}, calib).has_value());
  PointCloud behind;
  for (int i = 0; i < 50; ++i) behind.points.push_back({0.f, 0.f, -1.f - static_cast<float>(i)});
  EXPECT_FALSE(lift_box_to_3d({0, 0, 10, 10}, behind, calib).has_value());
}

TEST(Lift, MatchesPerPointOracleWithTrim) {
  std::mt19937 rng(77);
  std::uniform_real_distribution<double> fwd(-5, 60), lat(-20, 20), up(-3, 3);
  const Calibration calib = test_calibration();
  const LiftPolicy policy;
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud cloud;
    for (int i = 0; i < 3000; ++i) {
      cloud.points.push_back({static_cast<float>(fwd(rng)), static_cast<float>(lat(rng)), static_cast<float>(up(rng))});
    }
    std::mt19937 brng(static_cast<unsigned>(trial));
    const BBox2D box = random_box(brng, 1600);
    auto inside = oracle_inside(cloud, calib, box, policy.depth_min);
    const auto got = lift_box_to_3d(box, cloud, calib, policy);
    if (inside.size() < policy.min_points) {
      EXPECT_FALSE(got.has_value());
      continue;
    }
    ASSERT_TRUE(got.has_value());
    auto depth = [&](std::size_t i) {
      const auto& p = cloud.points[i];
      return (calib.extrinsic * Eigen::Vector4d(p.x, p.y, p.z, 1.0)).z();
    };
    if (inside.size() >= policy.trim_min_points) {
      std::sort(inside.begin(), inside.end(), [&](std::size_t a, std::size_t b) {
        return depth(a) != depth(b) ? depth(a) < depth(b) : a < b;
      });
      const std::size_t n = inside.size();
      const auto lo = static_cast<std::size_t>(std::floor(0.1 * n));
      const auto hi = static_cast<std::size_t>(std::ceil(0.9 * n));
      inside = std::vector<std::size_t>(inside.begin() + lo, inside.begin() + hi);
    }
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (auto i : inside) mean += Eigen::Vector3d(cloud.points[i].x, cloud.points[i].y, cloud.points[i].z);
    mean /= static_cast<double>(inside.size());
    EXPECT_EQ(got->point_count, inside.size());
    EXPECT_LT((got->centroid - mean).norm(), 1e-6);
    EXPECT_TRUE((got->extents.array() >= 0).all());
    EXPECT_TRUE((got->centroid.array() >= got->min_corner.array()).all());
    EXPECT_TRUE((got->centroid.array() <= got->max_corner.array()).all());
  }
}

TEST(Frustum, ParallelKernelMatchesSerialReference) {
  std::mt19937 rng(123);
  std::uniform_real_distribution<double> fwd(-5, 80), lat(-30, 30), up(-3, 3);
  const Calibration calib = test_calibration();
  PointCloud cloud;
  for (int i = 0; i < 50000; ++i) {
    cloud.points.push_back({static_cast<float>(fwd(rng)), static_cast<float>(lat(rng)), static_cast<float>(up(rng))});
  }
  for (int trial = 0; trial < 10; ++trial) {
    const BBox2D box = random_box(rng, 1600);
    const auto a = select_in_box(cloud, calib, box, 0.5);
    const auto b = select_in_box_serial(cloud, calib, box, 0.5);
    EXPECT_EQ(a.indices, b.indices);
    EXPECT_EQ(a.depths, b.depths);
  }
}

TEST(Trim, KeepsCentralBandOnlyAboveThreshold) {
  FrustumSelection sel;
  for (std::size_t i = 0; i < 19; ++i) {
    sel.indices.push_back(i);
    sel.depths.push_back(static_cast<double>(19 - i));
  }
  EXPECT_EQ(trim_by_depth(sel, {}).size(), 19u);
  sel.indices.push_back(19);
  sel.depths.push_back(100.0);
  const auto kept = trim_by_depth(sel, {});
  // 20 points: ranks [2, 18) survive; the nearest two and the farthest two go.
  EXPECT_EQ(kept.size(), 16u);
  EXPECT_TRUE(std::is_sorted(kept.begin(), kept.end()));
  EXPECT_EQ(std::count(kept.begin(), kept.end(), 19u), 0);
  EXPECT_EQ(std::count(kept.begin(), kept.end(), 18u), 0);
  EXPECT_EQ(std::count(kept.begin(), kept.end(), 0u), 0);
}

TEST(ProjectBox3d, CoversCentroidProjection) {
  Calibration calib;
  calib.intrinsic << 700, 0, 400, 0, 700, 225, 0, 0, 1;
  const auto box = project_box_3d({0, 0, 10}, {2, 2, 2}, calib, {800, 450});
  ASSERT_TRUE(box.has_value());
  // Near face at z = 9 spans +-1 m: 700 * 1 / 9 pixels either side of the principal point.
  EXPECT_NEAR(box->x1, 400 - 700.0 / 9.0, 1e-9);
  EXPECT_NEAR(box->x2, 400 + 700.0 / 9.0, 1e-9);
  EXPECT_FALSE(project_box_3d({0, 0, -10}, {2, 2, 2}, calib, {800, 450}).has_value());
}

TEST(CameraDepth, UsesExtrinsic) {
  const Calibration calib = test_calibration();
  EXPECT_DOUBLE_EQ(camera_depth(calib, {10, 0, 0}), 9.7);
}
