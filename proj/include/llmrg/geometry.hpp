#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "llmrg/scene.hpp"

namespace llmrg::geometry {

/// Intersection over union under the half-open convention; 0 for disjoint boxes.
double iou(const BBox2D& a, const BBox2D& b);

/// Row-major |a| x |b| IoU table.
std::vector<double> iou_matrix(std::span<const BBox2D> a, std::span<const BBox2D> b);

/// p -> R p + t for every point.
std::vector<Eigen::Vector3d> apply_rigid_transform(std::span<const Eigen::Vector3d> points, const Eigen::Matrix4d& transform);

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  bool valid = false;
};

/// Pinhole projection of camera-frame points. Points with z <= depth_min are
/// kept in place and marked invalid.
std::vector<Projection> project_points(const Eigen::Matrix3d& intrinsic, std::span<const Eigen::Vector3d> points_cam,
                                       double depth_min = 0.0);

/// Componentwise mean. Throws std::invalid_argument on empty input.
Eigen::Vector3d centroid(std::span<const Eigen::Vector3d> points);

struct LiftPolicy {
  double depth_min = 0.5;
  std::size_t min_points = 5;
  /// Depth-quantile band kept when at least trim_min_points survive the frustum test.
  double trim_low = 0.10;
  double trim_high = 0.90;
  std::size_t trim_min_points = 20;
};

struct Partial3DBox {
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  Eigen::Vector3d extents = Eigen::Vector3d::Zero();
  Eigen::Vector3d min_corner = Eigen::Vector3d::Zero();
  Eigen::Vector3d max_corner = Eigen::Vector3d::Zero();
  std::size_t point_count = 0;
};

/// Frustum selection result: cloud indices whose projection falls inside the
/// box, together with their camera-frame depth.
struct FrustumSelection {
  std::vector<std::size_t> indices;
  std::vector<double> depths;
};

/// OpenMP kernel: transform, project and box-test every point.
FrustumSelection select_in_box(const PointCloud& cloud, const Calibration& calib, const BBox2D& box, double depth_min);

/// Single-threaded reference for select_in_box; kept for tests and benchmarking.
FrustumSelection select_in_box_serial(const PointCloud& cloud, const Calibration& calib, const BBox2D& box,
                                      double depth_min);

/// Indices into `selection` kept by the depth-quantile trim, in ascending cloud order.
std::vector<std::size_t> trim_by_depth(const FrustumSelection& selection, const LiftPolicy& policy);

/// Lifts a 2D box to an axis-aligned partial 3D box in the cloud frame.
/// Empty when fewer than policy.min_points points survive the frustum test.
std::optional<Partial3DBox> lift_box_to_3d(const BBox2D& box, const PointCloud& cloud, const Calibration& calib,
                                           const LiftPolicy& policy = {});

/// Camera-frame depth of a cloud-frame point.
double camera_depth(const Calibration& calib, const Eigen::Vector3d& point_cloud_frame);

/// Image-plane bounding box of an axis-aligned 3D box (cloud frame), built from the
/// corners in front of the camera and clipped to the image. Empty when nothing projects.
std::optional<BBox2D> project_box_3d(const Eigen::Vector3d& centroid, const Eigen::Vector3d& extents,
                                     const Calibration& calib, ImageSize image, double depth_min = 0.5);

}  // namespace llmrg::geometry
