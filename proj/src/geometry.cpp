#include "llmrg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace llmrg::geometry {

double iou(const BBox2D& a, const BBox2D& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<double> iou_matrix(std::span<const BBox2D> a, std::span<const BBox2D> b) {
  std::vector<double> out(a.size() * b.size(), 0.0);
  const auto rows = static_cast<std::ptrdiff_t>(a.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) out[static_cast<std::size_t>(i) * b.size() + j] = iou(a[i], b[j]);
  }
  return out;
}

std::vector<Eigen::Vector3d> apply_rigid_transform(std::span<const Eigen::Vector3d> points, const Eigen::Matrix4d& transform) {
  const Eigen::Matrix3d rot = transform.topLeftCorner<3, 3>();
  const Eigen::Vector3d trans = transform.topRightCorner<3, 1>();
  std::vector<Eigen::Vector3d> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = rot * points[i] + trans;
  return out;
}

namespace {

inline Projection project_one(const Eigen::Matrix3d& k, const Eigen::Vector3d& p, double depth_min) {
  Projection proj;
  proj.depth = p.z();
  if (!(p.z() > depth_min)) return proj;
  proj.u = k(0, 0) * p.x() / p.z() + k(0, 1) * p.y() / p.z() + k(0, 2);
  proj.v = k(1, 1) * p.y() / p.z() + k(1, 2);
  proj.valid = std::isfinite(proj.u) && std::isfinite(proj.v);
  return proj;
}

inline Eigen::Vector3d to_camera(const Eigen::Matrix3d& rot, const Eigen::Vector3d& trans, const LidarPoint& pt) {
  return rot * Eigen::Vector3d(pt.x, pt.y, pt.z) + trans;
}

inline Eigen::Vector3d as_vector(const LidarPoint& pt) { return {pt.x, pt.y, pt.z}; }

}  // namespace

std::vector<Projection> project_points(const Eigen::Matrix3d& intrinsic, std::span<const Eigen::Vector3d> points_cam,
                                       double depth_min) {
  std::vector<Projection> out(points_cam.size());
  const auto n = static_cast<std::ptrdiff_t>(points_cam.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = project_one(intrinsic, points_cam[i], depth_min);
  return out;
}

Eigen::Vector3d centroid(std::span<const Eigen::Vector3d> points) {
  if (points.empty()) throw std::invalid_argument("centroid of an empty point set");
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (const auto& p : points) sum += p;
  return sum / static_cast<double>(points.size());
}

FrustumSelection select_in_box(const PointCloud& cloud, const Calibration& calib, const BBox2D& box, double depth_min) {
  const Eigen::Matrix3d rot = calib.extrinsic.topLeftCorner<3, 3>();
  const Eigen::Vector3d trans = calib.extrinsic.topRightCorner<3, 1>();
  const auto n = static_cast<std::ptrdiff_t>(cloud.size());

  std::vector<double> depth(cloud.size());
  std::vector<unsigned char> inside(cloud.size(), 0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const Projection p = project_one(calib.intrinsic, to_camera(rot, trans, cloud.points[i]), depth_min);
    depth[i] = p.depth;
    inside[i] = p.valid && box.contains(p.u, p.v);
  }

  FrustumSelection sel;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (inside[i]) {
      sel.indices.push_back(i);
      sel.depths.push_back(depth[i]);
    }
  }
  return sel;
}

FrustumSelection select_in_box_serial(const PointCloud& cloud, const Calibration& calib, const BBox2D& box,
                                      double depth_min) {
  const Eigen::Matrix3d rot = calib.extrinsic.topLeftCorner<3, 3>();
  const Eigen::Vector3d trans = calib.extrinsic.topRightCorner<3, 1>();
  FrustumSelection sel;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Projection p = project_one(calib.intrinsic, to_camera(rot, trans, cloud.points[i]), depth_min);
    if (p.valid && box.contains(p.u, p.v)) {
      sel.indices.push_back(i);
      sel.depths.push_back(p.depth);
    }
  }
  return sel;
}

std::vector<std::size_t> trim_by_depth(const FrustumSelection& selection, const LiftPolicy& policy) {
  const std::size_t n = selection.indices.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (n < policy.trim_min_points) return order;

  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (selection.depths[a] != selection.depths[b]) return selection.depths[a] < selection.depths[b];
    return selection.indices[a] < selection.indices[b];
  });
  const auto lo = static_cast<std::size_t>(std::floor(policy.trim_low * static_cast<double>(n)));
  const auto hi = std::min(n, static_cast<std::size_t>(std::ceil(policy.trim_high * static_cast<double>(n))));
  std::vector<std::size_t> kept(order.begin() + static_cast<std::ptrdiff_t>(std::min(lo, hi)),
                                order.begin() + static_cast<std::ptrdiff_t>(hi));
  std::sort(kept.begin(), kept.end());
  return kept;
}

std::optional<Partial3DBox> lift_box_to_3d(const BBox2D& box, const PointCloud& cloud, const Calibration& calib,
                                           const LiftPolicy& policy) {
  const FrustumSelection sel = select_in_box(cloud, calib, box, policy.depth_min);
  if (sel.indices.size() < policy.min_points || sel.indices.empty()) return std::nullopt;

  const std::vector<std::size_t> kept = trim_by_depth(sel, policy);
  if (kept.size() < policy.min_points || kept.empty()) return std::nullopt;

  Partial3DBox out;
  out.min_corner = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  out.max_corner = -out.min_corner;
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (std::size_t k : kept) {
    const Eigen::Vector3d p = as_vector(cloud.points[sel.indices[k]]);
    sum += p;
    out.min_corner = out.min_corner.cwiseMin(p);
    out.max_corner = out.max_corner.cwiseMax(p);
  }
  out.point_count = kept.size();
  out.centroid = sum / static_cast<double>(kept.size());
  out.extents = out.max_corner - out.min_corner;
  return out;
}

double camera_depth(const Calibration& calib, const Eigen::Vector3d& point_cloud_frame) {
  return (calib.extrinsic.topLeftCorner<3, 3>() * point_cloud_frame + calib.extrinsic.topRightCorner<3, 1>()).z();
}

std::optional<BBox2D> project_box_3d(const Eigen::Vector3d& centroid, const Eigen::Vector3d& extents,
                                     const Calibration& calib, ImageSize image, double depth_min) {
  std::vector<Eigen::Vector3d> corners;
  corners.reserve(8);
  for (int c = 0; c < 8; ++c) {
    const Eigen::Vector3d sign((c & 1) ? 0.5 : -0.5, (c & 2) ? 0.5 : -0.5, (c & 4) ? 0.5 : -0.5);
    corners.push_back(centroid + sign.cwiseProduct(extents));
  }
  const auto cam = apply_rigid_transform(corners, calib.extrinsic);
  const auto proj = project_points(calib.intrinsic, cam, depth_min);

  bool any = false;
  BBox2D out{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
             -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& p : proj) {
    if (!p.valid) continue;
    any = true;
    out.x1 = std::min(out.x1, p.u);
    out.y1 = std::min(out.y1, p.v);
    out.x2 = std::max(out.x2, p.u);
    out.y2 = std::max(out.y2, p.v);
  }
  if (!any) return std::nullopt;
  out.x1 = std::clamp(out.x1, 0.0, static_cast<double>(image.width));
  out.x2 = std::clamp(out.x2, 0.0, static_cast<double>(image.width));
  out.y1 = std::clamp(out.y1, 0.0, static_cast<double>(image.height));
  out.y2 = std::clamp(out.y2, 0.0, static_cast<double>(image.height));
  if (!out.valid()) return std::nullopt;
  return out;
}

}  // namespace llmrg::geometry
