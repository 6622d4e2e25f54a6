#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace llmrg {

/// Axis-aligned pixel box, half-open: a point p is inside iff
/// x1 <= p.x < x2 and y1 <= p.y < y2.
struct BBox2D {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }

  bool contains(double x, double y) const { return x1 <= x && x < x2 && y1 <= y && y < y2; }

  /// True when every coordinate is finite and non-negative and both sides are positive.
  bool valid() const;

  std::array<double, 4> as_array() const { return {x1, y1, x2, y2}; }

  friend bool operator==(const BBox2D&, const BBox2D&) = default;
};

/// Throws std::invalid_argument unless the box satisfies BBox2D::valid().
BBox2D make_box(double x1, double y1, double x2, double y2);

struct PixelPoint {
  std::int64_t x = 0;
  std::int64_t y = 0;
  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

/// Box center rounded half-up to whole pixels.
PixelPoint bbox_center(const BBox2D& box);

struct Detection {
  std::string label;
  double confidence = 0.0;
  BBox2D box;

  friend bool operator==(const Detection&, const Detection&) = default;
};

bool valid_detection(const Detection& det);

/// One candidate as presented to the reasoning model: `[id, 'name', 'caption', [x, y]]`.
struct ObjectRecord {
  int id = 0;
  std::string name;
  std::string caption;
  PixelPoint location2d;
  /// Centroid in the point-cloud frame, when a 3D estimate exists.
  std::optional<Eigen::Vector3d> location3d;
  /// Camera-frame depth of location3d; this is the metric value serialized after [x, y].
  std::optional<double> depth;
};

struct Calibration {
  Eigen::Matrix3d intrinsic = Eigen::Matrix3d::Identity();
  /// Rigid transform mapping cloud-frame points into the camera frame.
  Eigen::Matrix4d extrinsic = Eigen::Matrix4d::Identity();

  double fx() const { return intrinsic(0, 0); }
  double fy() const { return intrinsic(1, 1); }
  double cx() const { return intrinsic(0, 2); }
  double cy() const { return intrinsic(1, 2); }
};

/// Empty when the calibration is usable; otherwise one message per violated invariant.
std::vector<std::string> calibration_violations(const Calibration& calib, double tol = 1e-6);

struct LidarPoint {
  float x = 0.f;
  float y = 0.f;
  float z = 0.f;
  float intensity = 0.f;
  /// Ring index from the nuScenes sweep layout. Kept only so binary clouds round-trip.
  float ring = 0.f;
};

struct PointCloud {
  std::vector<LidarPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct GroundTruthBox3D {
  std::string label;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  Eigen::Vector3d extents = Eigen::Vector3d::Zero();
};

struct ImageSize {
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

struct Scene {
  std::string scene_id;
  std::string image_path;
  ImageSize image_size;
  std::string expression;
  BBox2D gt_box;
  std::optional<std::string> cloud_path;
  std::optional<Calibration> calibration;
  std::optional<std::vector<GroundTruthBox3D>> gt_boxes_3d;
};

/// Returns every violated invariant, empty when the scene is well formed.
std::vector<std::string> validate_scene(const Scene& scene);

enum class FailureMode {
  none,
  no_id,
  out_of_range,
  no_detections,
  no_box,
  backend_fatal,
};

const char* to_string(FailureMode mode);
FailureMode failure_mode_from_string(const std::string& text);

struct TraceEntry {
  std::string stage;
  std::string request_digest;
  std::string response;
  double wall_ms = 0.0;
  int attempts = 1;
  bool from_cache = false;
  std::string note;
};

struct GroundingResult {
  std::string scene_id;
  std::string variant;
  /// -1 marks an unresolved selection.
  int chosen_id = -1;
  std::optional<BBox2D> predicted_box;
  double iou = 0.0;
  bool hit_at_05 = false;
  bool fallback_used = false;
  FailureMode failure_mode = FailureMode::none;
  /// Sum of backend-reported latencies; deterministic for scripted and cached calls.
  double latency_ms = 0.0;
  std::string config_digest;
  std::vector<TraceEntry> trace;
};

}  // namespace llmrg
