#include "llmrg/scene.hpp"

#include <cmath>

#include <Eigen/LU>
#include <fmt/format.h>

namespace llmrg {

bool BBox2D::valid() const {
  for (double v : {x1, y1, x2, y2}) {
    if (!std::isfinite(v) || v < 0.0) return false;
  }
  return x2 > x1 && y2 > y1;
}

BBox2D make_box(double x1, double y1, double x2, double y2) {
  BBox2D box{x1, y1, x2, y2};
  if (!box.valid()) {
    throw std::invalid_argument(fmt::format("invalid box [{}, {}, {}, {}]", x1, y1, x2, y2));
  }
  return box;
}

PixelPoint bbox_center(const BBox2D& box) {
  const double cx = (box.x1 + box.x2) / 2.0;
  const double cy = (box.y1 + box.y2) / 2.0;
  return {static_cast<std::int64_t>(std::floor(cx + 0.5)), static_cast<std::int64_t>(std::floor(cy + 0.5))};
}

bool valid_detection(const Detection& det) {
  return !det.label.empty() && det.confidence >= 0.0 && det.confidence <= 1.0 && det.box.valid();
}

std::vector<std::string> calibration_violations(const Calibration& calib, double tol) {
  std::vector<std::string> out;
  if (!calib.intrinsic.allFinite() || !calib.extrinsic.allFinite()) {
    out.emplace_back("non-finite calibration entry");
    return out;
  }
  if (!(calib.fx() > 0.0)) out.emplace_back("fx must be positive");
  if (!(calib.fy() > 0.0)) out.emplace_back("fy must be positive");

  const Eigen::Matrix3d rot = calib.extrinsic.topLeftCorner<3, 3>();
  const double ortho_err = (rot.transpose() * rot - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho_err > tol) out.emplace_back(fmt::format("non-orthonormal rotation (max error {:.3g})", ortho_err));
  const double det = rot.determinant();
  if (std::abs(det - 1.0) > tol) out.emplace_back(fmt::format("rotation determinant {:.6g} is not +1", det));

  const Eigen::RowVector4d bottom = calib.extrinsic.row(3);
  if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > tol) {
    out.emplace_back("extrinsic bottom row must be [0 0 0 1]");
  }
  return out;
}

std::vector<std::string> validate_scene(const Scene& scene) {
  std::vector<std::string> out;
  if (scene.scene_id.empty()) out.emplace_back("empty scene id");
  if (scene.expression.find_first_not_of(" \t\r\n") == std::string::npos) out.emplace_back("empty expression");
  if (scene.image_path.empty()) out.emplace_back("empty image path");

  const BBox2D& b = scene.gt_box;
  const bool finite = std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) && std::isfinite(b.y2);
  if (!finite) {
    out.emplace_back("non-finite box");
  } else {
    if (b.x2 <= b.x1 || b.y2 <= b.y1) out.emplace_back("degenerate box");
    if (b.x1 < 0 || b.y1 < 0) out.emplace_back("negative box coordinate");
  }

  if (scene.image_size.width <= 0 || scene.image_size.height <= 0) {
    out.emplace_back("invalid image size");
  } else if (finite && (b.x2 > scene.image_size.width || b.y2 > scene.image_size.height)) {
    out.emplace_back("box outside image bounds");
  }

  if (scene.calibration) {
    for (auto& v : calibration_violations(*scene.calibration)) out.push_back("calibration: " + v);
  }
  if (scene.gt_boxes_3d) {
    for (const auto& g : *scene.gt_boxes_3d) {
      if (g.label.empty()) out.emplace_back("gt 3d box with empty label");
      if (!g.centroid.allFinite() || !g.extents.allFinite() || (g.extents.array() < 0).any()) {
        out.emplace_back("gt 3d box with invalid geometry");
      }
    }
  }
  return out;
}

const char* to_string(FailureMode mode) {
  switch (mode) {
    case FailureMode::none: return "none";
    case FailureMode::no_id: return "no_id";
    case FailureMode::out_of_range: return "out_of_range";
    case FailureMode::no_detections: return "no_detections";
    case FailureMode::no_box: return "no_box";
    case FailureMode::backend_fatal: return "backend_fatal";
  }
  return "none";
}

FailureMode failure_mode_from_string(const std::string& text) {
  for (auto m : {FailureMode::none, FailureMode::no_id, FailureMode::out_of_range, FailureMode::no_detections,
                 FailureMode::no_box, FailureMode::backend_fatal}) {
    if (text == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown failure mode: " + text);
}

}  // namespace llmrg
