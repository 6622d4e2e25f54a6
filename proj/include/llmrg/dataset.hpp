#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "llmrg/scene.hpp"

namespace llmrg::dataset {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AnnotationLoad {
  std::vector<Scene> scenes;
  std::vector<std::string> warnings;
  std::size_t skipped = 0;
};

/// Loads the repo annotation format. Entries that fail validation are skipped
/// with a warning; structural problems and missing referenced files throw.
AnnotationLoad load_annotations(const std::string& path);

nlohmann::json scene_to_json(const Scene& scene);

struct CloudLoad {
  PointCloud cloud;
  std::size_t dropped_non_finite = 0;
};

/// Binary little-endian float32 x,y,z,intensity,ring records, or CSV with an
/// x,y,z,intensity header (selected by a .csv extension).
CloudLoad load_pointcloud(const std::string& path);
void write_pointcloud(const std::string& path, const PointCloud& cloud);

/// JSON {intrinsic[9], extrinsic[16], direction}; camera_to_cloud files are inverted.
Calibration load_calibration(const std::string& path);
Calibration parse_calibration(const nlohmann::json& j);
nlohmann::json calibration_to_json(const Calibration& calib);

struct DetectionLoad {
  std::map<std::string, std::vector<Detection>> by_scene;
  /// One message per rejected line, each naming its line number.
  std::vector<std::string> errors;
};

/// JSON-lines {scene_id, label, confidence, box}.
DetectionLoad load_detections(const std::string& path);
nlohmann::json detection_to_json(const std::string& scene_id, const Detection& det);

BBox2D box_from_json(const nlohmann::json& j);
nlohmann::json box_to_json(const BBox2D& box);

}  // namespace llmrg::dataset
