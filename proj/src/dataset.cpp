#include "llmrg/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <Eigen/LU>
#include <fmt/format.h>

#include "llmrg/digest.hpp"
#include "llmrg/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace llmrg::dataset {

static_assert(std::endian::native == std::endian::little, "binary cloud I/O assumes a little-endian host");

BBox2D box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw DatasetError("box must be an array [x1, y1, x2, y2]");
  for (const auto& v : j) {
    if (!v.is_number()) throw DatasetError("box coordinates must be numbers");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json box_to_json(const BBox2D& box) { return json::array({box.x1, box.y1, box.x2, box.y2}); }

namespace {

std::string resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path.string() : (base / path).lexically_normal().string();
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw DatasetError(fmt::format("missing {} file: {}", what, path));
}

Eigen::Vector3d vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw DatasetError(fmt::format("{} must be a 3-element array", what));
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

template <int R, int C>
Eigen::Matrix<double, R, C> row_major(const json& j, const char* what) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(R * C)) {
    throw DatasetError(fmt::format("{} must hold {} numbers", what, R * C));
  }
  Eigen::Matrix<double, R, C> m;
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < C; ++c) {
      const auto& v = j[static_cast<std::size_t>(r * C + c)];
      if (!v.is_number()) throw DatasetError(fmt::format("{} entries must be numbers", what));
      m(r, c) = v.get<double>();
    }
  }
  return m;
}

Scene parse_entry(const json& e, const fs::path& base) {
  if (!e.is_object()) throw DatasetError("entry is not an object");
  Scene s;
  s.scene_id = e.at("scene_id").get<std::string>();
  s.image_path = resolve(base, e.at("image").get<std::string>());
  if (e.contains("command")) s.expression = e.at("command").get<std::string>();
  else s.expression = e.at("expression").get<std::string>();
  s.gt_box = box_from_json(e.at("gt_box"));

  require_file(s.image_path, "image");
  if (e.contains("image_size")) {
    const auto& sz = e.at("image_size");
    if (!sz.is_array() || sz.size() != 2) throw DatasetError("image_size must be [width, height]");
    s.image_size = {sz[0].get<int>(), sz[1].get<int>()};
  } else {
    try {
      s.image_size = image::size_of(s.image_path);
    } catch (const image::ImageError& err) {
      throw DatasetError(err.what());
    }
  }

  if (e.contains("cloud") && !e.at("cloud").is_null()) {
    s.cloud_path = resolve(base, e.at("cloud").get<std::string>());
    require_file(*s.cloud_path, "point cloud");
  }
  if (e.contains("calibration") && !e.at("calibration").is_null()) {
    const auto& c = e.at("calibration");
    if (c.is_string()) {
      const auto path = resolve(base, c.get<std::string>());
      require_file(path, "calibration");
      s.calibration = load_calibration(path);
    } else {
      s.calibration = parse_calibration(c);
    }
  }
  if (e.contains("gt_boxes_3d") && !e.at("gt_boxes_3d").is_null()) {
    std::vector<GroundTruthBox3D> boxes;
    for (const auto& g : e.at("gt_boxes_3d")) {
      boxes.push_back({g.at("label").get<std::string>(), vec3(g.at("centroid"), "centroid"),
                       vec3(g.at("extents"), "extents")});
    }
    s.gt_boxes_3d = std::move(boxes);
  }
  return s;
}

}  // namespace

AnnotationLoad load_annotations(const std::string& path) {
  require_file(path, "annotation");
  const fs::path base = fs::path(path).parent_path();

  json doc;
  try {
    doc = json::parse(read_file_text(path));
  } catch (const json::parse_error& e) {
    throw DatasetError(fmt::format("{}: JSON parse error at byte {}: {}", path, e.byte, e.what()));
  }
  const json* entries = &doc;
  if (doc.is_object()) {
    if (!doc.contains("scenes")) throw DatasetError(path + ": missing \"scenes\" array");
    if (!doc.value("version", json(1)).is_number_integer() || doc.value("version", 1) != 1) {
      throw DatasetError(path + ": unsupported annotation version");
    }
    entries = &doc.at("scenes");
  }
  if (!entries->is_array()) throw DatasetError(path + ": scenes must be an array");

  AnnotationLoad out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < entries->size(); ++i) {
    Scene scene;
    try {
      scene = parse_entry((*entries)[i], base);
    } catch (const DatasetError& e) {
      throw DatasetError(fmt::format("{}: entry {}: {}", path, i, e.what()));
    } catch (const json::exception& e) {
      throw DatasetError(fmt::format("{}: entry {}: {}", path, i, e.what()));
    }
    auto violations = validate_scene(scene);
    if (!seen.insert(scene.scene_id).second) violations.emplace_back("duplicate scene id");
    if (!violations.empty()) {
      std::string joined;
      for (const auto& v : violations) joined += (joined.empty() ? "" : "; ") + v;
      out.warnings.push_back(fmt::format("entry {} ({}): skipped: {}", i, scene.scene_id, joined));
      ++out.skipped;
      continue;
    }
    out.scenes.push_back(std::move(scene));
  }
  return out;
}

json scene_to_json(const Scene& scene) {
  json e;
  e["scene_id"] = scene.scene_id;
  e["image"] = scene.image_path;
  e["image_size"] = {scene.image_size.width, scene.image_size.height};
  e["command"] = scene.expression;
  e["gt_box"] = box_to_json(scene.gt_box);
  if (scene.cloud_path) e["cloud"] = *scene.cloud_path;
  if (scene.calibration) e["calibration"] = calibration_to_json(*scene.calibration);
  if (scene.gt_boxes_3d) {
    json boxes = json::array();
    for (const auto& g : *scene.gt_boxes_3d) {
      boxes.push_back({{"label", g.label},
                       {"centroid", {g.centroid.x(), g.centroid.y(), g.centroid.z()}},
                       {"extents", {g.extents.x(), g.extents.y(), g.extents.z()}}});
    }
    e["gt_boxes_3d"] = boxes;
  }
  return e;
}

namespace {

constexpr std::size_t kRecordFloats = 5;
constexpr std::size_t kRecordBytes = kRecordFloats * sizeof(float);

CloudLoad load_csv_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) return {};
  std::string header;
  for (char c : line) {
    if (!std::isspace(static_cast<unsigned char>(c))) header += c;
  }
  if (header.rfind("x,y,z,intensity", 0) != 0) throw DatasetError(path + ": CSV header must start with x,y,z,intensity");

  CloudLoad out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::string cell;
    float vals[4];
    for (float& v : vals) {
      if (!std::getline(ss, cell, ',')) throw DatasetError(fmt::format("{}:{}: expected 4 columns", path, line_no));
      try {
        v = std::stof(cell);
      } catch (const std::out_of_range&) {
        v = std::numeric_limits<float>::infinity();
      } catch (const std::exception&) {
        throw DatasetError(fmt::format("{}:{}: bad number '{}'", path, line_no, cell));
      }
    }
    if (!std::isfinite(vals[0]) || !std::isfinite(vals[1]) || !std::isfinite(vals[2]) || !std::isfinite(vals[3])) {
      ++out.dropped_non_finite;
      continue;
    }
    out.cloud.points.push_back({vals[0], vals[1], vals[2], vals[3], 0.f});
  }
  return out;
}

}  // namespace

CloudLoad load_pointcloud(const std::string& path) {
  require_file(path, "point cloud");
  if (fs::path(path).extension() == ".csv") return load_csv_cloud(path);

  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const std::exception& e) {
    throw DatasetError(e.what());
  }
  if (bytes.size() % kRecordBytes != 0) {
    throw DatasetError(fmt::format("{}: size {} is not a multiple of the {}-byte record", path, bytes.size(), kRecordBytes));
  }
  CloudLoad out;
  const std::size_t n = bytes.size() / kRecordBytes;
  out.cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    float rec[kRecordFloats];
    std::memcpy(rec, bytes.data() + i * kRecordBytes, kRecordBytes);
    if (!std::isfinite(rec[0]) || !std::isfinite(rec[1]) || !std::isfinite(rec[2]) || !std::isfinite(rec[3])) {
      ++out.dropped_non_finite;
      continue;
    }
    out.cloud.points.push_back({rec[0], rec[1], rec[2], rec[3], rec[4]});
  }
  return out;
}

void write_pointcloud(const std::string& path, const PointCloud& cloud) {
  std::string buf(cloud.size() * kRecordBytes, '\0');
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const float rec[kRecordFloats] = {p.x, p.y, p.z, p.intensity, p.ring};
    std::memcpy(buf.data() + i * kRecordBytes, rec, kRecordBytes);
  }
  write_file_atomic(path, buf);
}

Calibration parse_calibration(const json& j) {
  Calibration calib;
  try {
    calib.intrinsic = row_major<3, 3>(j.at("intrinsic"), "intrinsic");
    const Eigen::Matrix4d file_extrinsic = row_major<4, 4>(j.at("extrinsic"), "extrinsic");
    const std::string direction = j.value("direction", std::string("cloud_to_camera"));
    if (direction != "cloud_to_camera" && direction != "camera_to_cloud") {
      throw DatasetError("direction must be cloud_to_camera or camera_to_cloud");
    }
    const Eigen::Matrix3d rot = file_extrinsic.topLeftCorner<3, 3>();
    if (!rot.allFinite() || std::abs(rot.determinant()) < 1e-12) throw DatasetError("singular extrinsic matrix");

    Calibration probe{calib.intrinsic, file_extrinsic};
    auto violations = calibration_violations(probe);
    if (!violations.empty()) {
      std::string joined;
      for (const auto& v : violations) joined += (joined.empty() ? "" : "; ") + v;
      throw DatasetError("invalid calibration: " + joined);
    }
    if (direction == "camera_to_cloud") {
      Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
      inv.topLeftCorner<3, 3>() = rot.transpose();
      inv.topRightCorner<3, 1>() = -rot.transpose() * file_extrinsic.topRightCorner<3, 1>();
      calib.extrinsic = inv;
    } else {
      calib.extrinsic = file_extrinsic;
    }
  } catch (const json::exception& e) {
    throw DatasetError(std::string("calibration: ") + e.what());
  }
  return calib;
}

Calibration load_calibration(const std::string& path) {
  require_file(path, "calibration");
  try {
    return parse_calibration(json::parse(read_file_text(path)));
  } catch (const json::parse_error& e) {
    throw DatasetError(fmt::format("{}: {}", path, e.what()));
  } catch (const DatasetError& e) {
    throw DatasetError(fmt::format("{}: {}", path, e.what()));
  }
}

json calibration_to_json(const Calibration& calib) {
  json k = json::array();
  json t = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) k.push_back(calib.intrinsic(r, c));
  }
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) t.push_back(calib.extrinsic(r, c));
  }
  return {{"intrinsic", k}, {"extrinsic", t}, {"direction", "cloud_to_camera"}};
}

DetectionLoad load_detections(const std::string& path) {
  require_file(path, "detections");
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path);

  DetectionLoad out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Detection det;
      det.label = j.at("label").get<std::string>();
      det.confidence = j.at("confidence").get<double>();
      det.box = box_from_json(j.at("box"));
      if (det.label.empty()) throw DatasetError("empty label");
      if (!(det.confidence >= 0.0 && det.confidence <= 1.0)) {
        throw DatasetError(fmt::format("confidence {} outside [0, 1]", det.confidence));
      }
      if (!det.box.valid()) throw DatasetError("invalid box");
      out.by_scene[j.at("scene_id").get<std::string>()].push_back(std::move(det));
    } catch (const std::exception& e) {
      out.errors.push_back(fmt::format("{}:{}: {}", path, line_no, e.what()));
    }
  }
  return out;
}

json detection_to_json(const std::string& scene_id, const Detection& det) {
  return {{"scene_id", scene_id}, {"label", det.label}, {"confidence", det.confidence}, {"box", box_to_json(det.box)}};
}

}  // namespace llmrg::dataset
