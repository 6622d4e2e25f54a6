#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "llmrg/scene.hpp"

namespace llmrg::synth {

struct SyntheticSpec {
  std::uint64_t seed = 7;
  std::size_t scenes = 100;
  int min_objects = 3;
  int max_objects = 6;
  /// Highest distractor level drawn per scene: 0 = target category unique, 1 = same
  /// category in another color, 2 = same category and color, told apart by left/right.
  int distractor_level = 2;
  /// Emit point clouds, calibration and 3D ground truth, and mix in scenes that only depth can resolve.
  bool with_3d = false;
  /// Share of scenes built as depth-disambiguation scenes when with_3d is set.
  double depth_scene_fraction = 1.0 / 3.0;
};

struct SyntheticSummary {
  std::vector<std::string> scene_ids;
  /// Scenes whose two candidate objects share their 2D center and differ only in depth.
  std::vector<std::string> depth_scene_ids;
  std::string annotations_path;
  std::string config_path;
  std::string detections_path;
  std::string chat_script_path;
  std::string vlm_script_path;
};

/// Writes images, annotations, detections, clouds and matched scripted replies under
/// out_dir. The same spec always produces the same bytes.
SyntheticSummary generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

/// Rule-based referee for the synthetic vocabulary: keep records whose name and caption
/// color match the expression, then resolve left/right by x and nearer/farther by depth
/// when present (image row otherwise). Ties go to the lowest id. -1 when nothing matches.
int oracle_answer(std::span<const ObjectRecord> records, const std::string& expression);

const std::vector<std::string>& synthetic_labels();
const std::vector<std::string>& synthetic_colors();

}  // namespace llmrg::synth
