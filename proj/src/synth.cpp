#include "llmrg/synth.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include <fmt/format.h>
#include <opencv2/imgproc.hpp>

#include "llmrg/backends.hpp"
#include "llmrg/dataset.hpp"
#include "llmrg/digest.hpp"
#include "llmrg/image.hpp"
#include "llmrg/pipeline.hpp"
#include "llmrg/prompting.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace llmrg::synth {

namespace {

constexpr int kWidth = 800;
constexpr int kHeight = 450;
constexpr int kSlots = 6;
constexpr int kSlotWidth = 133;
constexpr double kNearDepth = 8.0;
constexpr double kFarDepth = 25.0;

struct Palette {
  const char* name;
  cv::Scalar bgr;
};

const std::vector<Palette>& palette() {
  static const std::vector<Palette> colors{
      {"red", {40, 40, 210}},    {"blue", {200, 90, 30}},    {"green", {60, 170, 60}}, {"yellow", {40, 210, 230}},
      {"white", {245, 245, 245}}, {"black", {25, 25, 25}}, {"orange", {30, 140, 250}},
  };
  return colors;
}

const std::vector<std::string> kVerbs{"Follow the", "Park behind the", "Stop next to the", "Watch out for the",
                                      "Pull up beside the"};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  // Explicit mappings keep the byte stream independent of the standard library's distributions.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1))]);
  }

 private:
  std::mt19937_64 engine_;
};

struct Object {
  std::string label;
  int color = 0;
  BBox2D box;
  double depth = 20.0;
  double confidence = 0.5;
  int points = 60;
};

struct SceneDraft {
  std::string id;
  std::vector<Object> objects;
  std::size_t target = 0;
  std::string expression;
  bool depth_scene = false;
  /// Index of the object whose frustum must not receive points of the host object.
  std::optional<std::size_t> hole;
};

Calibration synthetic_calibration() {
  Calibration c;
  c.intrinsic << 700, 0, 400, 0, 700, 225, 0, 0, 1;
  // camera x = -cloud y, camera y = -cloud z, camera z = cloud x, plus the mounting offset.
  c.extrinsic << 0, -1, 0, 0.0, 0, 0, -1, 1.2, 1, 0, 0, -0.4, 0, 0, 0, 1;
  return c;
}

std::string position_phrase(const BBox2D& box) {
  const double cx = 0.5 * (box.x1 + box.x2);
  if (cx < kWidth / 3.0) return "on the left side of the image";
  if (cx > 2.0 * kWidth / 3.0) return "on the right side of the image";
  return "near the center of the image";
}

std::string article(const std::string& word) {
  return std::string("aeiou").find(word.front()) != std::string::npos ? "An" : "A";
}

BBox2D place_in_slots(Rng& rng, int first_slot, int slot_count, int min_w, int max_w, int min_h, int max_h) {
  const int x0 = first_slot * kSlotWidth + 2;
  const int x_end = (first_slot + slot_count) * kSlotWidth - 2;
  const int w = rng.uniform_int(min_w, std::min(max_w, x_end - x0));
  const int h = rng.uniform_int(min_h, max_h);
  const int x1 = rng.uniform_int(x0, x_end - w);
  const int y1 = rng.uniform_int(120, kHeight - 5 - h);
  return {static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x1 + w), static_cast<double>(y1 + h)};
}

int other_color(Rng& rng, int color) {
  const int n = static_cast<int>(palette().size());
  return (color + rng.uniform_int(1, n - 1)) % n;
}

std::string other_label(Rng& rng, const std::string& label) {
  const auto& labels = synthetic_labels();
  std::string out;
  do {
    out = labels[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(labels.size()) - 1))];
  } while (out == label);
  return out;
}

void assign_confidences(Rng& rng, std::vector<Object>& objects) {
  std::set<int> used;
  for (auto& o : objects) {
    int milli = 0;
    do {
      milli = rng.uniform_int(350, 990);
    } while (!used.insert(milli).second);
    o.confidence = milli / 1000.0;
  }
}

SceneDraft draft_flat_scene(Rng& rng, const SyntheticSpec& spec, std::string id) {
  SceneDraft d;
  d.id = std::move(id);
  const auto& labels = synthetic_labels();
  const std::string label = labels[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(labels.size()) - 1))];
  const int color = rng.uniform_int(0, static_cast<int>(palette().size()) - 1);
  const int level = rng.uniform_int(0, std::clamp(spec.distractor_level, 0, 2));
  const int needed = level == 0 ? 1 : level == 1 ? 2 : 3;
  const int n = std::clamp(rng.uniform_int(spec.min_objects, spec.max_objects), needed, kSlots);

  d.objects.push_back({label, color, {}, 0, 0, 60});
  if (level >= 1) d.objects.push_back({label, other_color(rng, color), {}, 0, 0, 60});
  if (level == 2) d.objects.push_back({label, color, {}, 0, 0, 60});
  while (static_cast<int>(d.objects.size()) < n) {
    d.objects.push_back({other_label(rng, label), rng.uniform_int(0, static_cast<int>(palette().size()) - 1), {}, 0, 0, 60});
  }

  std::vector<int> slots(kSlots);
  for (int i = 0; i < kSlots; ++i) slots[static_cast<std::size_t>(i)] = i;
  rng.shuffle(slots);
  for (std::size_t i = 0; i < d.objects.size(); ++i) {
    d.objects[i].box = place_in_slots(rng, slots[i], 1, 50, 120, 40, 110);
    d.objects[i].depth = rng.uniform(10.0, 40.0);
  }
  assign_confidences(rng, d.objects);

  const std::string& verb = kVerbs[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(kVerbs.size()) - 1))];
  std::string description = fmt::format("{} {}", palette()[static_cast<std::size_t>(color)].name, label);
  if (level == 2) {
    // Target and twin share label and color; pick one and name its side.
    const bool first = rng.uniform_int(0, 1) == 0;
    d.target = first ? 0 : 2;
    const std::size_t twin = first ? 2 : 0;
    const bool left = d.objects[d.target].box.x1 < d.objects[twin].box.x1;
    description += left ? " on the left" : " on the right";
  }
  d.expression = fmt::format("{} {}.", verb, description);
  return d;
}

SceneDraft draft_depth_scene(Rng& rng, const SyntheticSpec& spec, std::string id) {
  SceneDraft d;
  d.id = std::move(id);
  d.depth_scene = true;
  const auto& labels = synthetic_labels();
  const std::string label = labels[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(labels.size()) - 1))];
  const int color = rng.uniform_int(0, static_cast<int>(palette().size()) - 1);
  const int n = std::clamp(rng.uniform_int(spec.min_objects, spec.max_objects), 2, kSlots);

  const int first_slot = rng.uniform_int(0, kSlots - 2);
  Object near_obj{label, color, place_in_slots(rng, first_slot, 2, 150, 240, 90, 150), kNearDepth, 0, 300};
  const int w = rng.uniform_int(40, 70);
  const int h = rng.uniform_int(30, 50);
  const int cx = static_cast<int>(near_obj.box.x1 + near_obj.box.x2) / 2 + rng.uniform_int(-2, 2);
  const int cy = static_cast<int>(near_obj.box.y1 + near_obj.box.y2) / 2 + rng.uniform_int(-2, 2);
  Object far_obj{label, color,
                 {static_cast<double>(cx - w / 2), static_cast<double>(cy - h / 2), static_cast<double>(cx - w / 2 + w),
                  static_cast<double>(cy - h / 2 + h)},
                 kFarDepth, 0, 40};
  d.objects.push_back(near_obj);
  d.objects.push_back(far_obj);
  d.hole = 1;

  std::vector<int> free_slots;
  for (int s = 0; s < kSlots; ++s) {
    if (s != first_slot && s != first_slot + 1) free_slots.push_back(s);
  }
  rng.shuffle(free_slots);
  for (int i = 2; i < n && static_cast<std::size_t>(i - 2) < free_slots.size(); ++i) {
    Object o{other_label(rng, label), rng.uniform_int(0, static_cast<int>(palette().size()) - 1),
             place_in_slots(rng, free_slots[static_cast<std::size_t>(i - 2)], 1, 50, 120, 40, 110), rng.uniform(10.0, 40.0),
             0, 60};
    d.objects.push_back(o);
  }
  assign_confidences(rng, d.objects);

  const bool nearer = rng.uniform_int(0, 1) == 0;
  d.target = nearer ? 0 : 1;
  const std::string& verb = kVerbs[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(kVerbs.size()) - 1))];
  d.expression = fmt::format("{} {} {} {}.", verb, nearer ? "nearer" : "farther", palette()[static_cast<std::size_t>(color)].name,
                             label);
  return d;
}

cv::Mat render(const SceneDraft& d) {
  cv::Mat img(kHeight, kWidth, CV_8UC3, cv::Scalar(128, 128, 128));
  // Larger (nearer) objects first so the small far object stays visible.
  std::vector<std::size_t> order(d.objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return d.objects[a].box.area() > d.objects[b].box.area(); });
  for (std::size_t i : order) {
    const auto& o = d.objects[i];
    const cv::Point p1(static_cast<int>(o.box.x1), static_cast<int>(o.box.y1));
    const cv::Point p2(static_cast<int>(o.box.x2) - 1, static_cast<int>(o.box.y2) - 1);
    cv::rectangle(img, p1, p2, palette()[static_cast<std::size_t>(o.color)].bgr, cv::FILLED);
    cv::rectangle(img, p1, p2, cv::Scalar(70, 70, 70), 1);
  }
  return img;
}

bool inside_hole(double u, double v, const BBox2D& hole) {
  return u >= hole.x1 - 1.0 && u < hole.x2 + 1.0 && v >= hole.y1 - 1.0 && v < hole.y2 + 1.0;
}

PointCloud make_cloud(Rng& rng, const SceneDraft& d, const Calibration& calib) {
  const Eigen::Matrix3d R = calib.extrinsic.topLeftCorner<3, 3>();
  const Eigen::Vector3d t = calib.extrinsic.topRightCorner<3, 1>();
  PointCloud cloud;
  auto push = [&](const Eigen::Vector3d& cam) {
    const Eigen::Vector3d p = R.transpose() * (cam - t);
    cloud.points.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z()),
                            static_cast<float>(rng.uniform(0.0, 1.0)), static_cast<float>(rng.uniform_int(0, 31))});
  };
  for (std::size_t i = 0; i < d.objects.size(); ++i) {
    const auto& o = d.objects[i];
    const bool host = d.hole && i != *d.hole && d.objects[*d.hole].box.x1 >= o.box.x1 && d.objects[*d.hole].box.x2 <= o.box.x2 &&
                      d.objects[*d.hole].box.y1 >= o.box.y1 && d.objects[*d.hole].box.y2 <= o.box.y2;
    for (int k = 0; k < o.points; ++k) {
      double u = 0;
      double v = 0;
      do {
        u = rng.uniform(o.box.x1 + 0.5, o.box.x2 - 0.5);
        v = rng.uniform(o.box.y1 + 0.5, o.box.y2 - 0.5);
      } while (host && inside_hole(u, v, d.objects[*d.hole].box));
      const double z = o.depth + rng.uniform(-0.5, 0.5);
      push({(u - calib.cx()) * z / calib.fx(), (v - calib.cy()) * z / calib.fy(), z});
    }
  }
  // Returns from behind the sensor never project and only exercise the depth cut.
  for (int k = 0; k < 200; ++k) push({rng.uniform(-20.0, 20.0), rng.uniform(-3.0, 3.0), rng.uniform(-30.0, -1.0)});
  return cloud;
}

std::vector<GroundTruthBox3D> ground_truth_3d(const SceneDraft& d, const Calibration& calib) {
  const Eigen::Matrix3d R = calib.extrinsic.topLeftCorner<3, 3>();
  const Eigen::Vector3d t = calib.extrinsic.topRightCorner<3, 1>();
  std::vector<GroundTruthBox3D> out;
  for (const auto& o : d.objects) {
    const double u = 0.5 * (o.box.x1 + o.box.x2);
    const double v = 0.5 * (o.box.y1 + o.box.y2);
    const Eigen::Vector3d cam((u - calib.cx()) * o.depth / calib.fx(), (v - calib.cy()) * o.depth / calib.fy(), o.depth);
    const double w = o.box.width() * o.depth / calib.fx();
    const double h = o.box.height() * o.depth / calib.fy();
    out.push_back({o.label, R.transpose() * (cam - t), Eigen::Vector3d(1.0, w, h)});
  }
  return out;
}

std::string caption_text(const Object& o) {
  const std::string color = palette()[static_cast<std::size_t>(o.color)].name;
  return fmt::format("{} {} {} {}.", article(color), color, o.label, position_phrase(o.box));
}

std::string grounding_reply(std::span<const ObjectRecord> records, const std::string& expression) {
  const int id = oracle_answer(records, expression);
  if (id < 0) return "No object matches the command.";
  return fmt::format("Object {} matches the described attributes and relation.\nANSWER: {}", id, id);
}

std::string fmt_coord(double v) { return fmt::format("{:g}", v); }

class ScriptWriter {
 public:
  void add(const backends::ChatRequest& request, std::string response, std::string stage) {
    const std::string digest = backends::prompt_digest(request);
    if (!seen_.insert(digest).second) return;
    backends::ScriptEntry e;
    e.digest = digest;
    e.response = std::move(response);
    e.stage = std::move(stage);
    script_.entries.push_back(std::move(e));
  }
  void save(const std::string& path) const { script_.save(path); }

 private:
  backends::Script script_;
  std::set<std::string> seen_;
};

std::vector<std::string> tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

bool has_token(const std::vector<std::string>& toks, const std::string& word) {
  return std::find(toks.begin(), toks.end(), word) != toks.end();
}

}  // namespace

const std::vector<std::string>& synthetic_labels() {
  static const std::vector<std::string> labels{"car", "truck", "bus", "pedestrian", "bicycle"};
  return labels;
}

const std::vector<std::string>& synthetic_colors() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& p : palette()) out.emplace_back(p.name);
    return out;
  }();
  return names;
}

int oracle_answer(std::span<const ObjectRecord> records, const std::string& expression) {
  const auto words = tokens(expression);
  std::string label;
  std::string color;
  for (const auto& l : synthetic_labels()) {
    if (has_token(words, l)) label = l;
  }
  for (const auto& c : synthetic_colors()) {
    if (has_token(words, c)) color = c;
  }

  std::vector<const ObjectRecord*> pool;
  for (const auto& r : records) {
    if (!label.empty() && r.name != label) continue;
    if (!color.empty() && !has_token(tokens(r.caption), color)) continue;
    pool.push_back(&r);
  }
  if (pool.empty()) return -1;
  std::sort(pool.begin(), pool.end(), [](const ObjectRecord* a, const ObjectRecord* b) { return a->id < b->id; });

  auto pick = [&](auto key, bool want_max) {
    const ObjectRecord* best = pool.front();
    for (const auto* r : pool) {
      const double kb = key(*best);
      const double kr = key(*r);
      if (want_max ? kr > kb : kr < kb) best = r;
    }
    return best->id;
  };

  if (has_token(words, "left")) return pick([](const ObjectRecord& r) { return static_cast<double>(r.location2d.x); }, false);
  if (has_token(words, "right")) return pick([](const ObjectRecord& r) { return static_cast<double>(r.location2d.x); }, true);
  const bool nearer = has_token(words, "nearer") || has_token(words, "closer");
  const bool farther = has_token(words, "farther") || has_token(words, "further");
  if (nearer || farther) {
    const bool all_depth = std::all_of(pool.begin(), pool.end(), [](const ObjectRecord* r) { return r->depth.has_value(); });
    if (all_depth) return pick([](const ObjectRecord& r) { return *r.depth; }, farther);
    // Without depth, lower in the image reads as closer to the camera.
    return pick([](const ObjectRecord& r) { return static_cast<double>(r.location2d.y); }, nearer);
  }
  return pool.front()->id;
}

SyntheticSummary generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
  if (spec.min_objects < 1 || spec.max_objects < spec.min_objects) throw std::invalid_argument("invalid object count range");

  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "scripts");
  if (spec.with_3d) fs::create_directories(root / "clouds");

  SyntheticSummary summary;
  summary.annotations_path = (root / "annotations.json").string();
  summary.config_path = (root / "config.json").string();
  summary.detections_path = (root / "detections.jsonl").string();
  summary.chat_script_path = (root / "scripts" / "chat.json").string();
  summary.vlm_script_path = (root / "scripts" / "vlm.json").string();

  Rng rng(spec.seed);
  const Calibration calib = synthetic_calibration();
  if (spec.with_3d) write_file_atomic((root / "calibration.json").string(), dataset::calibration_to_json(calib).dump(1) + "\n");

  // The generated config is the one the scripted replies are computed against.
  pipeline::PipelineConfig cfg;
  const auto exemplar_pool = prompting::default_exemplars();
  std::vector<prompting::Exemplar> exemplars(exemplar_pool.begin(),
                                             exemplar_pool.begin() + static_cast<std::ptrdiff_t>(std::min(cfg.max_exemplars, exemplar_pool.size())));

  ScriptWriter chat;
  ScriptWriter vlm;
  json scenes = json::array();
  std::string detections_text;

  for (std::size_t s = 0; s < spec.scenes; ++s) {
    const std::string id = fmt::format("synth-{:04d}", s);
    const bool depth_scene = spec.with_3d && rng.uniform(0.0, 1.0) < spec.depth_scene_fraction;
    SceneDraft d = depth_scene ? draft_depth_scene(rng, spec, id) : draft_flat_scene(rng, spec, id);

    const cv::Mat img = render(d);
    const auto png = image::encode_png(img);
    const std::string image_rel = fmt::format("images/{}.png", id);
    write_file_atomic((root / image_rel).string(), std::string_view(reinterpret_cast<const char*>(png.bytes.data()), png.bytes.size()));

    Scene scene;
    scene.scene_id = id;
    scene.image_path = (root / image_rel).string();
    scene.image_size = {kWidth, kHeight};
    scene.expression = d.expression;
    scene.gt_box = d.objects[d.target].box;

    json entry{{"scene_id", id},
               {"image", image_rel},
               {"image_size", {kWidth, kHeight}},
               {"command", d.expression},
               {"gt_box", dataset::box_to_json(scene.gt_box)}};

    std::optional<PointCloud> cloud;
    if (spec.with_3d) {
      cloud = make_cloud(rng, d, calib);
      const std::string cloud_rel = fmt::format("clouds/{}.bin", id);
      dataset::write_pointcloud((root / cloud_rel).string(), *cloud);
      scene.cloud_path = (root / cloud_rel).string();
      scene.calibration = calib;
      scene.gt_boxes_3d = ground_truth_3d(d, calib);
      entry["cloud"] = cloud_rel;
      entry["calibration"] = "calibration.json";
      json gt = json::array();
      for (const auto& g : *scene.gt_boxes_3d) {
        gt.push_back({{"label", g.label},
                      {"centroid", {g.centroid.x(), g.centroid.y(), g.centroid.z()}},
                      {"extents", {g.extents.x(), g.extents.y(), g.extents.z()}}});
      }
      entry["gt_boxes_3d"] = gt;
    }
    scenes.push_back(entry);

    // Detections: one per drawn object plus low-confidence clutter the threshold removes.
    std::vector<Detection> raw;
    for (const auto& o : d.objects) raw.push_back({o.label, o.confidence, o.box});
    const int clutter = rng.uniform_int(0, 2);
    for (int k = 0; k < clutter; ++k) {
      const int w = rng.uniform_int(30, 80);
      const int h = rng.uniform_int(30, 80);
      const int x = rng.uniform_int(0, kWidth - w);
      const int y = rng.uniform_int(0, kHeight - h);
      raw.push_back({synthetic_labels()[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(synthetic_labels().size()) - 1))],
                     rng.uniform_int(50, 250) / 1000.0,
                     {static_cast<double>(x), static_cast<double>(y), static_cast<double>(x + w), static_cast<double>(y + h)}});
    }
    for (const auto& det : raw) detections_text += dataset::detection_to_json(id, det).dump() + "\n";
    const auto dets = backends::postprocess_detections(raw, cfg.detector, scene.image_size);

    // Category extraction.
    chat.add(prompting::build_category_prompt(d.expression), json::array({d.objects[d.target].label}).dump(), "categories");

    // Captions keyed by the exact crop bytes the pipeline will send.
    std::vector<std::string> captions;
    std::vector<prompting::CropCandidate> crops;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const auto crop = image::crop_region(img, dets[i].box, cfg.crop_padding);
      const auto obj = std::find_if(d.objects.begin(), d.objects.end(), [&](const Object& o) { return o.box == dets[i].box; });
      const std::string text = caption_text(*obj);
      vlm.add(backends::build_caption_request({}, crop, dets[i].label, cfg.captioning.max_tokens), text, "caption");
      captions.push_back(backends::normalize_caption(text, dets[i].label, cfg.captioning.max_words).text);
      crops.push_back({static_cast<int>(i), dets[i].label, crop});
    }

    std::vector<pipeline::Variant> variants{pipeline::Variant::llm_rg};
    if (spec.with_3d) {
      variants.push_back(pipeline::Variant::llm_rg_lidar);
      variants.push_back(pipeline::Variant::llm_rg_gt3d);
    }
    for (auto v : variants) {
      cfg.variant = v;
      const auto candidates = pipeline::build_records(dets, captions, scene, cfg, cloud ? &*cloud : nullptr);
      std::vector<ObjectRecord> records;
      for (const auto& c : candidates) records.push_back(c.record);
      chat.add(prompting::build_grounding_prompt(records, d.expression, exemplars, {cfg.chain_of_thought}),
               grounding_reply(records, d.expression), fmt::format("grounding:{}", pipeline::to_string(v)));
    }

    // Baselines.
    const image::EncodedImage full{png.bytes, "image/png"};
    const auto& gt = scene.gt_box;
    vlm.add(prompting::build_naive_vlm_prompt(d.expression, full, scene.image_size),
            fmt::format("[{}, {}, {}, {}]", fmt_coord(gt.x1), fmt_coord(gt.y1), fmt_coord(gt.x2), fmt_coord(gt.y2)),
            "naive_vlm");
    int target_index = -1;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (dets[i].box == gt) target_index = static_cast<int>(i);
    }
    vlm.add(prompting::build_crops_vlm_prompt(d.expression, crops), fmt::format("ANSWER: {}", target_index), "crops_vlm");
    cfg.variant = pipeline::Variant::boxes_captions_vlm;
    const auto candidates = pipeline::build_records(dets, captions, scene, cfg);
    std::vector<ObjectRecord> records;
    std::vector<BBox2D> boxes;
    for (const auto& c : candidates) {
      records.push_back(c.record);
      boxes.push_back(c.detection.box);
    }
    vlm.add(prompting::build_boxes_captions_vlm_prompt(records, d.expression, image::annotate_candidates(img, boxes)),
            grounding_reply(records, d.expression), "boxes_captions_vlm");

    summary.scene_ids.push_back(id);
    if (d.depth_scene) summary.depth_scene_ids.push_back(id);
  }

  write_file_atomic(summary.annotations_path, json{{"version", 1}, {"scenes", scenes}}.dump(1) + "\n");
  write_file_atomic(summary.detections_path, detections_text);
  chat.save(summary.chat_script_path);
  vlm.save(summary.vlm_script_path);

  const json config{
      {"version", 1},
      {"variant", spec.with_3d ? "llm_rg_lidar" : "llm_rg"},
      {"annotations", "annotations.json"},
      {"cache_dir", "cache"},
      {"backends",
       {{"chat", {{"kind", "chat"}, {"script", "scripts/chat.json"}, {"model", "scripted-llm"}}},
        {"caption", {{"kind", "caption"}, {"script", "scripts/vlm.json"}, {"model", "scripted-vlm"}}},
        {"detect", {{"kind", "detect"}, {"script", "detections.jsonl"}, {"model", "precomputed"}}}}},
  };
  write_file_atomic(summary.config_path, config.dump(1) + "\n");
  write_file_atomic((root / "subsets.json").string(),
                    json{{"depth_disambiguation", summary.depth_scene_ids}}.dump(1) + "\n");
  return summary;
}

}  // namespace llmrg::synth
