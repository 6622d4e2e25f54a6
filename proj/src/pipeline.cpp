#include "llmrg/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "llmrg/dataset.hpp"
#include "llmrg/digest.hpp"
#include "llmrg/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace llmrg::pipeline {

using backends::BackendDescriptor;
using backends::BackendKind;

const char* to_string(Variant v) {
  switch (v) {
    case Variant::llm_rg: return "llm_rg";
    case Variant::llm_rg_lidar: return "llm_rg_lidar";
    case Variant::llm_rg_gt3d: return "llm_rg_gt3d";
    case Variant::naive_vlm: return "naive_vlm";
    case Variant::crops_vlm: return "crops_vlm";
    case Variant::boxes_captions_vlm: return "boxes_captions_vlm";
  }
  return "llm_rg";
}

Variant variant_from_string(const std::string& text) {
  for (auto v : {Variant::llm_rg, Variant::llm_rg_lidar, Variant::llm_rg_gt3d, Variant::naive_vlm, Variant::crops_vlm,
                 Variant::boxes_captions_vlm}) {
    if (text == to_string(v)) return v;
  }
  throw ConfigError("unknown variant: " + text);
}

bool is_baseline(Variant v) {
  return v == Variant::naive_vlm || v == Variant::crops_vlm || v == Variant::boxes_captions_vlm;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string resolve_path(const std::string& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  return path.is_absolute() ? p : (fs::path(base) / path).lexically_normal().string();
}

std::optional<BackendDescriptor> read_backend(const json& backends, const char* slot, BackendKind kind,
                                              const std::string& base) {
  if (!backends.contains(slot) || backends.at(slot).is_null()) return std::nullopt;
  try {
    BackendDescriptor d = backends::descriptor_from_json(backends.at(slot), kind);
    d.script = resolve_path(base, d.script);
    return d;
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("backends.{}: {}", slot, e.what()));
  }
}

}  // namespace

PipelineConfig config_from_json(const json& j, const std::string& base_dir) {
  PipelineConfig c;
  try {
    if (j.value("version", 1) != 1) throw ConfigError("unsupported config version");
    c.variant = variant_from_string(j.value("variant", std::string("llm_rg")));
    if (j.contains("backends")) {
      const auto& b = j.at("backends");
      c.chat = read_backend(b, "chat", BackendKind::chat, base_dir);
      c.caption = read_backend(b, "caption", BackendKind::caption, base_dir);
      c.detect = read_backend(b, "detect", BackendKind::detect, base_dir);
    }
    if (j.contains("detector")) {
      c.detector.conf_min = j["detector"].value("conf_min", c.detector.conf_min);
      c.detector.max_candidates = j["detector"].value("max_candidates", c.detector.max_candidates);
    }
    if (j.contains("captioning")) {
      c.captioning.max_words = j["captioning"].value("max_words", c.captioning.max_words);
      c.captioning.max_tokens = j["captioning"].value("max_tokens", c.captioning.max_tokens);
    }
    if (j.contains("lift")) {
      const auto& l = j.at("lift");
      c.lift.depth_min = l.value("depth_min", c.lift.depth_min);
      c.lift.min_points = l.value("min_points", c.lift.min_points);
      c.lift.trim_low = l.value("trim_low", c.lift.trim_low);
      c.lift.trim_high = l.value("trim_high", c.lift.trim_high);
      c.lift.trim_min_points = l.value("trim_min_points", c.lift.trim_min_points);
    }
    if (j.contains("retry")) {
      const auto& r = j.at("retry");
      c.retry.max_attempts = r.value("attempts", c.retry.max_attempts);
      c.retry.backoff_base_s = r.value("backoff_base_s", c.retry.backoff_base_s);
      c.retry.backoff_factor = r.value("backoff_factor", c.retry.backoff_factor);
    }
    c.crop_padding = j.value("crop_padding", c.crop_padding);
    c.workers = j.value("workers", c.workers);
    c.parse_attempts = j.value("parse_attempts", c.parse_attempts);
    c.cache_dir = resolve_path(base_dir, j.value("cache_dir", std::string()));
    if (j.contains("prompting")) {
      const auto& p = j.at("prompting");
      c.chain_of_thought = p.value("chain_of_thought", c.chain_of_thought);
      c.exemplars_path = resolve_path(base_dir, p.value("exemplars", std::string()));
      c.max_exemplars = p.value("max_exemplars", c.max_exemplars);
      c.temperature = p.value("temperature", c.temperature);
      c.max_tokens = p.value("max_tokens", c.max_tokens);
    }
    c.gt3d_replace_detections = j.value("gt3d_replace_detections", false);
    c.annotations = resolve_path(base_dir, j.value("annotations", std::string()));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.workers < 1) throw ConfigError("workers must be at least 1");
  if (c.parse_attempts < 1) throw ConfigError("parse_attempts must be at least 1");
  if (c.crop_padding < 0.0) throw ConfigError("crop_padding must be non-negative");
  if (c.temperature < 0.0) throw ConfigError("temperature must be non-negative");
  return c;
}

PipelineConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file_text(path));
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path, e.what()));
  }
  return config_from_json(j, fs::path(path).parent_path().string());
}

json config_to_json(const PipelineConfig& c) {
  json backends = json::object();
  if (c.chat) backends["chat"] = backends::descriptor_to_json(*c.chat);
  if (c.caption) backends["caption"] = backends::descriptor_to_json(*c.caption);
  if (c.detect) backends["detect"] = backends::descriptor_to_json(*c.detect);
  return {
      {"version", 1},
      {"variant", to_string(c.variant)},
      {"backends", backends},
      {"detector", {{"conf_min", c.detector.conf_min}, {"max_candidates", c.detector.max_candidates}}},
      {"captioning", {{"max_words", c.captioning.max_words}, {"max_tokens", c.captioning.max_tokens}}},
      {"lift",
       {{"depth_min", c.lift.depth_min},
        {"min_points", c.lift.min_points},
        {"trim_low", c.lift.trim_low},
        {"trim_high", c.lift.trim_high},
        {"trim_min_points", c.lift.trim_min_points}}},
      {"retry",
       {{"attempts", c.retry.max_attempts},
        {"backoff_base_s", c.retry.backoff_base_s},
        {"backoff_factor", c.retry.backoff_factor}}},
      {"crop_padding", c.crop_padding},
      {"workers", c.workers},
      {"parse_attempts", c.parse_attempts},
      {"cache_dir", c.cache_dir},
      {"prompting",
       {{"chain_of_thought", c.chain_of_thought},
        {"exemplars", c.exemplars_path},
        {"max_exemplars", c.max_exemplars},
        {"temperature", c.temperature},
        {"max_tokens", c.max_tokens}}},
      {"gt3d_replace_detections", c.gt3d_replace_detections},
      {"annotations", c.annotations},
  };
}

std::string config_digest(const PipelineConfig& config) {
  json j = config_to_json(config);
  j.erase("workers");
  j.erase("cache_dir");
  j.erase("annotations");
  return sha256_hex(j.dump());
}

std::vector<std::string> check_config(const PipelineConfig& c) {
  std::vector<std::string> out;
  const bool needs_chat = c.variant != Variant::naive_vlm;
  const bool needs_detect = c.variant != Variant::naive_vlm &&
                            !(c.variant == Variant::llm_rg_gt3d && c.gt3d_replace_detections);
  if (needs_chat && !c.chat) out.emplace_back("variant needs a chat backend");
  if (!c.caption) out.emplace_back("variant needs a caption backend");
  if (needs_detect && !c.detect) out.emplace_back("variant needs a detect backend");
  return out;
}

std::vector<std::string> check_prerequisites(const Scene& scene, Variant variant) {
  std::vector<std::string> out;
  if (variant == Variant::llm_rg_lidar) {
    if (!scene.cloud_path) out.push_back(scene.scene_id + ": lidar variant needs a point cloud");
    if (!scene.calibration) out.push_back(scene.scene_id + ": lidar variant needs a calibration");
  }
  if (variant == Variant::llm_rg_gt3d) {
    if (!scene.gt_boxes_3d) out.push_back(scene.scene_id + ": gt3d variant needs ground-truth 3D boxes");
    if (!scene.calibration) out.push_back(scene.scene_id + ": gt3d variant needs a calibration");
  }
  return out;
}

const std::vector<std::string>& fallback_vocabulary() {
  static const std::vector<std::string> vocab{"car",     "truck",      "bus",     "pedestrian",   "bicycle",
                                              "motorcycle", "trailer", "traffic cone", "barrier"};
  return vocab;
}

// ---------------------------------------------------------------------------
// Records

std::vector<int> match_ground_truth(std::span<const Detection> detections, std::span<const std::optional<BBox2D>> projected) {
  std::vector<int> match(detections.size(), -1);
  std::vector<bool> taken(projected.size(), false);
  for (std::size_t d = 0; d < detections.size(); ++d) {
    double best = 0.0;
    int best_idx = -1;
    for (std::size_t g = 0; g < projected.size(); ++g) {
      if (taken[g] || !projected[g]) continue;
      const double v = geometry::iou(detections[d].box, *projected[g]);
      if (v > best) {
        best = v;
        best_idx = static_cast<int>(g);
      }
    }
    if (best_idx >= 0) {
      match[d] = best_idx;
      taken[static_cast<std::size_t>(best_idx)] = true;
    }
  }
  return match;
}

namespace {

std::vector<std::optional<BBox2D>> project_ground_truth(const Scene& scene, double depth_min) {
  std::vector<std::optional<BBox2D>> out;
  if (!scene.gt_boxes_3d || !scene.calibration) return out;
  for (const auto& g : *scene.gt_boxes_3d) {
    out.push_back(geometry::project_box_3d(g.centroid, g.extents, *scene.calibration, scene.image_size, depth_min));
  }
  return out;
}

}  // namespace

std::vector<Detection> detections_from_ground_truth(const Scene& scene, double depth_min) {
  std::vector<Detection> out;
  const auto projected = project_ground_truth(scene, depth_min);
  for (std::size_t g = 0; g < projected.size(); ++g) {
    if (projected[g]) out.push_back({(*scene.gt_boxes_3d)[g].label, 1.0, *projected[g]});
  }
  return out;
}

std::vector<Candidate> build_records(const std::vector<Detection>& detections, const std::vector<std::string>& captions,
                                     const Scene& scene, const PipelineConfig& config, const PointCloud* cloud) {
  if (captions.size() != detections.size()) throw std::invalid_argument("captions must align 1:1 with detections");

  std::vector<std::size_t> order(detections.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return detections[a].confidence > detections[b].confidence; });

  std::vector<Candidate> out;
  out.reserve(order.size());
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const Detection& det = detections[order[rank]];
    Candidate c;
    c.detection = det;
    c.record.id = static_cast<int>(rank);
    c.record.name = det.label;
    c.record.caption = captions[order[rank]];
    c.record.location2d = bbox_center(det.box);
    out.push_back(std::move(c));
  }

  if (config.variant == Variant::llm_rg_lidar && cloud && scene.calibration) {
    for (auto& c : out) {
      if (auto lifted = geometry::lift_box_to_3d(c.detection.box, *cloud, *scene.calibration, config.lift)) {
        c.record.location3d = lifted->centroid;
        c.record.depth = geometry::camera_depth(*scene.calibration, lifted->centroid);
      }
    }
  } else if (config.variant == Variant::llm_rg_gt3d && scene.gt_boxes_3d && scene.calibration) {
    const auto projected = project_ground_truth(scene, config.lift.depth_min);
    std::vector<Detection> dets;
    for (const auto& c : out) dets.push_back(c.detection);
    const auto match = match_ground_truth(dets, projected);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (match[i] < 0) continue;
      const auto& g = (*scene.gt_boxes_3d)[static_cast<std::size_t>(match[i])];
      out[i].record.location3d = g.centroid;
      out[i].record.depth = geometry::camera_depth(*scene.calibration, g.centroid);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

void add_trace(GroundingResult& result, const std::string& stage, const backends::CallInfo& info, std::string response,
               std::string note = {}) {
  result.trace.push_back({stage, info.request_digest, std::move(response), info.wall_ms, info.attempts, info.from_cache,
                          std::move(note)});
  result.latency_ms += info.backend_latency_ms;
}

void score(GroundingResult& result, const Scene& scene) {
  result.iou = result.predicted_box ? geometry::iou(*result.predicted_box, scene.gt_box) : 0.0;
  result.hit_at_05 = result.iou >= 0.5;
}

FailureMode failure_from_parse(prompting::ParseErrorKind kind) {
  switch (kind) {
    case prompting::ParseErrorKind::id_out_of_range: return FailureMode::out_of_range;
    case prompting::ParseErrorKind::no_box_found: return FailureMode::no_box;
    default: return FailureMode::no_id;
  }
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return s;
}

json detections_json(const std::vector<Detection>& dets) {
  json arr = json::array();
  for (const auto& d : dets) arr.push_back({{"label", d.label}, {"confidence", d.confidence}, {"box", dataset::box_to_json(d.box)}});
  return arr;
}

}  // namespace

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)), digest_(config_digest(config_)) {
  if (auto problems = check_config(config_); !problems.empty()) throw ConfigError(problems.front());
  try {
    exemplars_ = config_.exemplars_path.empty() ? prompting::default_exemplars()
                                                : prompting::load_exemplars(config_.exemplars_path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("exemplars: ") + e.what());
  }
  if (exemplars_.size() > config_.max_exemplars) exemplars_.resize(config_.max_exemplars);

  if (!config_.cache_dir.empty()) cache_ = std::make_shared<backends::DiskCache>(config_.cache_dir);
  try {
    if (config_.chat) {
      chat_ = std::make_unique<backends::ChatClient>(*config_.chat, backends::make_chat_backend(*config_.chat, config_.retry),
                                                     cache_);
    }
    if (config_.caption) {
      vlm_ = std::make_unique<backends::ChatClient>(*config_.caption,
                                                    backends::make_chat_backend(*config_.caption, config_.retry), cache_);
    }
    if (config_.detect) {
      detect_ = std::make_unique<backends::DetectClient>(
          *config_.detect, backends::make_detect_backend(*config_.detect, config_.retry), cache_);
    }
  } catch (const backends::BackendError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

ServiceCounters Pipeline::counters() const {
  ServiceCounters c;
  if (chat_) c.chat_calls = chat_->backend().calls();
  if (vlm_) c.caption_calls = vlm_->backend().calls();
  if (detect_) c.detect_calls = detect_->backend().calls();
  if (cache_) {
    c.cache_hits = cache_->hits();
    c.cache_misses = cache_->misses();
  }
  return c;
}

backends::ChatRequest Pipeline::tune(backends::ChatRequest request) const {
  request.temperature = config_.temperature;
  return request;
}

Pipeline::CategoryOutcome Pipeline::extract_categories(const Scene& scene, GroundingResult& result) {
  auto reply = chat_->chat(tune(prompting::build_category_prompt(scene.expression)));
  CategoryOutcome out;
  try {
    out.categories = prompting::parse_category_response(reply.value.text);
    add_trace(result, "categories", reply.info, reply.value.text);
  } catch (const prompting::ParseError& e) {
    out.categories = fallback_vocabulary();
    out.fallback = true;
    add_trace(result, "categories", reply.info, reply.value.text, std::string("vocabulary_fallback:") + to_string(e.kind));
  }
  return out;
}

std::vector<Detection> Pipeline::detect_candidates(const Scene& scene, const std::vector<std::string>& categories,
                                                   GroundingResult& result) {
  if (config_.variant == Variant::llm_rg_gt3d && config_.gt3d_replace_detections) {
    auto dets = backends::postprocess_detections(detections_from_ground_truth(scene, config_.lift.depth_min),
                                                 config_.detector, scene.image_size);
    return dets;
  }
  backends::DetectRequest req{scene.scene_id, scene.image_path, categories, config_.detector.conf_min};
  auto served = backends::detect(*detect_, req, config_.detector, scene.image_size);
  add_trace(result, "detect", served.info, detections_json(served.value).dump(),
            fmt::format("kept {}", served.value.size()));
  return std::move(served.value);
}

std::vector<std::string> Pipeline::caption_candidates(const cv::Mat& img, const std::vector<Detection>& detections,
                                                      GroundingResult& result) {
  std::vector<std::string> captions;
  for (const auto& det : detections) {
    const auto crop = image::crop_region(img, det.box, config_.crop_padding);
    auto served = backends::caption(*vlm_, crop, det.label, config_.captioning);
    std::string note;
    if (served.value.truncated) note = "truncated";
    if (served.value.fallback) note = "label_fallback";
    add_trace(result, "caption", served.info, served.value.text, note);
    captions.push_back(std::move(served.value.text));
  }
  return captions;
}

GroundingResult Pipeline::run_sample(const Scene& scene) {
  GroundingResult result;
  result.scene_id = scene.scene_id;
  result.variant = to_string(config_.variant);
  result.config_digest = digest_;
  if (auto problems = check_prerequisites(scene, config_.variant); !problems.empty()) throw ConfigError(problems.front());
  if (is_baseline(config_.variant)) return run_baseline(scene, std::move(result));
  return run_llm_rg(scene, std::move(result));
}

GroundingResult Pipeline::run_llm_rg(const Scene& scene, GroundingResult result) {
  const auto categories = extract_categories(scene, result);
  const auto detections = detect_candidates(scene, categories.categories, result);
  if (detections.empty()) {
    result.failure_mode = FailureMode::no_detections;
    score(result, scene);
    return result;
  }

  const cv::Mat img = image::load(scene.image_path);
  const auto captions = caption_candidates(img, detections, result);

  std::optional<PointCloud> cloud;
  if (config_.variant == Variant::llm_rg_lidar) {
    try {
      cloud = dataset::load_pointcloud(*scene.cloud_path).cloud;
    } catch (const dataset::DatasetError& e) {
      throw image::ImageError(e.what());
    }
  }
  const auto candidates = build_records(detections, captions, scene, config_, cloud ? &*cloud : nullptr);

  std::vector<ObjectRecord> records;
  std::vector<int> ids;
  for (const auto& c : candidates) {
    records.push_back(c.record);
    ids.push_back(c.record.id);
  }

  auto request = tune(prompting::build_grounding_prompt(records, scene.expression, exemplars_,
                                                        {config_.chain_of_thought}));
  request.max_tokens = config_.max_tokens;

  std::optional<int> chosen;
  prompting::ParseErrorKind last_error = prompting::ParseErrorKind::no_id_found;
  for (int attempt = 1; attempt <= config_.parse_attempts && !chosen; ++attempt) {
    auto reply = chat_->chat(request);
    try {
      chosen = prompting::parse_grounding_response(reply.value.text, ids);
      add_trace(result, "grounding", reply.info, reply.value.text, fmt::format("parse_attempt {}", attempt));
    } catch (const prompting::ParseError& e) {
      last_error = e.kind;
      add_trace(result, "grounding", reply.info, reply.value.text,
                fmt::format("parse_attempt {}: {}", attempt, to_string(e.kind)));
      request = prompting::with_reminder(request, reply.value.text);
    }
  }

  if (chosen) {
    result.chosen_id = *chosen;
  } else {
    // Highest-confidence candidate of the first extracted category, else the top candidate.
    result.fallback_used = true;
    result.failure_mode = failure_from_parse(last_error);
    const std::string wanted = lower(categories.categories.front());
    result.chosen_id = 0;
    for (const auto& c : candidates) {
      if (lower(c.detection.label) == wanted) {
        result.chosen_id = c.record.id;
        break;
      }
    }
  }
  result.predicted_box = candidates[static_cast<std::size_t>(result.chosen_id)].detection.box;
  score(result, scene);
  return result;
}

GroundingResult Pipeline::run_baseline(const Scene& scene, GroundingResult result) {
  if (config_.variant == Variant::naive_vlm) {
    const auto full = image::load_encoded(scene.image_path);
    auto reply = vlm_->chat(tune(prompting::build_naive_vlm_prompt(scene.expression, full, scene.image_size)));
    add_trace(result, "vlm", reply.info, reply.value.text);
    try {
      BBox2D box = prompting::parse_box_response(reply.value.text);
      box.x1 = std::clamp(box.x1, 0.0, static_cast<double>(scene.image_size.width));
      box.x2 = std::clamp(box.x2, 0.0, static_cast<double>(scene.image_size.width));
      box.y1 = std::clamp(box.y1, 0.0, static_cast<double>(scene.image_size.height));
      box.y2 = std::clamp(box.y2, 0.0, static_cast<double>(scene.image_size.height));
      if (!box.valid()) throw prompting::ParseError(prompting::ParseErrorKind::no_box_found, "box outside image", reply.value.text);
      result.chosen_id = 0;
      result.predicted_box = box;
    } catch (const prompting::ParseError& e) {
      result.failure_mode = failure_from_parse(e.kind);
    }
    score(result, scene);
    return result;
  }

  const auto categories = extract_categories(scene, result);
  const auto detections = detect_candidates(scene, categories.categories, result);
  if (detections.empty()) {
    result.failure_mode = FailureMode::no_detections;
    score(result, scene);
    return result;
  }
  const cv::Mat img = image::load(scene.image_path);

  std::vector<int> ids;
  backends::ChatRequest request;
  if (config_.variant == Variant::crops_vlm) {
    std::vector<prompting::CropCandidate> crops;
    for (std::size_t i = 0; i < detections.size(); ++i) {
      crops.push_back({static_cast<int>(i), detections[i].label, image::crop_region(img, detections[i].box, config_.crop_padding)});
      ids.push_back(static_cast<int>(i));
    }
    request = prompting::build_crops_vlm_prompt(scene.expression, crops);
  } else {
    const auto captions = caption_candidates(img, detections, result);
    const auto candidates = build_records(detections, captions, scene, config_);
    std::vector<ObjectRecord> records;
    std::vector<BBox2D> boxes;
    for (const auto& c : candidates) {
      records.push_back(c.record);
      boxes.push_back(c.detection.box);
      ids.push_back(c.record.id);
    }
    request = prompting::build_boxes_captions_vlm_prompt(records, scene.expression, image::annotate_candidates(img, boxes));
  }
  request = tune(std::move(request));
  request.max_tokens = config_.max_tokens;

  auto reply = vlm_->chat(request);
  add_trace(result, "vlm", reply.info, reply.value.text);
  try {
    result.chosen_id = prompting::parse_grounding_response(reply.value.text, ids);
    result.predicted_box = detections[static_cast<std::size_t>(result.chosen_id)].box;
  } catch (const prompting::ParseError& e) {
    result.failure_mode = failure_from_parse(e.kind);
  }
  score(result, scene);
  return result;
}

Pipeline::RunOutcome Pipeline::run(const std::vector<Scene>& scenes, int workers) {
  const std::size_t n = scenes.size();
  std::vector<std::optional<GroundingResult>> slots(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex error_mutex;
  RunOutcome outcome;

  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        slots[i] = run_sample(scenes[i]);
      } catch (const backends::BackendError& e) {
        GroundingResult failed;
        failed.scene_id = scenes[i].scene_id;
        failed.variant = to_string(config_.variant);
        failed.config_digest = digest_;
        failed.failure_mode = FailureMode::backend_fatal;
        failed.trace.push_back({"error", {}, e.raw_body, 0.0, e.attempts, false,
                                fmt::format("{}: {}", backends::to_string(e.kind), e.what())});
        slots[i] = std::move(failed);
        std::lock_guard lock(error_mutex);
        if (!outcome.fatal_error) {
          outcome.fatal_error = fmt::format("{}: {} backend error after {} attempt(s): {}", scenes[i].scene_id,
                                            backends::to_string(e.kind), e.attempts, e.what());
          outcome.fatal_is_backend = true;
        }
        stop = true;
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mutex);
        if (!outcome.fatal_error) outcome.fatal_error = fmt::format("{}: {}", scenes[i].scene_id, e.what());
        stop = true;
      }
    }
  };

  const int width = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::size_t>(n, 1))));
  if (width == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < width; ++w) pool.emplace_back(worker);
  }

  for (auto& s : slots) {
    if (s) outcome.results.push_back(std::move(*s));
  }
  return outcome;
}

}  // namespace llmrg::pipeline
