#include <gtest/gtest.h>

#include <fmt/format.h>

#include "llmrg/dataset.hpp"
#include "llmrg/pipeline.hpp"
#include "llmrg/synth.hpp"
#include "test_util.hpp"

#include "httplib.h"

using namespace llmrg;
using namespace llmrg::pipeline;
using llmrg::testing::TempDir;
using nlohmann::json;

namespace {

struct SynthFixture {
  TempDir tmp;
  synth::SyntheticSummary summary;
  std::vector<Scene> scenes;

  explicit SynthFixture(std::size_t n = 12, bool with_3d = true) {
    synth::SyntheticSpec spec;
    spec.scenes = n;
    spec.with_3d = with_3d;
    summary = synth::generate_synthetic(spec, tmp.file("data"));
    scenes = dataset::load_annotations(summary.annotations_path).scenes;
  }

  PipelineConfig config(Variant v) const {
    auto c = load_config(summary.config_path);
    c.variant = v;
    c.cache_dir.clear();
    return c;
  }
};

Detection det(std::string label, double conf, BBox2D box) { return {std::move(label), conf, box}; }

std::string rows_signature(const std::vector<GroundingResult>& rows) {
  std::string s;
  for (const auto& r : rows) {
    s += fmt::format("{}|{}|{}|{:.17g}|{}|{}|{:.17g};", r.scene_id, r.chosen_id, r.hit_at_05, r.iou, r.fallback_used,
                     to_string(r.failure_mode), r.latency_ms);
  }
  return s;
}

}  // namespace

TEST(Config, JsonRoundTripAndDigest) {
  PipelineConfig c;
  c.variant = Variant::crops_vlm;
  backends::BackendDescriptor d;
  d.kind = backends::BackendKind::chat;
  d.endpoint = "http://localhost:1/v1";
  d.model_name = "m";
  d.auth_env = "KEY_VAR";
  c.chat = d;
  c.parse_attempts = 2;
  c.lift.min_points = 9;
  const auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(config_digest(back), config_digest(c));

  PipelineConfig other = c;
  other.workers = 8;
  other.cache_dir = "/elsewhere";
  EXPECT_EQ(config_digest(other), config_digest(c));
  other.lift.min_points = 10;
  EXPECT_NE(config_digest(other), config_digest(c));
}

TEST(Config, RejectsBadValues) {
  EXPECT_THROW(config_from_json(json{{"variant", "telepathy"}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"workers", 0}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"version", 2}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"backends", {{"chat", {{"endpoint", "a"}, {"script", "b"}}}}}}), ConfigError);
}

TEST(Config, VariantBackendRequirements) {
  PipelineConfig c;
  EXPECT_EQ(check_config(c).size(), 3u);
  c.variant = Variant::naive_vlm;
  EXPECT_EQ(check_config(c).size(), 1u);
  c.caption = backends::BackendDescriptor{};
  EXPECT_TRUE(check_config(c).empty());
  c.variant = Variant::llm_rg_gt3d;
  c.chat = backends::BackendDescriptor{};
  EXPECT_EQ(check_config(c).size(), 1u);
  c.gt3d_replace_detections = true;
  EXPECT_TRUE(check_config(c).empty());
}

TEST(Prerequisites, ThreeDimensionalVariantsNeedTheirInputs) {
  Scene s;
  s.scene_id = "x";
  EXPECT_TRUE(check_prerequisites(s, Variant::llm_rg).empty());
  EXPECT_EQ(check_prerequisites(s, Variant::llm_rg_lidar).size(), 2u);
  EXPECT_EQ(check_prerequisites(s, Variant::llm_rg_gt3d).size(), 2u);
  s.calibration = Calibration{};
  s.cloud_path = "c.bin";
  EXPECT_TRUE(check_prerequisites(s, Variant::llm_rg_lidar).empty());
}

TEST(Records, IdsFollowConfidenceOrderStably) {
  const std::vector<Detection> dets{det("car", 0.5, {0, 0, 10, 10}), det("bus", 0.9, {20, 20, 40, 40}),
                                    det("van", 0.5, {50, 50, 61, 61}), det("car", 0.7, {0, 0, 3, 5})};
  const std::vector<std::string> caps{"c0", "c1", "c2", "c3"};
  const auto out = build_records(dets, caps, Scene{}, PipelineConfig{});
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[0].record.name, "bus");
  EXPECT_EQ(out[1].record.caption, "c3");
  EXPECT_EQ(out[2].record.caption, "c0");
  EXPECT_EQ(out[3].record.caption, "c2");
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].record.id, static_cast<int>(i));
    EXPECT_EQ(out[i].record.location2d, bbox_center(out[i].detection.box));
    EXPECT_FALSE(out[i].record.depth.has_value());
  }
  EXPECT_THROW(build_records(dets, {"a"}, Scene{}, PipelineConfig{}), std::invalid_argument);
}

TEST(GroundTruthMatch, GreedyInDetectionOrder) {
  const std::vector<Detection> dets{det("car", 0.9, {0, 0, 10, 10}), det("car", 0.8, {1, 1, 11, 11}),
                                    det("car", 0.7, {100, 100, 110, 110})};
  const std::vector<std::optional<BBox2D>> gt{BBox2D{2, 2, 12, 12}, std::nullopt, BBox2D{0, 0, 10, 10}};
  EXPECT_EQ(match_ground_truth(dets, gt), (std::vector<int>{2, 0, -1}));
  EXPECT_EQ(match_ground_truth(dets, {}), (std::vector<int>{-1, -1, -1}));
}

TEST(Pipeline, SyntheticScenesResolveUnderEveryVariant) {
  SynthFixture fx;
  for (auto v : {Variant::llm_rg_lidar, Variant::llm_rg_gt3d, Variant::naive_vlm, Variant::crops_vlm}) {
    Pipeline p(fx.config(v));
    const auto out = p.run(fx.scenes, 1);
    ASSERT_FALSE(out.fatal_error) << *out.fatal_error;
    ASSERT_EQ(out.results.size(), fx.scenes.size());
    for (const auto& r : out.results) {
      EXPECT_TRUE(r.hit_at_05) << to_string(v) << " " << r.scene_id;
      EXPECT_EQ(r.failure_mode, FailureMode::none);
      EXPECT_EQ(r.variant, to_string(v));
      EXPECT_EQ(r.config_digest, p.digest());
    }
  }
}

TEST(Pipeline, LidarRecordsCarryDepthInTheGroundingPrompt) {
  SynthFixture fx(6);
  Pipeline p(fx.config(Variant::llm_rg_lidar));
  const auto r = p.run_sample(fx.scenes.front());
  bool grounded = false;
  for (const auto& t : r.trace) grounded |= t.stage == "grounding";
  EXPECT_TRUE(grounded);
  EXPECT_EQ(r.latency_ms, 0.0);
}

TEST(Pipeline, UnparseableRepliesFallBackAfterThreeAttempts) {
  SynthFixture fx(4, false);
  TempDir tmp;
  auto c = fx.config(Variant::llm_rg);
  c.chat->script = tmp.write("garbage.json", R"({"version":1,"entries":[],"default":"I am not sure, sorry."})");
  Pipeline p(c);
  const auto out = p.run(fx.scenes, 1);
  ASSERT_FALSE(out.fatal_error);
  const auto detections = dataset::load_detections(fx.summary.detections_path).by_scene;
  for (const auto& r : out.results) {
    EXPECT_TRUE(r.fallback_used);
    EXPECT_EQ(r.failure_mode, FailureMode::no_id);
    int attempts = 0;
    std::string category_note;
    for (const auto& t : r.trace) {
      attempts += t.stage == "grounding";
      if (t.stage == "categories") category_note = t.note;
    }
    EXPECT_EQ(attempts, 3);
    EXPECT_FALSE(category_note.empty());

    // Category extraction failed, so the fallback is the top "car" detection, else the top detection.
    const auto& scene_dets = detections.at(r.scene_id);
    std::vector<Detection> kept;
    for (const auto& d : scene_dets) {
      if (d.confidence >= c.detector.conf_min) kept.push_back(d);
    }
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
    if (kept.size() > c.detector.max_candidates) kept.resize(c.detector.max_candidates);
    int want = 0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (kept[i].label == fallback_vocabulary().front()) {
        want = static_cast<int>(i);
        break;
      }
    }
    EXPECT_EQ(r.chosen_id, want) << r.scene_id;
    ASSERT_TRUE(r.predicted_box.has_value());
    EXPECT_EQ(*r.predicted_box, kept[static_cast<std::size_t>(want)].box);
  }
}

TEST(Pipeline, OutOfRangeIdIsReported) {
  SynthFixture fx(2, false);
  TempDir tmp;
  auto c = fx.config(Variant::llm_rg);
  c.chat->script = tmp.write("oor.json", R"({"version":1,"entries":[],"default":"[\"car\"]\nANSWER: 42"})");
  Pipeline p(c);
  const auto r = p.run_sample(fx.scenes.front());
  EXPECT_TRUE(r.fallback_used);
  EXPECT_EQ(r.failure_mode, FailureMode::out_of_range);
}

TEST(Pipeline, SceneWithoutDetectionsIsAMiss) {
  SynthFixture fx(2, false);
  TempDir tmp;
  auto c = fx.config(Variant::llm_rg);
  c.detect->script = tmp.write(
      "low.jsonl", R"({"scene_id":")" + fx.scenes.front().scene_id + R"(","label":"car","confidence":0.1,"box":[0,0,10,10]})");
  Pipeline p(c);
  const auto r = p.run_sample(fx.scenes.front());
  EXPECT_EQ(r.failure_mode, FailureMode::no_detections);
  EXPECT_FALSE(r.predicted_box.has_value());
  EXPECT_EQ(r.iou, 0.0);
  EXPECT_FALSE(r.hit_at_05);
}

TEST(Pipeline, UnreachableBackendStopsTheRun) {
  SynthFixture fx(3, false);
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  auto c = fx.config(Variant::llm_rg);
  c.chat->script.clear();
  c.chat->endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  c.chat->timeout_s = 1;
  c.retry = {3, 0.01, 2.0};
  Pipeline p(c);
  const auto out = p.run(fx.scenes, 1);
  ASSERT_TRUE(out.fatal_error.has_value());
  EXPECT_TRUE(out.fatal_is_backend);
  ASSERT_EQ(out.results.size(), 1u);
  EXPECT_EQ(out.results[0].failure_mode, FailureMode::backend_fatal);
}

TEST(Pipeline, WorkerCountDoesNotChangeResults) {
  SynthFixture fx(24);
  Pipeline serial(fx.config(Variant::llm_rg_lidar));
  Pipeline parallel(fx.config(Variant::llm_rg_lidar));
  const auto a = serial.run(fx.scenes, 1);
  const auto b = parallel.run(fx.scenes, 8);
  ASSERT_FALSE(a.fatal_error);
  ASSERT_FALSE(b.fatal_error);
  EXPECT_EQ(rows_signature(a.results), rows_signature(b.results));
}
