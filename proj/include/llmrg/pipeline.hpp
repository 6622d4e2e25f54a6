#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "llmrg/backends.hpp"
#include "llmrg/geometry.hpp"
#include "llmrg/prompting.hpp"
#include "llmrg/scene.hpp"

namespace llmrg::pipeline {

enum class Variant { llm_rg, llm_rg_lidar, llm_rg_gt3d, naive_vlm, crops_vlm, boxes_captions_vlm };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& text);
bool is_baseline(Variant v);

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  Variant variant = Variant::llm_rg;
  std::optional<backends::BackendDescriptor> chat;
  /// The vision-language backend: captions crops and answers the baseline prompts.
  std::optional<backends::BackendDescriptor> caption;
  std::optional<backends::BackendDescriptor> detect;

  geometry::LiftPolicy lift;
  backends::DetectPolicy detector;
  backends::CaptionPolicy captioning;
  backends::RetryPolicy retry;

  double crop_padding = 0.1;
  int workers = 1;
  /// Grounding replies tried before the fallback policy applies.
  int parse_attempts = 3;
  std::string cache_dir;

  bool chain_of_thought = true;
  std::string exemplars_path;
  std::size_t max_exemplars = 2;
  double temperature = 0.0;
  int max_tokens = 1024;

  /// gt3d variant: replace detections by projected ground-truth boxes as well.
  bool gt3d_replace_detections = false;

  std::string annotations;
};

/// Relative paths are resolved against base_dir.
PipelineConfig config_from_json(const nlohmann::json& j, const std::string& base_dir = ".");
PipelineConfig load_config(const std::string& path);
nlohmann::json config_to_json(const PipelineConfig& config);

/// Digest of the effective configuration; the worker count is excluded since it never changes results.
std::string config_digest(const PipelineConfig& config);

/// Backends the variant needs must be configured.
std::vector<std::string> check_config(const PipelineConfig& config);

/// Reasons the scene cannot run under the variant, empty when it can.
std::vector<std::string> check_prerequisites(const Scene& scene, Variant variant);

/// Fixed driving-domain vocabulary used when category extraction fails.
const std::vector<std::string>& fallback_vocabulary();

struct Candidate {
  ObjectRecord record;
  Detection detection;
};

/// Assigns ids 0..n-1 in confidence-descending order (stable), 2D centers, and 3D
/// locations for the lidar (frustum lift) and gt3d (matched ground truth) variants.
std::vector<Candidate> build_records(const std::vector<Detection>& detections, const std::vector<std::string>& captions,
                                     const Scene& scene, const PipelineConfig& config, const PointCloud* cloud = nullptr);

/// Greedy one-to-one matching in detection order: each detection takes the unassigned
/// ground-truth box whose projection overlaps it most (IoU > 0). -1 when unmatched.
std::vector<int> match_ground_truth(std::span<const Detection> detections, std::span<const std::optional<BBox2D>> projected);

/// Projected ground-truth boxes as detections (confidence 1), in ground-truth order.
std::vector<Detection> detections_from_ground_truth(const Scene& scene, double depth_min);

struct ServiceCounters {
  std::size_t chat_calls = 0;
  std::size_t caption_calls = 0;
  std::size_t detect_calls = 0;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;

  std::size_t backend_calls() const { return chat_calls + caption_calls + detect_calls; }
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  /// Runs one sample. Semantic failures are encoded in the result; backend-fatal and
  /// I/O errors throw.
  GroundingResult run_sample(const Scene& scene);

  struct RunOutcome {
    /// Results of the samples that ran, in input order.
    std::vector<GroundingResult> results;
    /// Set when a sample hit an infrastructure error; remaining samples are skipped.
    std::optional<std::string> fatal_error;
    bool fatal_is_backend = false;
  };

  /// Bounded worker pool over the scenes; results do not depend on the worker count.
  RunOutcome run(const std::vector<Scene>& scenes, int workers);

  const PipelineConfig& config() const { return config_; }
  const std::string& digest() const { return digest_; }
  ServiceCounters counters() const;

 private:
  GroundingResult run_llm_rg(const Scene& scene, GroundingResult result);
  GroundingResult run_baseline(const Scene& scene, GroundingResult result);

  struct CategoryOutcome {
    std::vector<std::string> categories;
    bool fallback = false;
  };
  CategoryOutcome extract_categories(const Scene& scene, GroundingResult& result);
  std::vector<Detection> detect_candidates(const Scene& scene, const std::vector<std::string>& categories,
                                           GroundingResult& result);
  std::vector<std::string> caption_candidates(const cv::Mat& img, const std::vector<Detection>& detections,
                                              GroundingResult& result);

  backends::ChatRequest tune(backends::ChatRequest request) const;

  PipelineConfig config_;
  std::string digest_;
  std::vector<prompting::Exemplar> exemplars_;
  std::shared_ptr<backends::DiskCache> cache_;
  std::unique_ptr<backends::ChatClient> chat_;
  std::unique_ptr<backends::ChatClient> vlm_;
  std::unique_ptr<backends::DetectClient> detect_;
};

}  // namespace llmrg::pipeline
