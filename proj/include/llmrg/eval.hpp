#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "llmrg/scene.hpp"

namespace llmrg::eval {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline const std::vector<double> kDefaultThresholds{0.25, 0.5, 0.75};

struct SampleRow {
  std::string scene_id;
  std::string variant;
  int chosen_id = -1;
  double iou = 0.0;
  /// One flag per threshold, in threshold order.
  std::vector<bool> hits;
  bool fallback_used = false;
  FailureMode failure_mode = FailureMode::none;
  double latency_ms = 0.0;

  friend bool operator==(const SampleRow&, const SampleRow&) = default;
};

/// Re-scores a result against the ground truth. A missing prediction scores IoU 0.
SampleRow score(const GroundingResult& result, const BBox2D& gt, std::span<const double> thresholds = kDefaultThresholds);

struct EvalReport {
  std::string config_digest;
  std::string dataset_digest;
  std::string variant;
  std::size_t n_samples = 0;
  std::vector<double> thresholds;
  /// Accuracy per threshold, aligned with thresholds.
  std::vector<double> accuracy;
  /// Acc@0.5 counting only rows that did not need the fallback policy.
  double strict_accuracy = 0.0;
  double fallback_rate = 0.0;
  std::map<std::string, std::size_t> failure_counts;
  double mean_latency_ms = 0.0;
  std::vector<SampleRow> rows;

  double accuracy_at(double threshold) const;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Rows are re-sorted by scene id. Throws EvalError on an empty input or when the
/// rows were scored with different thresholds.
EvalReport aggregate(std::vector<SampleRow> rows, const std::string& config_digest, const std::string& dataset_digest);

enum class Format { json, csv, markdown };

Format format_from_string(const std::string& text);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

std::string render_json(const EvalReport& report);
std::string render_csv(const EvalReport& report);
/// One aggregate row per report, accuracies as percentages with two decimals.
std::string render_markdown(std::span<const EvalReport> reports);
std::string render(const EvalReport& report, Format format);

void emit_report(const EvalReport& report, Format format, const std::string& path);

// -- Result records (JSON-lines) ------------------------------------------------

nlohmann::json result_to_json(const GroundingResult& result);
GroundingResult result_from_json(const nlohmann::json& j);

/// Throws EvalError naming the offending line.
std::vector<GroundingResult> load_results(const std::string& path);

/// Scores results against the scenes they reference. Unknown scene ids throw EvalError.
EvalReport evaluate(std::span<const GroundingResult> results, std::span<const Scene> scenes,
                    const std::string& dataset_digest);

}  // namespace llmrg::eval
