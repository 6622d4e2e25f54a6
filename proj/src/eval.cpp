#include "llmrg/eval.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>

#include "llmrg/dataset.hpp"
#include "llmrg/digest.hpp"
#include "llmrg/geometry.hpp"

using nlohmann::json;

namespace llmrg::eval {

namespace {

constexpr int kReportSchema = 1;

constexpr FailureMode kAllModes[] = {FailureMode::none,          FailureMode::no_id,  FailureMode::out_of_range,
                                     FailureMode::no_detections, FailureMode::no_box, FailureMode::backend_fatal};

std::string threshold_key(double t) { return fmt::format("{:g}", t); }

std::size_t primary_index(const std::vector<double>& thresholds) {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] == 0.5) return i;
  }
  throw EvalError("threshold 0.5 must be scored");
}

}  // namespace

SampleRow score(const GroundingResult& result, const BBox2D& gt, std::span<const double> thresholds) {
  SampleRow row;
  row.scene_id = result.scene_id;
  row.variant = result.variant;
  row.chosen_id = result.chosen_id;
  row.iou = result.predicted_box ? geometry::iou(*result.predicted_box, gt) : 0.0;
  for (double t : thresholds) row.hits.push_back(result.predicted_box.has_value() && row.iou >= t);
  row.fallback_used = result.fallback_used;
  row.failure_mode = result.failure_mode;
  row.latency_ms = result.latency_ms;
  return row;
}

double EvalReport::accuracy_at(double threshold) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] == threshold) return accuracy[i];
  }
  throw EvalError(fmt::format("threshold {} not in report", threshold));
}

EvalReport aggregate(std::vector<SampleRow> rows, const std::string& config_digest, const std::string& dataset_digest) {
  if (rows.empty()) throw EvalError("cannot aggregate an empty result set");

  EvalReport r;
  r.config_digest = config_digest;
  r.dataset_digest = dataset_digest;
  r.thresholds = kDefaultThresholds;
  r.n_samples = rows.size();
  const std::size_t k = r.thresholds.size();
  const std::size_t primary = primary_index(r.thresholds);

  std::stable_sort(rows.begin(), rows.end(), [](const SampleRow& a, const SampleRow& b) { return a.scene_id < b.scene_id; });

  std::vector<std::size_t> hits(k, 0);
  std::size_t strict_hits = 0;
  std::size_t fallbacks = 0;
  double latency = 0.0;
  for (auto m : kAllModes) r.failure_counts[to_string(m)] = 0;
  for (const auto& row : rows) {
    if (row.hits.size() != k) throw EvalError("row " + row.scene_id + " was scored with different thresholds");
    for (std::size_t i = 0; i < k; ++i) hits[i] += row.hits[i] ? 1 : 0;
    if (row.hits[primary] && !row.fallback_used) ++strict_hits;
    if (row.fallback_used) ++fallbacks;
    ++r.failure_counts[to_string(row.failure_mode)];
    latency += row.latency_ms;
  }

  const auto n = static_cast<double>(r.n_samples);
  for (std::size_t i = 0; i < k; ++i) r.accuracy.push_back(static_cast<double>(hits[i]) / n);
  r.strict_accuracy = static_cast<double>(strict_hits) / n;
  r.fallback_rate = static_cast<double>(fallbacks) / n;
  r.mean_latency_ms = latency / n;

  r.variant = rows.front().variant;
  for (const auto& row : rows) {
    if (row.variant != r.variant) {
      r.variant = "mixed";
      break;
    }
  }
  r.rows = std::move(rows);
  return r;
}

Format format_from_string(const std::string& text) {
  if (text == "json") return Format::json;
  if (text == "csv") return Format::csv;
  if (text == "markdown" || text == "md") return Format::markdown;
  throw EvalError("unknown report format: " + text);
}

// ---------------------------------------------------------------------------

namespace {

json row_to_json(const SampleRow& row, const std::vector<double>& thresholds) {
  json hits = json::object();
  for (std::size_t i = 0; i < thresholds.size(); ++i) hits[threshold_key(thresholds[i])] = static_cast<bool>(row.hits[i]);
  return {{"scene_id", row.scene_id},
          {"variant", row.variant},
          {"chosen_id", row.chosen_id},
          {"iou", row.iou},
          {"hits", hits},
          {"fallback_used", row.fallback_used},
          {"failure_mode", to_string(row.failure_mode)},
          {"latency_ms", row.latency_ms}};
}

SampleRow row_from_json(const json& j, const std::vector<double>& thresholds) {
  SampleRow row;
  row.scene_id = j.at("scene_id").get<std::string>();
  row.variant = j.at("variant").get<std::string>();
  row.chosen_id = j.at("chosen_id").get<int>();
  row.iou = j.at("iou").get<double>();
  for (double t : thresholds) row.hits.push_back(j.at("hits").at(threshold_key(t)).get<bool>());
  row.fallback_used = j.at("fallback_used").get<bool>();
  row.failure_mode = failure_mode_from_string(j.at("failure_mode").get<std::string>());
  row.latency_ms = j.at("latency_ms").get<double>();
  return row;
}

}  // namespace

json report_to_json(const EvalReport& r) {
  json acc = json::object();
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) acc[threshold_key(r.thresholds[i])] = r.accuracy[i];
  json rows = json::array();
  for (const auto& row : r.rows) rows.push_back(row_to_json(row, r.thresholds));
  return {{"schema_version", kReportSchema},
          {"config_digest", r.config_digest},
          {"dataset_digest", r.dataset_digest},
          {"variant", r.variant},
          {"n_samples", r.n_samples},
          {"thresholds", r.thresholds},
          {"accuracy", acc},
          {"strict_accuracy_at_0.5", r.strict_accuracy},
          {"fallback_rate", r.fallback_rate},
          {"failure_counts", r.failure_counts},
          {"mean_latency_ms", r.mean_latency_ms},
          {"rows", rows}};
}

EvalReport report_from_json(const json& j) {
  try {
    if (j.at("schema_version").get<int>() != kReportSchema) throw EvalError("unsupported report schema version");
    EvalReport r;
    r.config_digest = j.at("config_digest").get<std::string>();
    r.dataset_digest = j.at("dataset_digest").get<std::string>();
    r.variant = j.at("variant").get<std::string>();
    r.n_samples = j.at("n_samples").get<std::size_t>();
    r.thresholds = j.at("thresholds").get<std::vector<double>>();
    for (double t : r.thresholds) r.accuracy.push_back(j.at("accuracy").at(threshold_key(t)).get<double>());
    r.strict_accuracy = j.at("strict_accuracy_at_0.5").get<double>();
    r.fallback_rate = j.at("fallback_rate").get<double>();
    r.failure_counts = j.at("failure_counts").get<std::map<std::string, std::size_t>>();
    r.mean_latency_ms = j.at("mean_latency_ms").get<double>();
    for (const auto& row : j.at("rows")) r.rows.push_back(row_from_json(row, r.thresholds));
    return r;
  } catch (const json::exception& e) {
    throw EvalError(std::string("malformed report: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw EvalError(std::string("malformed report: ") + e.what());
  }
}

std::string render_json(const EvalReport& report) { return report_to_json(report).dump(2) + "\n"; }

std::string render_csv(const EvalReport& report) {
  const std::size_t primary = primary_index(report.thresholds);
  std::string out = "scene_id,variant,chosen_id,iou,hit_05,fallback_used,failure_mode,latency_ms\n";
  for (const auto& row : report.rows) {
    std::string id = row.scene_id;
    if (id.find_first_of(",\"\n") != std::string::npos) {
      std::string quoted = "\"";
      for (char c : id) quoted += c == '"' ? std::string("\"\"") : std::string(1, c);
      id = quoted + "\"";
    }
    out += fmt::format("{},{},{},{:.6f},{},{},{},{:.3f}\n", id, row.variant, row.chosen_id, row.iou,
                       row.hits[primary] ? 1 : 0, row.fallback_used ? 1 : 0, to_string(row.failure_mode), row.latency_ms);
  }
  return out;
}

std::string render_markdown(std::span<const EvalReport> reports) {
  std::string out =
      "| Method | N | Acc@0.25 | Acc@0.5 | Acc@0.5 strict | Acc@0.75 | Fallback |\n"
      "|---|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& r : reports) {
    out += fmt::format("| {} | {} | {:.2f} | {:.2f} | {:.2f} | {:.2f} | {:.2f} |\n", r.variant, r.n_samples,
                       100.0 * r.accuracy_at(0.25), 100.0 * r.accuracy_at(0.5), 100.0 * r.strict_accuracy,
                       100.0 * r.accuracy_at(0.75), 100.0 * r.fallback_rate);
  }
  return out;
}

std::string render(const EvalReport& report, Format format) {
  switch (format) {
    case Format::json: return render_json(report);
    case Format::csv: return render_csv(report);
    case Format::markdown: return render_markdown(std::span<const EvalReport>(&report, 1));
  }
  return {};
}

void emit_report(const EvalReport& report, Format format, const std::string& path) {
  write_file_atomic(path, render(report, format));
}

// ---------------------------------------------------------------------------

json result_to_json(const GroundingResult& r) {
  json trace = json::array();
  for (const auto& t : r.trace) {
    trace.push_back({{"stage", t.stage},
                     {"request_digest", t.request_digest},
                     {"response", t.response},
                     {"wall_ms", t.wall_ms},
                     {"attempts", t.attempts},
                     {"from_cache", t.from_cache},
                     {"note", t.note}});
  }
  return {{"scene_id", r.scene_id},
          {"variant", r.variant},
          {"chosen_id", r.chosen_id},
          {"predicted_box", r.predicted_box ? dataset::box_to_json(*r.predicted_box) : json(nullptr)},
          {"iou", r.iou},
          {"hit_at_05", r.hit_at_05},
          {"fallback_used", r.fallback_used},
          {"failure_mode", to_string(r.failure_mode)},
          {"latency_ms", r.latency_ms},
          {"config_digest", r.config_digest},
          {"trace", trace}};
}

GroundingResult result_from_json(const json& j) {
  GroundingResult r;
  r.scene_id = j.at("scene_id").get<std::string>();
  r.variant = j.at("variant").get<std::string>();
  r.chosen_id = j.at("chosen_id").get<int>();
  if (!j.at("predicted_box").is_null()) r.predicted_box = dataset::box_from_json(j.at("predicted_box"));
  r.iou = j.at("iou").get<double>();
  r.hit_at_05 = j.at("hit_at_05").get<bool>();
  r.fallback_used = j.at("fallback_used").get<bool>();
  r.failure_mode = failure_mode_from_string(j.at("failure_mode").get<std::string>());
  r.latency_ms = j.at("latency_ms").get<double>();
  r.config_digest = j.value("config_digest", std::string());
  if (j.contains("trace")) {
    for (const auto& t : j.at("trace")) {
      r.trace.push_back({t.at("stage").get<std::string>(), t.value("request_digest", std::string()),
                         t.value("response", std::string()), t.value("wall_ms", 0.0), t.value("attempts", 1),
                         t.value("from_cache", false), t.value("note", std::string())});
    }
  }
  return r;
}

std::vector<GroundingResult> load_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot open results file: " + path);
  std::vector<GroundingResult> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(result_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw EvalError(fmt::format("{}:{}: {}", path, lineno, e.what()));
    }
  }
  return out;
}

EvalReport evaluate(std::span<const GroundingResult> results, std::span<const Scene> scenes,
                    const std::string& dataset_digest) {
  std::map<std::string, const Scene*> by_id;
  for (const auto& s : scenes) by_id[s.scene_id] = &s;
  std::vector<SampleRow> rows;
  std::string config_digest;
  for (const auto& r : results) {
    const auto it = by_id.find(r.scene_id);
    if (it == by_id.end()) throw EvalError("result for unknown scene: " + r.scene_id);
    rows.push_back(score(r, it->second->gt_box));
    if (config_digest.empty()) config_digest = r.config_digest;
  }
  return aggregate(std::move(rows), config_digest, dataset_digest);
}

}  // namespace llmrg::eval
