#include "llmrg/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <map>
#include <ostream>

#include <fmt/format.h>

#include "llmrg/dataset.hpp"
#include "llmrg/digest.hpp"
#include "llmrg/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace llmrg::cli {

std::string code_version() { return "0.1.0"; }

namespace {

std::string utc_now(const char* pattern) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[64];
  std::strftime(buf, sizeof buf, pattern, &tm);
  return buf;
}

std::string fresh_run_dir(const std::string& out_dir) {
  const fs::path base = fs::path(out_dir) / ("run-" + utc_now("%Y%m%dT%H%M%SZ"));
  fs::path candidate = base;
  for (int i = 1; fs::exists(candidate); ++i) candidate = base.string() + "-" + std::to_string(i);
  fs::create_directories(candidate);
  return candidate.string();
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path.string(), j.dump(2) + "\n"); }

json counters_json(const pipeline::ServiceCounters& c) {
  return {{"backend_calls", {{"chat", c.chat_calls}, {"caption", c.caption_calls}, {"detect", c.detect_calls}}},
          {"cache", {{"hits", c.cache_hits}, {"misses", c.cache_misses}}}};
}

struct LoadedDataset {
  std::vector<Scene> scenes;
  std::string digest;
};

LoadedDataset load_dataset(const std::string& path, std::ostream& err) {
  LoadedDataset d;
  auto load = dataset::load_annotations(path);
  for (const auto& w : load.warnings) err << "warning: " << w << "\n";
  d.scenes = std::move(load.scenes);
  d.digest = sha256_file(path);
  return d;
}

}  // namespace

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err, RunSummary* summary) {
  pipeline::PipelineConfig config;
  try {
    config = pipeline::load_config(options.config_path);
    if (options.variant) config.variant = pipeline::variant_from_string(*options.variant);
    if (options.workers) {
      if (*options.workers < 1) throw pipeline::ConfigError("--workers must be at least 1");
      config.workers = *options.workers;
    }
    if (options.annotations) config.annotations = *options.annotations;
    if (config.annotations.empty()) throw pipeline::ConfigError("no annotations file given");
  } catch (const pipeline::ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }

  LoadedDataset data;
  try {
    data = load_dataset(config.annotations, err);
  } catch (const std::exception& e) {
    err << "dataset error: " << e.what() << "\n";
    return kIoError;
  }
  if (options.limit && *options.limit < data.scenes.size()) data.scenes.resize(*options.limit);

  std::vector<std::string> problems;
  for (const auto& s : data.scenes) {
    for (auto& p : pipeline::check_prerequisites(s, config.variant)) problems.push_back(std::move(p));
  }
  if (!problems.empty()) {
    for (const auto& p : problems) err << "config error: " << p << "\n";
    return kConfigError;
  }

  std::unique_ptr<pipeline::Pipeline> pipe;
  try {
    pipe = std::make_unique<pipeline::Pipeline>(config);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }

  if (options.dry_run) {
    out << fmt::format("dry run: variant {}, {} scene(s), config {}\n", pipeline::to_string(config.variant),
                       data.scenes.size(), pipe->digest());
    if (summary) summary->counters = pipe->counters();
    return kOk;
  }

  fs::path run_dir;
  json manifest;
  try {
    run_dir = fresh_run_dir(options.out_dir);
    manifest = {{"schema_version", 1},
                {"code_version", code_version()},
                {"config_digest", pipe->digest()},
                {"dataset_digest", data.digest},
                {"config_path", fs::absolute(options.config_path).string()},
                {"annotations_path", fs::absolute(config.annotations).string()},
                {"config", pipeline::config_to_json(config)},
                {"variant", pipeline::to_string(config.variant)},
                {"n_scenes", data.scenes.size()},
                {"started_at", utc_now("%Y-%m-%dT%H:%M:%SZ")},
                {"finished_at", nullptr},
                {"finalized", false},
                {"outputs",
                 {{"results", "results.jsonl"},
                  {"report_json", "report.json"},
                  {"report_csv", "report.csv"},
                  {"report_markdown", "report.md"}}}};
    write_json(run_dir / "manifest.json", manifest);
  } catch (const std::exception& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIoError;
  }

  auto outcome = pipe->run(data.scenes, config.workers);

  int code = kOk;
  if (outcome.fatal_error) {
    code = outcome.fatal_is_backend ? kBackendFatal : kIoError;
    err << (outcome.fatal_is_backend ? "backend error: " : "error: ") << *outcome.fatal_error << "\n";
  }

  std::optional<eval::EvalReport> report;
  try {
    std::string lines;
    for (const auto& r : outcome.results) lines += eval::result_to_json(r).dump() + "\n";
    write_file_atomic((run_dir / "results.jsonl").string(), lines);
    if (!outcome.results.empty()) {
      report = eval::evaluate(outcome.results, data.scenes, data.digest);
      eval::emit_report(*report, eval::Format::json, (run_dir / "report.json").string());
      eval::emit_report(*report, eval::Format::csv, (run_dir / "report.csv").string());
      eval::emit_report(*report, eval::Format::markdown, (run_dir / "report.md").string());
    }
    const auto counters = pipe->counters();
    manifest["finished_at"] = utc_now("%Y-%m-%dT%H:%M:%SZ");
    manifest["finalized"] = true;
    manifest["n_results"] = outcome.results.size();
    manifest["exit_code"] = code;
    manifest["error"] = outcome.fatal_error ? json(*outcome.fatal_error) : json(nullptr);
    manifest.update(counters_json(counters));
    write_json(run_dir / "manifest.json", manifest);
  } catch (const std::exception& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIoError;
  }

  if (report) {
    out << eval::render_markdown(std::span<const eval::EvalReport>(&*report, 1));
  }
  out << "run directory: " << run_dir.string() << "\n";
  if (summary) {
    summary->run_dir = run_dir.string();
    summary->rows = outcome.results.size();
    summary->counters = pipe->counters();
    summary->report = report;
  }
  return code;
}

int cmd_lift(const LiftOptions& options, std::ostream& out, std::ostream& err) {
  std::vector<BBox2D> boxes;
  std::vector<std::string> labels;
  PointCloud cloud;
  Calibration calib;
  try {
    const json j = json::parse(read_file_text(options.boxes_path));
    if (!j.is_array()) throw dataset::DatasetError("boxes file must hold a JSON array");
    for (const auto& e : j) {
      if (e.is_object()) {
        boxes.push_back(dataset::box_from_json(e.at("box")));
        labels.push_back(e.value("label", std::string()));
      } else {
        boxes.push_back(dataset::box_from_json(e));
        labels.emplace_back();
      }
      if (!boxes.back().valid()) throw dataset::DatasetError(fmt::format("box {} is degenerate", boxes.size() - 1));
    }
  } catch (const std::exception& e) {
    err << "error: " << options.boxes_path << ": " << e.what() << "\n";
    return kIoError;
  }
  try {
    auto load = dataset::load_pointcloud(options.cloud_path);
    if (load.dropped_non_finite > 0) err << "warning: dropped " << load.dropped_non_finite << " non-finite point(s)\n";
    cloud = std::move(load.cloud);
  } catch (const std::exception& e) {
    err << "error: " << options.cloud_path << ": " << e.what() << "\n";
    return kIoError;
  }
  try {
    calib = dataset::load_calibration(options.calib_path);
  } catch (const std::exception& e) {
    err << "error: " << options.calib_path << ": " << e.what() << "\n";
    return kIoError;
  }

  out << fmt::format("{:>4}  {:<10}  {:<28}  {:<28}  {:<28}  {}\n", "box", "label", "pixels", "centroid", "extents",
                     "points");
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    const std::string px = fmt::format("[{:g}, {:g}, {:g}, {:g}]", b.x1, b.y1, b.x2, b.y2);
    const auto lifted = geometry::lift_box_to_3d(b, cloud, calib, options.policy);
    if (!lifted) {
      out << fmt::format("{:>4}  {:<10}  {:<28}  {}\n", i, labels[i], px, "insufficient");
      continue;
    }
    const auto& c = lifted->centroid;
    const auto& x = lifted->extents;
    out << fmt::format("{:>4}  {:<10}  {:<28}  {:<28}  {:<28}  {}\n", i, labels[i], px,
                       fmt::format("({:.3f}, {:.3f}, {:.3f})", c.x(), c.y(), c.z()),
                       fmt::format("({:.3f}, {:.3f}, {:.3f})", x.x(), x.y(), x.z()), lifted->point_count);
  }
  return kOk;
}

int cmd_synth(const SynthOptions& options, std::ostream& out, std::ostream& err) {
  try {
    const auto summary = synth::generate_synthetic(options.spec, options.out_dir);
    out << fmt::format("wrote {} scene(s) ({} depth-disambiguation) to {}\n", summary.scene_ids.size(),
                       summary.depth_scene_ids.size(), options.out_dir);
    out << "config: " << summary.config_path << "\n";
    return kOk;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIoError;
  }
}

int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err) {
  eval::Format format;
  try {
    format = eval::format_from_string(options.format);
  } catch (const eval::EvalError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
  try {
    const auto results = eval::load_results(options.results_path);
    const auto data = load_dataset(options.annotations_path, err);
    const auto report = eval::evaluate(results, data.scenes, data.digest);
    if (options.out_path.empty()) out << eval::render(report, format);
    else eval::emit_report(report, format, options.out_path);
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  }
}

int cmd_overlay(const OverlayOptions& options, std::ostream& out, std::ostream& err) {
  try {
    const auto results = eval::load_results(options.results_path);
    const auto data = load_dataset(options.annotations_path, err);
    std::map<std::string, const Scene*> by_id;
    for (const auto& s : data.scenes) by_id[s.scene_id] = &s;
    fs::create_directories(options.out_dir);
    std::size_t written = 0;
    for (const auto& r : results) {
      const auto it = by_id.find(r.scene_id);
      if (it == by_id.end()) throw eval::EvalError("result for unknown scene: " + r.scene_id);
      cv::Mat img = image::load(it->second->image_path);
      image::draw_overlay(img, it->second->gt_box, r.predicted_box);
      const auto png = image::encode_png(img);
      write_file_atomic((fs::path(options.out_dir) / (r.scene_id + ".png")).string(),
                        std::string_view(reinterpret_cast<const char*>(png.bytes.data()), png.bytes.size()));
      ++written;
    }
    out << fmt::format("wrote {} overlay(s) to {}\n", written, options.out_dir);
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  }
}

}  // namespace llmrg::cli
