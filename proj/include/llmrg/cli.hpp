#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "llmrg/eval.hpp"
#include "llmrg/pipeline.hpp"
#include "llmrg/synth.hpp"

namespace llmrg::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kBackendFatal = 2, kIoError = 3 };

std::string code_version();

struct RunOptions {
  std::string config_path;
  /// Flags win over the config file.
  std::optional<std::string> annotations;
  std::string out_dir = "runs";
  std::optional<std::string> variant;
  std::optional<std::size_t> limit;
  std::optional<int> workers;
  bool dry_run = false;
};

struct RunSummary {
  std::string run_dir;
  std::size_t rows = 0;
  pipeline::ServiceCounters counters;
  std::optional<eval::EvalReport> report;
};

/// Runs the pipeline over a dataset and writes results.jsonl, report.{json,csv,md} and
/// manifest.json into a fresh timestamped directory under out_dir.
int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err, RunSummary* summary = nullptr);

struct LiftOptions {
  std::string boxes_path;
  std::string cloud_path;
  std::string calib_path;
  geometry::LiftPolicy policy;
};

int cmd_lift(const LiftOptions& options, std::ostream& out, std::ostream& err);

struct SynthOptions {
  synth::SyntheticSpec spec;
  std::string out_dir;
};

int cmd_synth(const SynthOptions& options, std::ostream& out, std::ostream& err);

struct EvalOptions {
  std::string results_path;
  std::string annotations_path;
  std::string format = "json";
  /// Standard output when empty.
  std::string out_path;
};

int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err);

struct OverlayOptions {
  std::string results_path;
  std::string annotations_path;
  std::string out_dir;
};

int cmd_overlay(const OverlayOptions& options, std::ostream& out, std::ostream& err);

}  // namespace llmrg::cli
