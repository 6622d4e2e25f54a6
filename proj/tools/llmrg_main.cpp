#include <iostream>

#include "CLI11.hpp"
#include "llmrg/cli.hpp"

int main(int argc, char** argv) {
  using namespace llmrg::cli;

  CLI::App app{"Referential grounding of driving-scene commands with language models"};
  app.set_version_flag("--version", code_version());
  app.require_subcommand(1);

  RunOptions run;
  std::string annotations;
  std::string variant;
  std::size_t limit = 0;
  int workers = 0;
  auto* run_cmd = app.add_subcommand("run", "Run a pipeline variant over a dataset");
  run_cmd->add_option("--config", run.config_path, "Pipeline configuration file")->required();
  run_cmd->add_option("--annotations", annotations, "Annotation file (overrides the config)");
  run_cmd->add_option("--out", run.out_dir, "Parent directory for run directories")->capture_default_str();
  run_cmd->add_option("--variant", variant, "llm_rg | llm_rg_lidar | llm_rg_gt3d | naive_vlm | crops_vlm | boxes_captions_vlm");
  run_cmd->add_option("--limit", limit, "Run only the first N scenes");
  run_cmd->add_option("--workers", workers, "Worker threads");
  run_cmd->add_flag("--dry-run", run.dry_run, "Validate configuration and dataset without calling any backend");

  LiftOptions lift;
  auto* lift_cmd = app.add_subcommand("lift", "Lift 2D boxes into a point cloud");
  lift_cmd->add_option("--boxes", lift.boxes_path, "JSON array of [x1, y1, x2, y2] or {label, box}")->required();
  lift_cmd->add_option("--cloud", lift.cloud_path, "Point cloud (.bin float32 x5 or .csv)")->required();
  lift_cmd->add_option("--calib", lift.calib_path, "Calibration JSON")->required();
  lift_cmd->add_option("--depth-min", lift.policy.depth_min, "Minimum camera depth in meters")->capture_default_str();
  lift_cmd->add_option("--min-points", lift.policy.min_points, "Points required for a lift")->capture_default_str();

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with matched scripted backends");
  synth_cmd->add_option("--out", synth.out_dir, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.spec.seed, "Random seed")->capture_default_str();
  synth_cmd->add_option("--scenes", synth.spec.scenes, "Number of scenes")->capture_default_str();
  synth_cmd->add_option("--min-objects", synth.spec.min_objects, "Fewest objects per scene")->capture_default_str();
  synth_cmd->add_option("--max-objects", synth.spec.max_objects, "Most objects per scene")->capture_default_str();
  synth_cmd->add_option("--distractors", synth.spec.distractor_level, "Highest distractor level (0-2)")
      ->check(CLI::Range(0, 2))
      ->capture_default_str();
  synth_cmd->add_flag("--3d", synth.spec.with_3d, "Emit point clouds and depth-disambiguation scenes");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score saved results");
  eval_cmd->add_option("--results", ev.results_path, "results.jsonl from a run")->required();
  eval_cmd->add_option("--annotations", ev.annotations_path, "Annotation file")->required();
  eval_cmd->add_option("--format", ev.format, "json | csv | markdown")->capture_default_str();
  eval_cmd->add_option("--out", ev.out_path, "Output file (standard output when omitted)");

  OverlayOptions overlay;
  auto* overlay_cmd = app.add_subcommand("overlay", "Draw ground truth (red) and prediction (green) per sample");
  overlay_cmd->add_option("--results", overlay.results_path, "results.jsonl from a run")->required();
  overlay_cmd->add_option("--annotations", overlay.annotations_path, "Annotation file")->required();
  overlay_cmd->add_option("--out", overlay.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  if (*run_cmd) {
    if (!annotations.empty()) run.annotations = annotations;
    if (!variant.empty()) run.variant = variant;
    if (run_cmd->count("--limit") > 0) run.limit = limit;
    if (run_cmd->count("--workers") > 0) run.workers = workers;
    return cmd_run(run, std::cout, std::cerr);
  }
  if (*lift_cmd) return cmd_lift(lift, std::cout, std::cerr);
  if (*synth_cmd) return cmd_synth(synth, std::cout, std::cerr);
  if (*eval_cmd) return cmd_eval(ev, std::cout, std::cerr);
  if (*overlay_cmd) return cmd_overlay(overlay, std::cout, std::cerr);
  return kConfigError;
}
