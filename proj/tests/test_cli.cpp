#include <gtest/gtest.h>

#include <sstream>

#include <fmt/format.h>

#include "llmrg/cli.hpp"
#include "llmrg/dataset.hpp"
#include "llmrg/digest.hpp"
#include "test_util.hpp"

#include "httplib.h"

using namespace llmrg;
using namespace llmrg::cli;
using llmrg::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Workspace {
  TempDir tmp;
  synth::SyntheticSummary summary;

  explicit Workspace(std::size_t n = 8) {
    synth::SyntheticSpec spec;
    spec.scenes = n;
    spec.with_3d = true;
    summary = synth::generate_synthetic(spec, tmp.file("data"));
  }

  RunOptions run_options() const {
    RunOptions r;
    r.config_path = summary.config_path;
    r.out_dir = tmp.file("runs");
    return r;
  }
};

json read_json(const fs::path& p) { return json::parse(llmrg::testing::slurp(p)); }

std::size_t count_lines(const fs::path& p) {
  const auto text = llmrg::testing::slurp(p);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST(CliRun, WritesRunDirectoryWithFinalizedManifest) {
  Workspace ws;
  auto o = ws.run_options();
  o.limit = 5;
  std::ostringstream out, err;
  RunSummary s;
  ASSERT_EQ(cmd_run(o, out, err, &s), kOk) << err.str();
  EXPECT_EQ(s.rows, 5u);
  const fs::path dir(s.run_dir);
  EXPECT_EQ(dir.parent_path(), fs::path(o.out_dir));
  EXPECT_EQ(count_lines(dir / "results.jsonl"), 5u);
  for (const char* f : {"report.json", "report.csv", "report.md", "manifest.json"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto manifest = read_json(dir / "manifest.json");
  EXPECT_TRUE(manifest.at("finalized").get<bool>());
  EXPECT_EQ(manifest.at("n_results"), 5);
  EXPECT_EQ(manifest.at("exit_code"), 0);
  EXPECT_TRUE(manifest.at("error").is_null());
  EXPECT_EQ(read_json(dir / "report.json").at("n_samples"), 5);
}

TEST(CliRun, DryRunCallsNothingAndWritesNothing) {
  Workspace ws;
  auto o = ws.run_options();
  o.dry_run = true;
  std::ostringstream out, err;
  RunSummary s;
  EXPECT_EQ(cmd_run(o, out, err, &s), kOk) << err.str();
  EXPECT_EQ(s.counters.backend_calls(), 0u);
  EXPECT_FALSE(fs::exists(o.out_dir) && !fs::is_empty(o.out_dir));
  EXPECT_FALSE(out.str().empty());
}

TEST(CliRun, ConfigAndDatasetErrorsHaveDistinctCodes) {
  Workspace ws(2);
  std::ostringstream out, err;
  RunOptions missing_cfg;
  missing_cfg.config_path = ws.tmp.file("nope.json");
  EXPECT_EQ(cmd_run(missing_cfg, out, err), kConfigError);

  auto bad_variant = ws.run_options();
  bad_variant.variant = "telepathy";
  EXPECT_EQ(cmd_run(bad_variant, out, err), kConfigError);

  auto missing_data = ws.run_options();
  missing_data.annotations = ws.tmp.file("missing.json");
  EXPECT_EQ(cmd_run(missing_data, out, err), kIoError);
}

TEST(CliRun, UnreachableEndpointIsBackendFatal) {
  Workspace ws(3);
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  json cfg = read_json(ws.summary.config_path);
  cfg["backends"]["chat"] = {{"endpoint", fmt::format("http://127.0.0.1:{}/v1/chat/completions", port)},
                             {"model", "unreachable"},
                             {"timeout_s", 1}};
  cfg["retry"] = {{"attempts", 3}, {"backoff_base_s", 0.01}, {"backoff_factor", 2.0}};
  cfg.erase("cache_dir");
  const auto path = ws.tmp.write("data/offline.json", cfg.dump());
  auto o = ws.run_options();
  o.config_path = path;
  std::ostringstream out, err;
  RunSummary s;
  EXPECT_EQ(cmd_run(o, out, err, &s), kBackendFatal);
  EXPECT_NE(err.str().find("transport"), std::string::npos) << err.str();
  const auto manifest = read_json(fs::path(s.run_dir) / "manifest.json");
  EXPECT_TRUE(manifest.at("finalized").get<bool>());
  EXPECT_EQ(manifest.at("exit_code"), 2);
  EXPECT_FALSE(manifest.at("error").is_null());
}

TEST(CliEval, ReEvaluationMatchesTheInlineReport) {
  Workspace ws;
  auto o = ws.run_options();
  std::ostringstream out, err;
  RunSummary s;
  ASSERT_EQ(cmd_run(o, out, err, &s), kOk) << err.str();
  const fs::path dir(s.run_dir);

  EvalOptions e;
  e.results_path = (dir / "results.jsonl").string();
  e.annotations_path = ws.summary.annotations_path;
  e.out_path = ws.tmp.file("re.json");
  ASSERT_EQ(cmd_eval(e, out, err), kOk) << err.str();
  auto inline_report = read_json(dir / "report.json");
  auto re = read_json(e.out_path);
  EXPECT_EQ(re, inline_report);

  e.format = "csv";
  e.out_path = ws.tmp.file("re.csv");
  ASSERT_EQ(cmd_eval(e, out, err), kOk);
  EXPECT_EQ(llmrg::testing::slurp(e.out_path), llmrg::testing::slurp(dir / "report.csv"));

  e.format = "yaml";
  EXPECT_EQ(cmd_eval(e, out, err), kConfigError);
  e.format = "json";
  e.results_path = ws.tmp.file("absent.jsonl");
  EXPECT_EQ(cmd_eval(e, out, err), kIoError);
}

TEST(CliOverlay, OneImagePerSample) {
  Workspace ws(4);
  std::ostringstream out, err;
  RunSummary s;
  ASSERT_EQ(cmd_run(ws.run_options(), out, err, &s), kOk);
  OverlayOptions o;
  o.results_path = (fs::path(s.run_dir) / "results.jsonl").string();
  o.annotations_path = ws.summary.annotations_path;
  o.out_dir = ws.tmp.file("overlays");
  ASSERT_EQ(cmd_overlay(o, out, err), kOk) << err.str();
  for (const auto& id : ws.summary.scene_ids) EXPECT_TRUE(fs::exists(fs::path(o.out_dir) / (id + ".png"))) << id;
}

TEST(CliLift, PrintsCentroidsAndInsufficientRows) {
  Workspace ws(6);
  const auto scenes = dataset::load_annotations(ws.summary.annotations_path).scenes;
  const auto& s = scenes.front();
  const auto boxes = ws.tmp.write("boxes.json", json::array({dataset::box_to_json(s.gt_box), {0, 0, 2, 2}}).dump());
  LiftOptions o;
  o.boxes_path = boxes;
  o.cloud_path = *s.cloud_path;
  o.calib_path = (fs::path(ws.summary.annotations_path).parent_path() / "calibration.json").string();
  std::ostringstream out, err;
  ASSERT_EQ(cmd_lift(o, out, err), kOk) << err.str();
  EXPECT_NE(out.str().find("insufficient"), std::string::npos) << out.str();
  const std::string text = out.str();
  EXPECT_GE(std::count(text.begin(), text.end(), '\n'), 2);
}

TEST(CliSynth, WritesDatasetAndRejectsBadRange) {
  TempDir tmp;
  SynthOptions o;
  o.spec.scenes = 3;
  o.out_dir = tmp.file("d");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_synth(o, out, err), kOk) << err.str();
  EXPECT_TRUE(fs::exists(tmp.path() / "d" / "annotations.json"));
  EXPECT_TRUE(fs::exists(tmp.path() / "d" / "config.json"));
  o.spec.min_objects = 5;
  o.spec.max_objects = 1;
  EXPECT_EQ(cmd_synth(o, out, err), kConfigError);
}
