// OpenMP frustum kernel against its serial reference on clouds of growing size.

#include <random>

#include <benchmark/benchmark.h>

#include "llmrg/geometry.hpp"

using namespace llmrg;

namespace {

PointCloud make_cloud(std::size_t n) {
  std::mt19937 rng(42);
  std::uniform_real_distribution<float> fwd(0.f, 80.f);
  std::uniform_real_distribution<float> side(-30.f, 30.f);
  std::uniform_real_distribution<float> up(-2.f, 4.f);
  PointCloud c;
  c.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({fwd(rng), side(rng), up(rng), 0.f, 0.f});
  return c;
}

Calibration make_calib() {
  Calibration c;
  c.intrinsic << 700, 0, 400, 0, 700, 225, 0, 0, 1;
  c.extrinsic.setZero();
  c.extrinsic(0, 1) = -1;
  c.extrinsic(1, 2) = -1;
  c.extrinsic(2, 0) = 1;
  c.extrinsic(3, 3) = 1;
  c.extrinsic(1, 3) = 1.2;
  c.extrinsic(2, 3) = -0.4;
  return c;
}

const BBox2D kBox{300, 150, 500, 300};

void BM_SelectSerial(benchmark::State& state) {
  const auto cloud = make_cloud(static_cast<std::size_t>(state.range(0)));
  const auto calib = make_calib();
  for (auto _ : state) benchmark::DoNotOptimize(geometry::select_in_box_serial(cloud, calib, kBox, 0.5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_SelectParallel(benchmark::State& state) {
  const auto cloud = make_cloud(static_cast<std::size_t>(state.range(0)));
  const auto calib = make_calib();
  for (auto _ : state) benchmark::DoNotOptimize(geometry::select_in_box(cloud, calib, kBox, 0.5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Lift(benchmark::State& state) {
  const auto cloud = make_cloud(static_cast<std::size_t>(state.range(0)));
  const auto calib = make_calib();
  for (auto _ : state) benchmark::DoNotOptimize(geometry::lift_box_to_3d(kBox, cloud, calib));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ProjectPoints(benchmark::State& state) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> xy(-30, 30);
  std::uniform_real_distribution<double> z(0.1, 80);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < state.range(0); ++i) pts.emplace_back(xy(rng), xy(rng), z(rng));
  const auto k = make_calib().intrinsic;
  for (auto _ : state) benchmark::DoNotOptimize(geometry::project_points(k, pts, 0.5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_SelectSerial)->RangeMultiplier(8)->Range(1 << 10, 1 << 19);
BENCHMARK(BM_SelectParallel)->RangeMultiplier(8)->Range(1 << 10, 1 << 19);
BENCHMARK(BM_Lift)->RangeMultiplier(8)->Range(1 << 10, 1 << 19);
BENCHMARK(BM_ProjectPoints)->RangeMultiplier(8)->Range(1 << 10, 1 << 19);

BENCHMARK_MAIN();
