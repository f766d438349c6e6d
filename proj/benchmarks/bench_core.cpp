#include <benchmark/benchmark.h>

#include <random>

#include "voom/association.hpp"
#include "voom/geometry.hpp"
#include "voom/lie.hpp"
#include "voom/metrics.hpp"
#include "voom/optimize.hpp"
#include "voom/pipeline.hpp"
#include "voom/simulator.hpp"

using namespace voom;

namespace {

Gaussian2D gaussian(double x, double y, double a, double b, double angle) {
  return ellipse_to_gaussian(Ellipse2D::make({x, y}, a, b, angle));
}

std::vector<Correspondence> pose_matches(int n, const Pose& truth) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Intrinsics k;
  std::vector<Correspondence> out;
  while (static_cast<int>(out.size()) < n) {
    const Vector3d pw = truth.inverse() * Vector3d(2.0 * u(rng), 1.5 * u(rng), 5.0 + 2.0 * u(rng));
    const Vector2d px = project_point(pw, truth, k);
    if (k.contains(px)) out.push_back({px, pw});
  }
  return out;
}

}  // namespace

static void BM_Wasserstein(benchmark::State& state) {
  const auto form = static_cast<WassersteinForm>(state.range(0));
  const Gaussian2D a = gaussian(100, 80, 30, 10, 0.4), b = gaussian(104, 83, 26, 12, 0.7);
  for (auto _ : state) benchmark::DoNotOptimize(wasserstein2_sq(a, b, form));
  state.SetLabel(form == WassersteinForm::Frobenius ? "frobenius" : "bures");
}
BENCHMARK(BM_Wasserstein)->Arg(static_cast<int>(WassersteinForm::Frobenius))
    ->Arg(static_cast<int>(WassersteinForm::BuresTrace));

static void BM_FitEllipse(benchmark::State& state) {
  const auto contour = sample_ellipse(Ellipse2D::make({320, 240}, 60, 25, 0.3), static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(fit_ellipse(contour));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FitEllipse)->Arg(16)->Arg(64)->Arg(256);

static void BM_GreedyAssignment(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = static_cast<int>(state.range(0));
  ScoreMatrix s(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) s(r, c) = u(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(greedy_assignment(s, 0.1));
}
BENCHMARK(BM_GreedyAssignment)->Arg(5)->Arg(20)->Arg(50);

static void BM_AssociateObjects(benchmark::State& state) {
  const Intrinsics k;
  const int n = static_cast<int>(state.range(0));
  std::vector<ObjectLandmark> objects;
  std::vector<Detection> detections;
  for (int i = 0; i < n; ++i) {
    ObjectLandmark o;
    o.id = i;
    o.ellipsoid.center = back_project({40.0 + 560.0 * (i % 6) / 5.0, 40.0 + 400.0 * (i / 6 % 5) / 4.0}, 4.0 + i % 3,
                                      Pose::identity(), k);
    o.ellipsoid.semi_axes = Vector3d(0.3, 0.2, 0.25);
    objects.push_back(o);
    Detection d;
    d.ellipse = project_ellipsoid(o.ellipsoid, Pose::identity(), k);
    d.ellipse.center += Vector2d(2.0, -1.0);
    detections.push_back(d);
  }
  std::vector<const ObjectLandmark*> ptrs;
  for (const auto& o : objects) ptrs.push_back(&o);
  AssociationConfig cfg;
  cfg.method = static_cast<DAMethod>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(associate_objects(detections, ptrs, Pose::identity(), k, cfg));
}
BENCHMARK(BM_AssociateObjects)->ArgsProduct({{10, 30}, {static_cast<int>(DAMethod::DA1), static_cast<int>(DAMethod::DA4)}});

static void BM_OptimizePose(benchmark::State& state) {
  Pose truth;
  truth.translation = Vector3d(0.1, -0.2, 0.3);
  const auto matches = pose_matches(static_cast<int>(state.range(0)), truth);
  Vector6d xi;
  xi << 0.03, -0.02, 0.01, 0.01, 0.005, -0.01;
  const Pose initial = left_update(truth, xi);
  for (auto _ : state) benchmark::DoNotOptimize(optimize_pose(initial, matches, Intrinsics{}));
}
BENCHMARK(BM_OptimizePose)->Arg(50)->Arg(200)->Arg(800)->Unit(benchmark::kMicrosecond);

static void BM_LocalBundleAdjustment(benchmark::State& state) {
  SceneSpec spec;
  spec.frames = 200;
  spec.laps = 1;
  const Dataset ds = generate_scene(spec);
  const RunResult run = run_sequence(ds.scene.camera, ds.inputs(), PipelineConfig{});
  const LocalMap local = run.map.local_map_for_frame(run.map.keyframes().rbegin()->first);
  for (auto _ : state) benchmark::DoNotOptimize(local_bundle_adjustment(run.map, local, ds.scene.camera));
  state.counters["keyframes"] = static_cast<double>(local.keyframes.size());
  state.counters["points"] = static_cast<double>(local.points.size());
}
BENCHMARK(BM_LocalBundleAdjustment)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
