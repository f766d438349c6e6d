#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "voom/dataset_io.hpp"
#include "voom/errors.hpp"
#include "voom/evaluation.hpp"
#include "voom/pipeline.hpp"
#include "voom/simulator.hpp"

namespace voom::cli {
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string ablation;
  std::optional<int> da;
  std::string out;
  std::string deterministic;
  std::string diag_csv;
  std::string dataset;
  std::string estimate;
  std::string groundtruth;
  std::string align = "on";
};

KeyValueConfig load_config(const Options& o) {
  return o.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(o.config);
}

void reject_unused(const KeyValueConfig& kv) {
  const auto unused = kv.unused_keys();
  if (unused.empty()) return;
  std::string msg = "unknown config keys:";
  for (const auto& k : unused) msg += " " + k;
  throw Error(ErrorCode::InvalidInput, msg);
}

PipelineConfig pipeline_config(const Options& o) {
  const KeyValueConfig kv = load_config(o);
  PipelineConfig cfg = pipeline_config_from(kv);
  reject_unused(kv);
  if (!o.ablation.empty()) cfg.ablation = parse_ablation(o.ablation);
  if (o.da) cfg.association.method = parse_da_method(std::to_string(*o.da));
  if (!o.deterministic.empty()) cfg.deterministic = o.deterministic == "on";
  cfg.record_solves = !o.diag_csv.empty();
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + p.string());
  return f;
}

fs::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir + ": " + ec.message());
  return dir;
}

int cmd_simulate(const Options& o, std::ostream& out) {
  const KeyValueConfig kv = load_config(o);
  SceneSpec spec = scene_spec_from(kv);
  reject_unused(kv);
  if (o.seed) spec.seed = *o.seed;
  const Dataset ds = generate_scene(spec);
  write_dataset(ds, o.out);
  out << "wrote " << ds.frames.size() << " frames, " << ds.scene.objects.size() << " objects, "
      << ds.scene.points.size() << " points to " << o.out << '\n';
  return kSuccess;
}

void write_frame_csv(std::ostream& f, const std::vector<FrameDiagnostics>& diags) {
  f << "frame,timestamp,state,keyframe,object_matches,object_point_matches,projection_matches,local_map_matches,"
       "inliers_stage1,inliers_stage2\n";
  char buf[64];
  for (const auto& d : diags) {
    std::snprintf(buf, sizeof(buf), "%.9g", d.timestamp);
    f << d.frame_id << ',' << buf << ',' << (d.state == TrackingState::Ok ? "ok" : "lost") << ','
      << (d.keyframe ? 1 : 0) << ',' << d.object_matches << ',' << d.object_point_matches << ','
      << d.projection_matches << ',' << d.local_map_matches << ',' << d.inliers_stage1 << ',' << d.inliers_stage2
      << '\n';
  }
}

void write_solver_csv(std::ostream& f, const std::vector<SolveRecord>& solves) {
  f << "kind,frame,subject,iteration,cost,damping,accepted\n";
  char buf[160];
  for (const auto& s : solves) {
    for (const auto& it : s.summary.iterations) {
      std::snprintf(buf, sizeof(buf), "%s,%lld,%lld,%d,%.9g,%.9g,%d\n", s.kind.c_str(),
                    static_cast<long long>(s.frame_id), static_cast<long long>(s.subject), it.iteration, it.cost,
                    it.damping, it.accepted ? 1 : 0);
      f << buf;
    }
  }
}

int cmd_run(const Options& o, std::ostream& out) {
  const PipelineConfig cfg = pipeline_config(o);
  const Dataset ds = read_dataset(o.dataset);
  const auto inputs = ds.inputs();
  const RunResult run = run_sequence(ds.scene.camera, inputs, cfg);

  const fs::path dir = ensure_dir(o.out);
  {
    auto f = open_out(dir / "trajectory.txt");
    write_tum(f, run.trajectory);
  }
  {
    auto f = open_out(dir / "map.txt");
    write_map_dump(run.map, f);
  }
  {
    auto f = open_out(dir / "diagnostics.csv");
    write_frame_csv(f, run.diagnostics);
  }
  if (!o.diag_csv.empty()) {
    auto f = open_out(o.diag_csv);
    write_solver_csv(f, run.solves);
  }

  out << "ablation " << to_string(cfg.ablation) << ", frames tracked " << run.trajectory.size() << "/"
      << run.frames_total << ", keyframes " << run.map.keyframes().size() << ", points " << run.map.points().size()
      << ", objects " << run.map.objects().size() << '\n';
  const auto gt = ds.groundtruth();
  if (!gt.empty() && !run.trajectory.empty()) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", ate_rmse(run.trajectory, gt, true));
    out << "ate_rmse " << buf << '\n';
  }
  if (run.lost_at_frame) {
    out << "tracking lost at frame " << *run.lost_at_frame << '\n';
    if (2 * run.trajectory.size() < run.frames_total) return kTrackingLost;
  }
  return kSuccess;
}

std::vector<TrajectoryEntry> load_tum(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return read_tum(in);
}

int cmd_eval(const Options& o, std::ostream& out) {
  const auto est = load_tum(o.estimate);
  const auto gt = load_tum(o.groundtruth);
  const AteResult r = ate(est, gt, o.align == "on");
  char buf[128];
  std::snprintf(buf, sizeof(buf), "pairs %zu\nate_rmse %.9g\n", r.pairs, r.rmse);
  out << buf;
  return kSuccess;
}

int cmd_bench_da(const Options& o, std::ostream& out) {
  const PipelineConfig cfg = pipeline_config(o);
  const Dataset ds = read_dataset(o.dataset);
  const DAMethod methods[] = {DAMethod::DA1, DAMethod::DA2, DAMethod::DA3, DAMethod::DA4};
  const ObservationModel models[] = {ObservationModel::BoxInscribed, ObservationModel::ContourFit};
  const auto rows = object_count_report(ds, cfg, methods, models);
  const std::string table = format_object_count_table(rows);
  out << table;
  if (!o.out.empty()) {
    auto f = open_out(ensure_dir(o.out) / "bench_da.txt");
    f << table;
  }
  return kSuccess;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  const PipelineConfig cfg = pipeline_config(o);
  const Dataset ds = read_dataset(o.dataset);
  const Ablation variants[] = {Ablation::Full, Ablation::ObjectsInMappingOnly, Ablation::ObjectsInOdometryOnly,
                               Ablation::AlternateDAModel, Ablation::PointsOnly};
  const auto rows = ablation_report(ds, cfg, variants);
  const std::string table = format_ablation_table(rows);
  out << table;
  if (!o.out.empty()) {
    auto f = open_out(ensure_dir(o.out) / "ablation.txt");
    f << table;
  }
  return kSuccess;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Object-and-point visual odometry and mapping on synthetic or precomputed data", "voom"};
  app.require_subcommand(1);
  Options o;

  const auto on_off = CLI::IsMember({"on", "off"});
  const auto ablations = CLI::IsMember({"full", "odom", "map", "alt", "points"});

  auto add_pipeline_flags = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Key-value pipeline config")->check(CLI::ExistingFile);
    sub->add_option("--ablation", o.ablation, "Object module ablation")->check(ablations);
    sub->add_option("--da", o.da, "Object data association method")->check(CLI::Range(1, 4));
    sub->add_option("--deterministic", o.deterministic, "Run mapping inline (on) or on a worker thread (off)")
        ->check(on_off);
    sub->add_option("--seed", o.seed, "Accepted for uniformity; the pipeline itself draws no random numbers");
  };

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset directory from a scene config");
  simulate->add_option("--config", o.config, "Key-value scene config")->check(CLI::ExistingFile);
  simulate->add_option("--seed", o.seed, "Override the scene seed");
  simulate->add_option("--out", o.out, "Dataset directory to write")->required();

  auto* run = app.add_subcommand("run", "Track a dataset and write trajectory, map dump and diagnostics");
  run->add_option("dataset", o.dataset, "Dataset directory")->required();
  add_pipeline_flags(run);
  run->add_option("--out", o.out, "Output directory")->required();
  run->add_option("--diag-csv", o.diag_csv, "Per-iteration solver log (CSV)");

  auto* eval = app.add_subcommand("eval", "ATE RMSE of an estimated trajectory against ground truth");
  eval->add_option("estimate", o.estimate, "Estimated TUM trajectory")->required();
  eval->add_option("groundtruth", o.groundtruth, "Ground-truth TUM trajectory")->required();
  eval->add_option("--align", o.align, "Rigidly align before computing the error")->check(on_off);

  auto* bench = app.add_subcommand("bench-da", "Object count and association F1 for DA1-DA4 and both ellipse models");
  bench->add_option("dataset", o.dataset, "Dataset directory")->required();
  add_pipeline_flags(bench);
  bench->add_option("--out", o.out, "Directory for bench_da.txt");

  auto* ablate = app.add_subcommand("ablate", "ATE RMSE of the object module ablations");
  ablate->add_option("dataset", o.dataset, "Dataset directory")->required();
  add_pipeline_flags(ablate);
  ablate->add_option("--out", o.out, "Directory for ablation.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "voom: " << e.what() << '\n';
    return kInvalidInput;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(o, out);
    if (run->parsed()) return cmd_run(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (bench->parsed()) return cmd_bench_da(o, out);
    if (ablate->parsed()) return cmd_ablate(o, out);
  } catch (const Error& e) {
    err << "voom: " << e.what() << '\n';
    return kInvalidInput;
  } catch (const std::exception& e) {
    err << "voom: internal error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

}  // namespace voom::cli
