#include "voom/dataset_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace voom {

using nlohmann::json;

namespace {

Eigen::Quaterniond canonical(Eigen::Quaterniond q) {
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

json vec(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

template <int N>
Eigen::Matrix<double, N, 1> read_vec(const json& a, const char* what) {
  if (!a.is_array() || a.size() != N) throw Error(ErrorCode::InvalidInput, std::string(what) + ": wrong length");
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = a.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

json pose_json(const Pose& world_from_camera) {
  const Eigen::Quaterniond q = canonical(world_from_camera.quaternion());
  const Vector3d& t = world_from_camera.translation;
  return json::array({t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()});
}

Pose pose_from_json(const json& a) {
  const auto v = read_vec<7>(a, "pose");
  const Eigen::Quaterniond q(v[6], v[3], v[4], v[5]);
  if (q.norm() < 1e-9) throw Error(ErrorCode::InvalidInput, "pose quaternion has zero norm");
  return Pose::from_quaternion(q.normalized(), v.head<3>());
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void write_tum(std::ostream& out, std::span<const TrajectoryEntry> trajectory) {
  char buf[256];
  for (const auto& e : trajectory) {
    const Eigen::Quaterniond q = canonical(e.world_from_camera.quaternion());
    const Vector3d& t = e.world_from_camera.translation;
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g\n", e.timestamp, t.x(), t.y(), t.z(),
                  q.x(), q.y(), q.z(), q.w());
    out << buf;
  }
}

std::vector<TrajectoryEntry> read_tum(std::istream& in) {
  std::vector<TrajectoryEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double v[8];
    for (double& x : v) {
      if (!(ss >> x)) throw Error(ErrorCode::InvalidInput, "TUM line " + std::to_string(line_no) + ": expected 8 numbers");
    }
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (!(q.norm() > 1e-9)) throw Error(ErrorCode::InvalidInput, "TUM line " + std::to_string(line_no) + ": bad quaternion");
    out.push_back({v[0], Pose::from_quaternion(q.normalized(), Vector3d(v[1], v[2], v[3]))});
  }
  return out;
}

std::vector<FrameInput> Dataset::inputs() const {
  std::vector<FrameInput> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(f.input);
  return out;
}

std::vector<TrajectoryEntry> Dataset::groundtruth() const {
  std::vector<TrajectoryEntry> out;
  for (const auto& f : frames) {
    if (f.world_from_camera) out.push_back({f.input.timestamp, *f.world_from_camera});
  }
  return out;
}

std::string frame_to_json(const FrameRecord& frame) {
  json j;
  j["id"] = frame.input.id;
  j["timestamp"] = frame.input.timestamp;
  if (frame.world_from_camera) j["pose"] = pose_json(*frame.world_from_camera);
  json kps = json::array();
  for (const auto& kp : frame.input.keypoints) {
    kps.push_back({{"uv", vec(kp.pixel)},
                   {"depth", kp.depth},
                   {"desc", descriptor_to_hex(kp.descriptor)},
                   {"gt_id", kp.source_id}});
  }
  j["keypoints"] = std::move(kps);
  json dets = json::array();
  for (const auto& d : frame.input.detections) {
    json contour = json::array();
    for (const auto& p : d.contour) {
      contour.push_back(p.x());
      contour.push_back(p.y());
    }
    dets.push_back({{"category", d.category},
                    {"confidence", d.confidence},
                    {"contour", std::move(contour)},
                    {"gt_id", d.source_id}});
  }
  j["detections"] = std::move(dets);
  return j.dump();
}

FrameRecord frame_from_json(const std::string& line) {
  FrameRecord rec;
  try {
    const json j = json::parse(line);
    rec.input.id = j.at("id").get<std::int64_t>();
    rec.input.timestamp = j.at("timestamp").get<double>();
    if (j.contains("pose")) rec.world_from_camera = pose_from_json(j.at("pose"));
    for (const auto& k : j.value("keypoints", json::array())) {
      Keypoint kp;
      kp.pixel = read_vec<2>(k.at("uv"), "uv");
      kp.depth = k.value("depth", 0.0);
      kp.descriptor = descriptor_from_hex(k.at("desc").get<std::string>());
      kp.source_id = k.value("gt_id", std::int64_t{-1});
      rec.input.keypoints.push_back(kp);
    }
    for (const auto& d : j.value("detections", json::array())) {
      RawDetection det;
      det.category = d.at("category").get<int>();
      det.confidence = d.at("confidence").get<double>();
      const auto& c = d.at("contour");
      if (!c.is_array() || c.size() % 2 != 0) throw Error(ErrorCode::InvalidInput, "contour must hold x,y pairs");
      for (std::size_t i = 0; i < c.size(); i += 2) det.contour.emplace_back(c[i].get<double>(), c[i + 1].get<double>());
      det.source_id = d.value("gt_id", std::int64_t{-1});
      rec.input.detections.push_back(std::move(det));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidInput, std::string("frame record: ") + e.what());
  }
  return rec;
}

std::string scene_to_json(const Scene& scene) {
  json j;
  const Intrinsics& k = scene.camera;
  j["camera"] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
  json objects = json::array();
  for (const auto& o : scene.objects) {
    const Eigen::Quaterniond q = canonical(Eigen::Quaterniond(o.ellipsoid.rotation));
    objects.push_back({{"id", o.id},
                       {"category", o.category},
                       {"center", vec(o.ellipsoid.center)},
                       {"semi_axes", vec(o.ellipsoid.semi_axes)},
                       {"rotation", json::array({q.x(), q.y(), q.z(), q.w()})}});
  }
  j["objects"] = std::move(objects);
  json points = json::array();
  for (const auto& p : scene.points) {
    points.push_back({{"id", p.id}, {"position", vec(p.position)}, {"object", p.object_id}});
  }
  j["points"] = std::move(points);
  return j.dump(1);
}

Scene scene_from_json(const std::string& text) {
  Scene scene;
  try {
    const json j = json::parse(text);
    const json& c = j.at("camera");
    scene.camera.fx = c.at("fx").get<double>();
    scene.camera.fy = c.at("fy").get<double>();
    scene.camera.cx = c.at("cx").get<double>();
    scene.camera.cy = c.at("cy").get<double>();
    scene.camera.width = c.at("width").get<int>();
    scene.camera.height = c.at("height").get<int>();
    if (!scene.camera.valid()) throw Error(ErrorCode::InvalidInput, "scene camera intrinsics invalid");
    for (const auto& o : j.value("objects", json::array())) {
      SceneObject so;
      so.id = o.at("id").get<std::int64_t>();
      so.category = o.at("category").get<int>();
      so.ellipsoid.center = read_vec<3>(o.at("center"), "center");
      so.ellipsoid.semi_axes = read_vec<3>(o.at("semi_axes"), "semi_axes");
      const auto q = read_vec<4>(o.at("rotation"), "rotation");
      so.ellipsoid.rotation = Eigen::Quaterniond(q[3], q[0], q[1], q[2]).normalized().toRotationMatrix();
      scene.objects.push_back(so);
    }
    for (const auto& p : j.value("points", json::array())) {
      ScenePoint sp;
      sp.id = p.at("id").get<std::int64_t>();
      sp.position = read_vec<3>(p.at("position"), "position");
      sp.object_id = p.value("object", std::int64_t{-1});
      scene.points.push_back(sp);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidInput, std::string("scene.json: ") + e.what());
  }
  return scene;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream gt(dir / "groundtruth.txt", std::ios::binary);
    if (!gt) throw Error(ErrorCode::Io, "cannot write groundtruth.txt");
    gt << "# timestamp tx ty tz qx qy qz qw\n";
    const auto traj = dataset.groundtruth();
    write_tum(gt, traj);
  }
  {
    std::ofstream frames(dir / "frames.jsonl", std::ios::binary);
    if (!frames) throw Error(ErrorCode::Io, "cannot write frames.jsonl");
    for (const auto& f : dataset.frames) frames << frame_to_json(f) << '\n';
  }
  {
    std::ofstream scene(dir / "scene.json", std::ios::binary);
    if (!scene) throw Error(ErrorCode::Io, "cannot write scene.json");
    scene << scene_to_json(dataset.scene) << '\n';
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.scene = scene_from_json(read_file(dir / "scene.json"));
  std::ifstream in(dir / "frames.jsonl", std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + (dir / "frames.jsonl").string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ds.frames.push_back(frame_from_json(line));
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidInput, "frames.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
    if (ds.frames.size() >= 2 &&
        !(ds.frames.back().input.timestamp > ds.frames[ds.frames.size() - 2].input.timestamp)) {
      throw Error(ErrorCode::InvalidInput, "frames.jsonl line " + std::to_string(line_no) +
                                               ": timestamps must be strictly increasing");
    }
  }
  if (ds.frames.empty()) throw Error(ErrorCode::InvalidInput, "frames.jsonl holds no frames");
  return ds;
}

}  // namespace voom
