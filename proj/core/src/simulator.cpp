#include "voom/simulator.hpp"

#include <cmath>
#include <numbers>

#include "voom/lie.hpp"

namespace voom {

void SceneSpec::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidSpec, what); };
  auto rate = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!camera.valid()) fail("camera intrinsics invalid");
  if (object_count < 0 || category_count < 1) fail("object and category counts must be non-negative / positive");
  if (!(object_size_min > 0.0 && object_size_max >= object_size_min)) fail("object size range invalid");
  if (points_per_object < 0 || background_points < 0) fail("point counts must be non-negative");
  if (!(object_ring_radius > 0.0 && room_radius > object_ring_radius + object_size_max)) {
    fail("room must enclose the object ring");
  }
  if (!(room_height > 0.0)) fail("room height must be positive");
  if (frames < 1 || !(frame_rate > 0.0) || laps < 1) fail("frames, frame_rate and laps must be positive");
  if (!(path_radius >= 0.0 && path_radius < object_ring_radius - object_size_max)) {
    fail("walking path must stay inside the object ring");
  }
  if (!(noise.keypoint_sigma_px >= 0.0 && noise.depth_sigma >= 0.0 && noise.contour_sigma_px >= 0.0 &&
        noise.jitter_rotation_deg >= 0.0 && noise.jitter_translation >= 0.0)) {
    fail("noise sigmas must be non-negative");
  }
  if (!rate(noise.dropout_rate) || !rate(noise.misclassification_rate) || !rate(noise.outlier_detection_rate)) {
    fail("rates must lie in [0,1]");
  }
  if (noise.descriptor_bit_flips < 0 || noise.descriptor_bit_flips > 256) fail("bit flips outside [0,256]");
}

SceneSpec scene_spec_from(const KeyValueConfig& kv, SceneSpec s) {
  s.seed = kv.get_uint("seed", s.seed);
  s.camera.fx = kv.get_double("fx", s.camera.fx);
  s.camera.fy = kv.get_double("fy", s.camera.fy);
  s.camera.cx = kv.get_double("cx", s.camera.cx);
  s.camera.cy = kv.get_double("cy", s.camera.cy);
  s.camera.width = static_cast<int>(kv.get_int("width", s.camera.width));
  s.camera.height = static_cast<int>(kv.get_int("height", s.camera.height));
  s.object_count = static_cast<int>(kv.get_int("object_count", s.object_count));
  s.category_count = static_cast<int>(kv.get_int("category_count", s.category_count));
  s.object_size_min = kv.get_double("object_size_min", s.object_size_min);
  s.object_size_max = kv.get_double("object_size_max", s.object_size_max);
  s.object_ring_radius = kv.get_double("object_ring_radius", s.object_ring_radius);
  s.points_per_object = static_cast<int>(kv.get_int("points_per_object", s.points_per_object));
  s.background_points = static_cast<int>(kv.get_int("background_points", s.background_points));
  s.room_radius = kv.get_double("room_radius", s.room_radius);
  s.room_height = kv.get_double("room_height", s.room_height);
  const std::string traj = kv.get_string("trajectory", s.trajectory == TrajectoryKind::Orbit      ? "orbit"
                                                       : s.trajectory == TrajectoryKind::Straight ? "straight"
                                                                                                  : "loopwalk");
  if (traj == "orbit") {
    s.trajectory = TrajectoryKind::Orbit;
  } else if (traj == "loopwalk") {
    s.trajectory = TrajectoryKind::LoopWalk;
  } else if (traj == "straight") {
    s.trajectory = TrajectoryKind::Straight;
  } else {
    throw Error(ErrorCode::InvalidSpec, "trajectory must be orbit, loopwalk or straight");
  }
  s.frames = static_cast<int>(kv.get_int("frames", s.frames));
  s.frame_rate = kv.get_double("frame_rate", s.frame_rate);
  s.start_time = kv.get_double("start_time", s.start_time);
  s.laps = static_cast<int>(kv.get_int("laps", s.laps));
  s.path_radius = kv.get_double("path_radius", s.path_radius);
  s.camera_height = kv.get_double("camera_height", s.camera_height);
  NoiseSpec& n = s.noise;
  n.keypoint_sigma_px = kv.get_double("keypoint_sigma", n.keypoint_sigma_px);
  n.depth_sigma = kv.get_double("depth_sigma", n.depth_sigma);
  n.contour_sigma_px = kv.get_double("contour_sigma", n.contour_sigma_px);
  n.dropout_rate = kv.get_double("dropout_rate", n.dropout_rate);
  n.misclassification_rate = kv.get_double("misclassification_rate", n.misclassification_rate);
  n.outlier_detection_rate = kv.get_double("outlier_detection_rate", n.outlier_detection_rate);
  n.descriptor_bit_flips = static_cast<int>(kv.get_int("descriptor_bit_flips", n.descriptor_bit_flips));
  n.jitter_rotation_deg = kv.get_double("jitter_rotation_deg", n.jitter_rotation_deg);
  n.jitter_translation = kv.get_double("jitter_translation", n.jitter_translation);
  s.validate();
  return s;
}

namespace {

constexpr double kPi = std::numbers::pi;

/// Camera-from-world pose of a camera at `position` looking along `forward`
/// with world +z up (image y points down).
Pose look_along(const Vector3d& position, const Vector3d& forward) {
  const Vector3d z = forward.normalized();
  const Vector3d x = z.cross(Vector3d::UnitZ()).normalized();
  const Vector3d y = z.cross(x);
  Matrix3d r_wc;
  r_wc.col(0) = x;
  r_wc.col(1) = y;
  r_wc.col(2) = z;
  Pose p;
  p.rotation = r_wc.transpose();
  p.translation = -p.rotation * position;
  return p;
}

double gauss(std::mt19937_64& rng, double sigma) {
  if (!(sigma > 0.0)) return 0.0;
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Descriptor random_descriptor(std::mt19937_64& rng) {
  Descriptor d;
  for (auto& w : d) w = rng();
  return d;
}

Descriptor flip_bits(Descriptor d, int flips, std::mt19937_64& rng) {
  if (flips <= 0) return d;
  std::array<int, 256> idx;
  for (int i = 0; i < 256; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < flips; ++i) {
    const auto j = std::uniform_int_distribution<int>(i, 255)(rng);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    const int bit = idx[static_cast<std::size_t>(i)];
    d[static_cast<std::size_t>(bit / 64)] ^= std::uint64_t{1} << (bit % 64);
  }
  return d;
}

Vector3d surface_normal(const Ellipsoid& e, const Vector3d& p) {
  const Vector3d local = e.rotation.transpose() * (p - e.center);
  const Vector3d n = local.cwiseQuotient(e.semi_axes.cwiseProduct(e.semi_axes));
  return (e.rotation * n).normalized();
}

}  // namespace

bool segment_hits_ellipsoid(const Vector3d& from, const Vector3d& to, const Ellipsoid& e) {
  const Vector3d inv = e.semi_axes.cwiseInverse();
  const Vector3d o = inv.cwiseProduct(e.rotation.transpose() * (from - e.center));
  const Vector3d d = inv.cwiseProduct(e.rotation.transpose() * (to - from));
  const double a = d.squaredNorm();
  const double b = 2.0 * o.dot(d);
  const double c = o.squaredNorm() - 1.0;
  if (c < 0.0) return true;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0 || a == 0.0) return false;
  const double t = (-b - std::sqrt(disc)) / (2.0 * a);
  return t > 1e-9 && t < 1.0 - 1e-6;
}

std::vector<Pose> generate_trajectory(const SceneSpec& spec) {
  std::vector<Pose> poses;
  poses.reserve(static_cast<std::size_t>(spec.frames));
  std::mt19937_64 jitter_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  const double n = spec.frames;
  for (int i = 0; i < spec.frames; ++i) {
    Pose p;
    switch (spec.trajectory) {
      case TrajectoryKind::LoopWalk: {
        const double phi = 2.0 * kPi * spec.laps * i / n;
        const Vector3d pos(spec.path_radius * std::cos(phi), spec.path_radius * std::sin(phi),
                           spec.camera_height + 0.05 * std::sin(3.0 * phi));
        const double yaw = phi + 0.25 * std::sin(2.0 * phi);
        const double pitch = 0.05 * std::sin(phi);
        p = look_along(pos, Vector3d(std::cos(yaw), std::sin(yaw), pitch));
        break;
      }
      case TrajectoryKind::Orbit: {
        const double phi = 2.0 * kPi * spec.laps * i / n;
        const double r = 0.5 * (spec.object_ring_radius + spec.room_radius);
        const Vector3d pos(r * std::cos(phi), r * std::sin(phi), spec.camera_height);
        p = look_along(pos, Vector3d(0.0, 0.0, spec.camera_height - 0.3) - pos);
        break;
      }
      case TrajectoryKind::Straight: {
        const double s = n > 1 ? i / (n - 1.0) : 0.0;
        const double half = 0.6 * spec.object_ring_radius;
        const Vector3d pos(-half + 2.0 * half * s, -0.5 * spec.object_ring_radius, spec.camera_height);
        p = look_along(pos, Vector3d(0.0, 1.0, 0.0));
        break;
      }
    }
    if (spec.noise.jitter_rotation_deg > 0.0 || spec.noise.jitter_translation > 0.0) {
      Vector6d xi;
      const double rot = spec.noise.jitter_rotation_deg * kPi / 180.0;
      for (int j = 0; j < 3; ++j) xi[j] = gauss(jitter_rng, spec.noise.jitter_translation);
      for (int j = 3; j < 6; ++j) xi[j] = gauss(jitter_rng, rot);
      p = left_update(p, xi);
    }
    poses.push_back(p);
  }
  return poses;
}

Scene generate_landmarks(const SceneSpec& spec, std::mt19937_64& rng) {
  Scene scene;
  scene.camera = spec.camera;
  std::int64_t next_point = 0;
  for (int i = 0; i < spec.object_count; ++i) {
    SceneObject o;
    o.id = i;
    o.category = std::uniform_int_distribution<int>(0, spec.category_count - 1)(rng);
    const double angle = 2.0 * kPi * i / spec.object_count + uniform(rng, -0.2, 0.2);
    const double radius = spec.object_ring_radius + uniform(rng, -0.3, 0.3);
    o.ellipsoid.center = Vector3d(radius * std::cos(angle), radius * std::sin(angle), uniform(rng, 0.6, 1.6));
    for (int j = 0; j < 3; ++j) o.ellipsoid.semi_axes[j] = uniform(rng, spec.object_size_min, spec.object_size_max);
    const double yaw = uniform(rng, 0.0, 2.0 * kPi);
    const Vector3d tilt(uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), 0.0);
    o.ellipsoid.rotation = so3_exp(tilt) * Eigen::AngleAxisd(yaw, Vector3d::UnitZ()).toRotationMatrix();
    for (int j = 0; j < spec.points_per_object; ++j) {
      Vector3d u(gauss(rng, 1.0), gauss(rng, 1.0), gauss(rng, 1.0));
      if (u.norm() < 1e-9) u = Vector3d::UnitX();
      u.normalize();
      ScenePoint p;
      p.id = next_point++;
      p.position = o.ellipsoid.center + o.ellipsoid.rotation * o.ellipsoid.semi_axes.cwiseProduct(u);
      p.descriptor = random_descriptor(rng);
      p.object_id = o.id;
      scene.points.push_back(p);
    }
    scene.objects.push_back(o);
  }
  for (int j = 0; j < spec.background_points; ++j) {
    const double a = uniform(rng, 0.0, 2.0 * kPi);
    ScenePoint p;
    p.id = next_point++;
    p.position = Vector3d(spec.room_radius * std::cos(a), spec.room_radius * std::sin(a),
                          uniform(rng, 0.0, spec.room_height));
    p.descriptor = random_descriptor(rng);
    scene.points.push_back(p);
  }
  return scene;
}

FrameRecord render_frame(const Scene& scene, const SceneSpec& spec, const Pose& pose, std::int64_t id,
                         double timestamp, std::mt19937_64& rng) {
  const Intrinsics& k = scene.camera;
  const NoiseSpec& noise = spec.noise;
  const Vector3d eye = pose.center();
  FrameRecord rec;
  rec.input.id = id;
  rec.input.timestamp = timestamp;
  rec.world_from_camera = pose.inverse();

  for (const ScenePoint& sp : scene.points) {
    const Vector3d pc = pose * sp.position;
    if (pc.z() < 0.1) continue;
    const Vector2d uv(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
    if (!k.contains(uv)) continue;
    if (sp.object_id >= 0) {
      const Ellipsoid& own = scene.objects[static_cast<std::size_t>(sp.object_id)].ellipsoid;
      if (surface_normal(own, sp.position).dot(eye - sp.position) <= 0.0) continue;
    }
    bool hidden = false;
    for (const SceneObject& o : scene.objects) {
      if (o.id == sp.object_id) continue;
      if (segment_hits_ellipsoid(eye, sp.position, o.ellipsoid)) {
        hidden = true;
        break;
      }
    }
    if (hidden) continue;
    Keypoint kp;
    kp.pixel = uv + Vector2d(gauss(rng, noise.keypoint_sigma_px), gauss(rng, noise.keypoint_sigma_px));
    kp.depth = pc.z() * (1.0 + gauss(rng, noise.depth_sigma));
    kp.descriptor = flip_bits(sp.descriptor, noise.descriptor_bit_flips, rng);
    kp.source_id = sp.id;
    if (!k.contains(kp.pixel)) continue;
    rec.input.keypoints.push_back(kp);
  }

  const Vector2d lo(0.0, 0.0);
  const Vector2d hi(k.width - 1.0, k.height - 1.0);
  for (const SceneObject& o : scene.objects) {
    if ((pose * o.ellipsoid.center).z() < 0.1) continue;
    Ellipse2D e;
    try {
      e = project_ellipsoid(o.ellipsoid, pose, k);
    } catch (const Error&) {
      continue;
    }
    if (!k.contains(e.center)) continue;
    bool hidden = false;
    for (const SceneObject& other : scene.objects) {
      if (other.id != o.id && segment_hits_ellipsoid(eye, o.ellipsoid.center, other.ellipsoid)) {
        hidden = true;
        break;
      }
    }
    if (hidden) continue;
    if (uniform(rng, 0.0, 1.0) < noise.dropout_rate) continue;
    RawDetection d;
    d.source_id = o.id;
    d.category = o.category;
    if (spec.category_count > 1 && uniform(rng, 0.0, 1.0) < noise.misclassification_rate) {
      const int shift = std::uniform_int_distribution<int>(1, spec.category_count - 1)(rng);
      d.category = (o.category + shift) % spec.category_count;
    }
    d.confidence = uniform(rng, 0.2, 1.0);
    for (const Vector2d& p : sample_ellipse(e, 64)) {
      const Vector2d q = p + Vector2d(gauss(rng, noise.contour_sigma_px), gauss(rng, noise.contour_sigma_px));
      d.contour.push_back(q.cwiseMax(lo).cwiseMin(hi));
    }
    rec.input.detections.push_back(std::move(d));
  }

  if (uniform(rng, 0.0, 1.0) < noise.outlier_detection_rate) {
    RawDetection d;
    d.category = std::uniform_int_distribution<int>(0, spec.category_count - 1)(rng);
    d.confidence = uniform(rng, 0.2, 1.0);
    const Vector2d c(uniform(rng, 0.0, k.width - 1.0), uniform(rng, 0.0, k.height - 1.0));
    const Ellipse2D e = Ellipse2D::make(c, uniform(rng, 8.0, 60.0), uniform(rng, 8.0, 60.0),
                                        uniform(rng, -kPi / 2, kPi / 2));
    for (const Vector2d& p : sample_ellipse(e, 64)) d.contour.push_back(p.cwiseMax(lo).cwiseMin(hi));
    rec.input.detections.push_back(std::move(d));
  }
  return rec;
}

Dataset generate_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  Dataset ds;
  ds.scene = generate_landmarks(spec, rng);
  const auto poses = generate_trajectory(spec);
  ds.frames.reserve(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const double t = spec.start_time + static_cast<double>(i) / spec.frame_rate;
    ds.frames.push_back(render_frame(ds.scene, spec, poses[i], static_cast<std::int64_t>(i), t, rng));
  }
  return ds;
}

}  // namespace voom
