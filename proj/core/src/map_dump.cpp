#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "voom/map.hpp"

namespace voom {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_map_dump(const Map& map, std::ostream& out) {
  out << "# voom map dump v1\n";
  for (const auto& [id, p] : map.points()) {
    out << "P " << id << ' ' << fmt(p.position.x()) << ' ' << fmt(p.position.y()) << ' '
        << fmt(p.position.z()) << ' ' << (p.owner_object ? *p.owner_object : -1) << '\n';
  }
  for (const auto& [id, o] : map.objects()) {
    const Eigen::Quaterniond q(o.ellipsoid.rotation);
    const auto& e = o.ellipsoid;
    out << "O " << id << ' ' << o.category;
    for (int i = 0; i < 3; ++i) out << ' ' << fmt(e.center[i]);
    for (int i = 0; i < 3; ++i) out << ' ' << fmt(e.semi_axes[i]);
    out << ' ' << fmt(q.x()) << ' ' << fmt(q.y()) << ' ' << fmt(q.z()) << ' ' << fmt(q.w()) << '\n';
  }
  for (const auto& [id, kf] : map.keyframes()) {
    const Pose twc = kf.pose.inverse();
    const Eigen::Quaterniond q = twc.quaternion();
    out << "K " << id << ' ' << fmt(kf.timestamp);
    for (int i = 0; i < 3; ++i) out << ' ' << fmt(twc.translation[i]);
    out << ' ' << fmt(q.x()) << ' ' << fmt(q.y()) << ' ' << fmt(q.z()) << ' ' << fmt(q.w()) << '\n';
  }
  for (const auto& e : map.point_graph().edges()) out << "EP " << e.a << ' ' << e.b << ' ' << e.weight << '\n';
  for (const auto& e : map.object_graph().edges()) out << "EO " << e.a << ' ' << e.b << ' ' << e.weight << '\n';
}

MapDump read_map_dump(std::istream& in) {
  MapDump dump;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    auto fail = [&] {
      throw Error(ErrorCode::InvalidInput, "map dump line " + std::to_string(line_no) + ": " + line);
    };
    if (tag == "P") {
      MapDump::PointRecord r{};
      if (!(ss >> r.id >> r.position.x() >> r.position.y() >> r.position.z() >> r.owner)) fail();
      dump.points.push_back(r);
    } else if (tag == "O") {
      MapDump::ObjectRecord r{};
      Eigen::Quaterniond q;
      if (!(ss >> r.id >> r.category >> r.ellipsoid.center.x() >> r.ellipsoid.center.y() >>
            r.ellipsoid.center.z() >> r.ellipsoid.semi_axes.x() >> r.ellipsoid.semi_axes.y() >>
            r.ellipsoid.semi_axes.z() >> q.x() >> q.y() >> q.z() >> q.w())) {
        fail();
      }
      r.ellipsoid.rotation = q.normalized().toRotationMatrix();
      dump.objects.push_back(r);
    } else if (tag == "K") {
      MapDump::KeyFrameRecord r{};
      Vector3d t;
      Eigen::Quaterniond q;
      if (!(ss >> r.id >> r.timestamp >> t.x() >> t.y() >> t.z() >> q.x() >> q.y() >> q.z() >> q.w())) fail();
      r.world_from_camera = Pose::from_quaternion(q, t);
      dump.keyframes.push_back(r);
    } else if (tag == "EP" || tag == "EO") {
      CovisibilityGraph::Edge e{};
      if (!(ss >> e.a >> e.b >> e.weight)) fail();
      (tag == "EP" ? dump.point_edges : dump.object_edges).push_back(e);
    } else {
      fail();
    }
  }
  return dump;
}

}  // namespace voom
