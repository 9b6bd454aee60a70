#include "posekit/obj_export.hpp"

#include <cstdio>
#include <fstream>

namespace posekit {

void export_obj(const KinematicModel& model, const PoseState& state, const std::string& path) {
  const MeshVertices mesh = skin_vertices(model, state);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open OBJ for writing: " + path);
  char line[128];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(line, sizeof line, "v %.6f %.6f %.6f\n", v.x(), v.y(), v.z());
    out << line;
  }
  for (const auto& tri : model.triangles) {
    std::snprintf(line, sizeof line, "f %d %d %d\n", tri[0] + 1, tri[1] + 1, tri[2] + 1);
    out << line;
  }
  if (!out) throw IoError("OBJ write failed: " + path);
}

}  // namespace posekit
