#include "posekit/model_io.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace posekit {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "posekit-model";
constexpr int kVersion = 1;

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }

json matrix_to_json(const MatX& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatX matrix_from_json(const json& j) {
  const auto rows = j.size();
  const auto cols = rows == 0 ? 0 : j.at(0).size();
  MatX m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const json& row = j.at(r);
    if (row.size() != cols) throw ParseError("model: ragged matrix");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = row.at(c);
  }
  return m;
}

}  // namespace

std::string model_to_json(const KinematicModel& model) {
  json doc;
  doc["format"] = kFormat;
  doc["version"] = kVersion;
  doc["joint_count"] = model.joint_count;
  doc["parent"] = model.parent;
  doc["joint_names"] = model.joint_names;

  json joints = json::array();
  for (const auto& p : model.rest_joints) joints.push_back(vec3_to_json(p));
  doc["rest_joints"] = std::move(joints);

  json verts = json::array();
  for (const auto& p : model.rest_vertices) verts.push_back(vec3_to_json(p));
  doc["rest_vertices"] = std::move(verts);

  json skin = json::array();
  for (const auto& list : model.skin_weights) {
    json entry = json::array();
    for (const auto& w : list) entry.push_back(json::array({w.joint, w.weight}));
    skin.push_back(std::move(entry));
  }
  doc["skin_weights"] = std::move(skin);

  doc["shape_basis"] = matrix_to_json(model.shape_basis);

  json reg = json::array();
  for (const auto& col : model.landmark_regressor) {
    json entry = json::array();
    for (const auto& w : col) entry.push_back(json::array({w.vertex, w.weight}));
    reg.push_back(std::move(entry));
  }
  doc["landmark_regressor"] = std::move(reg);

  doc["landmark_layout"] = {
      {"body", model.layout.body},
      {"left_hand", model.layout.left_hand},
      {"right_hand", model.layout.right_hand},
      {"left_hip", model.layout.left_hip},
      {"right_hip", model.layout.right_hip},
  };

  json decoder = json::array();
  for (const auto& block : model.pose_decoder) decoder.push_back(matrix_to_json(block));
  doc["pose_decoder"] = std::move(decoder);

  json tris = json::array();
  for (const auto& t : model.triangles) tris.push_back(json::array({t[0], t[1], t[2]}));
  doc["triangles"] = std::move(tris);

  return doc.dump();
}

KinematicModel model_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
  try {
    if (doc.at("format") != kFormat) throw ParseError("model: unrecognized format tag");
    if (doc.at("version") != kVersion) throw ParseError("model: unsupported version");

    KinematicModel m;
    m.joint_count = doc.at("joint_count");
    m.parent = doc.at("parent").get<std::vector<int>>();
    if (doc.contains("joint_names")) {
      m.joint_names = doc.at("joint_names").get<std::vector<std::string>>();
    }
    for (const json& p : doc.at("rest_joints")) m.rest_joints.push_back(vec3_from_json(p));
    for (const json& p : doc.at("rest_vertices")) m.rest_vertices.push_back(vec3_from_json(p));
    for (const json& list : doc.at("skin_weights")) {
      std::vector<SkinWeight> entry;
      for (const json& w : list) entry.push_back({w.at(0), w.at(1)});
      m.skin_weights.push_back(std::move(entry));
    }
    m.shape_basis = matrix_from_json(doc.at("shape_basis"));
    for (const json& col : doc.at("landmark_regressor")) {
      std::vector<RegressorWeight> entry;
      for (const json& w : col) entry.push_back({w.at(0), w.at(1)});
      m.landmark_regressor.push_back(std::move(entry));
    }
    const json& layout = doc.at("landmark_layout");
    m.layout.body = layout.at("body");
    m.layout.left_hand = layout.at("left_hand");
    m.layout.right_hand = layout.at("right_hand");
    m.layout.left_hip = layout.at("left_hip");
    m.layout.right_hip = layout.at("right_hip");
    for (const json& block : doc.at("pose_decoder")) {
      m.pose_decoder.push_back(matrix_from_json(block));
    }
    for (const json& t : doc.at("triangles")) {
      m.triangles.push_back({t.at(0), t.at(1), t.at(2)});
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
}

void save_model(const KinematicModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << model_to_json(model) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

KinematicModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

std::uint64_t model_hash(const KinematicModel& model) {
  return fnv1a64(model_to_json(model));
}

}  // namespace posekit
