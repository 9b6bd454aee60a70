#include "posekit/body_model.hpp"

#include <cmath>
#include <cstdio>

namespace posekit {

namespace {

std::string describe(const char* what, int index) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%s (index %d)", what, index);
  return buf;
}

}  // namespace

void KinematicModel::validate() const {
  if (joint_count <= 0 || static_cast<int>(parent.size()) != joint_count ||
      static_cast<int>(rest_joints.size()) != joint_count) {
    throw Error("model: joint arrays disagree with joint_count");
  }
  if (parent[0] != -1) throw Error("model: root parent must be -1");
  for (int j = 1; j < joint_count; ++j) {
    if (parent[j] < 0 || parent[j] >= j) {
      throw Error(describe("model: parents must be topologically ordered", j));
    }
  }
  if (static_cast<int>(skin_weights.size()) != vertex_count()) {
    throw Error("model: one skin weight list per vertex required");
  }
  for (int v = 0; v < vertex_count(); ++v) {
    double sum = 0.0;
    for (const auto& w : skin_weights[v]) {
      if (w.joint < 0 || w.joint >= joint_count) throw Error(describe("model: skin joint out of range", v));
      if (w.weight < 0.0) throw Error(describe("model: negative skin weight", v));
      sum += w.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error(describe("model: skin weights must sum to 1", v));
  }
  if (shape_basis.rows() != 3 * vertex_count()) {
    throw Error("model: shape basis rows must equal 3 * vertex count");
  }
  if (static_cast<int>(landmark_regressor.size()) != layout.total()) {
    throw Error("model: one regressor column per landmark required");
  }
  for (int s = 0; s < layout.total(); ++s) {
    double sum = 0.0;
    for (const auto& w : landmark_regressor[s]) {
      if (w.vertex < 0 || w.vertex >= vertex_count()) throw Error(describe("model: regressor vertex out of range", s));
      if (w.weight < 0.0) throw Error(describe("model: negative regressor weight", s));
      sum += w.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error(describe("model: regressor columns must sum to 1", s));
  }
  if (static_cast<int>(pose_decoder.size()) != joint_count) {
    throw Error("model: one decoder block per joint required");
  }
  for (const auto& d : pose_decoder) {
    if (d.rows() != 6 || d.cols() != theta_dim()) throw Error("model: decoder blocks must be 6 x D_theta");
  }
  for (const auto& tri : triangles) {
    for (int k = 0; k < 3; ++k) {
      if (tri[k] < 0 || tri[k] >= vertex_count()) throw Error("model: triangle index out of range");
    }
  }
}

VecX PoseState::flatten() const {
  VecX x(6 + 3 + beta.size() + theta.size());
  x.head<6>() = r;
  x.segment<3>(6) = t;
  x.segment(9, beta.size()) = beta;
  x.tail(theta.size()) = theta;
  return x;
}

PoseState PoseState::unflatten(const KinematicModel& model, const VecX& x) {
  if (x.size() != model.state_dim()) throw ShapeMismatch("unflatten: state size mismatch");
  PoseState s;
  s.r = x.head<6>();
  s.t = x.segment<3>(6);
  s.beta = x.segment(9, model.beta_dim());
  s.theta = x.tail(model.theta_dim());
  return s;
}

std::vector<Mat3> decode_pose(const KinematicModel& model, const VecX& theta) {
  if (theta.size() != model.theta_dim()) throw ShapeMismatch("decode_pose: theta size mismatch");
  std::vector<Mat3> rotations(model.joint_count);
  for (int j = 0; j < model.joint_count; ++j) {
    const Vec6 r6 = rot6d_identity() + model.pose_decoder[j] * theta;
    rotations[j] = rot6d_to_matrix(r6);
  }
  return rotations;
}

std::vector<RigidTransform> forward_kinematics(const KinematicModel& model,
                                               const std::vector<Mat3>& joint_rotations,
                                               const Vec6& r, const Vec3& t) {
  if (static_cast<int>(joint_rotations.size()) != model.joint_count) {
    throw ShapeMismatch("forward_kinematics: one rotation per joint required");
  }
  std::vector<RigidTransform> world(model.joint_count);
  const Mat3 root_rot = rot6d_to_matrix(r);
  for (int j = 0; j < model.joint_count; ++j) {
    const Vec3& rest = model.rest_joints[j];
    // Local rotation about the joint's rest position.
    RigidTransform local;
    local.rot = joint_rotations[j];
    local.trans = rest - joint_rotations[j] * rest;
    if (j == 0) {
      world[j].rot = root_rot * local.rot;
      world[j].trans = root_rot * local.trans + t;
    } else {
      const RigidTransform& p = world[model.parent[j]];
      world[j].rot = p.rot * local.rot;
      world[j].trans = p.rot * local.trans + p.trans;
    }
  }
  return world;
}

std::vector<Vec3> joint_positions(const KinematicModel& model,
                                  const std::vector<RigidTransform>& world) {
  std::vector<Vec3> pos(model.joint_count);
  for (int j = 0; j < model.joint_count; ++j) {
    pos[j] = world[j].apply(model.rest_joints[j]);
  }
  return pos;
}

MeshVertices skin_vertices(const KinematicModel& model, const PoseState& state) {
  const auto rotations = decode_pose(model, state.theta);
  const auto world = forward_kinematics(model, rotations, state.r, state.t);

  const VecX shaped = state.beta.size() > 0 ? VecX(model.shape_basis * state.beta)
                                            : VecX::Zero(3 * model.vertex_count());
  MeshVertices out;
  out.vertices.resize(model.vertex_count());
  for (int v = 0; v < model.vertex_count(); ++v) {
    const Vec3 rest = model.rest_vertices[v] + shaped.segment<3>(3 * v);
    Vec3 p = Vec3::Zero();
    for (const auto& w : model.skin_weights[v]) {
      p += w.weight * world[w.joint].apply(rest);
    }
    out.vertices[v] = p;
  }
  return out;
}

LandmarkSet regress_landmarks(const KinematicModel& model, const MeshVertices& v) {
  if (static_cast<int>(v.vertices.size()) != model.vertex_count()) {
    throw ShapeMismatch("regress_landmarks: vertex count mismatch");
  }
  LandmarkSet out;
  out.frame = LandmarkFrame::World;
  out.points.resize(model.landmark_count());
  for (int s = 0; s < model.landmark_count(); ++s) {
    Vec3 p = Vec3::Zero();
    for (const auto& w : model.landmark_regressor[s]) {
      p += w.weight * v.vertices[w.vertex];
    }
    out.points[s] = p;
  }
  return out;
}

Vec3 hips_center(const LandmarkSet& landmarks, const LandmarkLayout& layout) {
  return 0.5 * (landmarks.points[layout.left_hip] + landmarks.points[layout.right_hip]);
}

LandmarkSet center_at_hips(const LandmarkSet& landmarks, const LandmarkLayout& layout) {
  const Vec3 center = hips_center(landmarks, layout);
  LandmarkSet out;
  out.frame = LandmarkFrame::RootCentered;
  out.points.reserve(landmarks.points.size());
  for (const auto& p : landmarks.points) out.points.push_back(p - center);
  return out;
}

}  // namespace posekit
