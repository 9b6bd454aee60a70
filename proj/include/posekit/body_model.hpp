#pragma once

#include "posekit/common.hpp"
#include "posekit/rotation.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace posekit {

// One (joint index, weight) entry of a vertex's skinning list.
struct SkinWeight {
  int joint = 0;
  double weight = 0.0;
};

// One (vertex index, weight) entry of a landmark regressor column.
struct RegressorWeight {
  int vertex = 0;
  double weight = 0.0;
};

// Landmark ordering: body block first, then left hand, then right hand.
struct LandmarkLayout {
  int body = 33;
  int left_hand = 21;
  int right_hand = 21;
  int left_hip = 23;   // body-block index of the left hip landmark
  int right_hip = 24;

  int total() const { return body + left_hand + right_hand; }
};

// Parametric articulated body. rest_* data is in meters; `parent` is
// topologically ordered (parent[j] < j, root sentinel -1). The pose decoder
// maps the pose latent to one 6D rotation per joint:
//   rot6d_j(theta) = identity6 + decoder[j] * theta
// so theta = 0 decodes to the identity at every joint.
struct KinematicModel {
  int joint_count = 0;
  std::vector<int> parent;
  std::vector<std::string> joint_names;
  std::vector<Vec3> rest_joints;
  std::vector<Vec3> rest_vertices;
  std::vector<std::vector<SkinWeight>> skin_weights;   // per vertex, <= 4 entries
  MatX shape_basis;                                    // (3*N_v) x D_beta, xyz-interleaved
  std::vector<std::vector<RegressorWeight>> landmark_regressor;  // per landmark, convex
  LandmarkLayout layout;
  std::vector<MatX> pose_decoder;                      // per joint, 6 x D_theta
  std::vector<std::array<int, 3>> triangles;

  int vertex_count() const { return static_cast<int>(rest_vertices.size()); }
  int landmark_count() const { return layout.total(); }
  int beta_dim() const { return static_cast<int>(shape_basis.cols()); }
  int theta_dim() const {
    return pose_decoder.empty() ? 0 : static_cast<int>(pose_decoder[0].cols());
  }
  int state_dim() const { return 6 + 3 + beta_dim() + theta_dim(); }

  // Throws Error with a description of the first violated structural invariant.
  void validate() const;
};

// Generative code for one body instance.
struct PoseState {
  Vec6 r = rot6d_identity();  // root rotation, 6D representation
  Vec3 t = Vec3::Zero();      // root translation, meters
  VecX beta;                  // shape latent
  VecX theta;                 // pose latent

  static PoseState zero(const KinematicModel& model) {
    PoseState s;
    s.beta = VecX::Zero(model.beta_dim());
    s.theta = VecX::Zero(model.theta_dim());
    return s;
  }

  // Packs as (r, t, beta, theta); the order every flat view of the state uses.
  VecX flatten() const;
  static PoseState unflatten(const KinematicModel& model, const VecX& x);
};

enum class LandmarkFrame { World, RootCentered };

struct LandmarkSet {
  std::vector<Vec3> points;
  LandmarkFrame frame = LandmarkFrame::World;
};

struct MeshVertices {
  std::vector<Vec3> vertices;
};

// --- Operations ---------------------------------------------------------

std::vector<Mat3> decode_pose(const KinematicModel& model, const VecX& theta);

// World transform per joint. Each local rotation acts about its joint's rest
// position; the root composes with (rot6d_to_matrix(r), t) on top.
std::vector<RigidTransform> forward_kinematics(const KinematicModel& model,
                                               const std::vector<Mat3>& joint_rotations,
                                               const Vec6& r, const Vec3& t);

std::vector<Vec3> joint_positions(const KinematicModel& model,
                                  const std::vector<RigidTransform>& world);

// Linear blend skinning of the shaped rest vertices (rest + shape_basis * beta).
MeshVertices skin_vertices(const KinematicModel& model, const PoseState& state);

// X = W^T V; every landmark is a convex combination of vertices.
LandmarkSet regress_landmarks(const KinematicModel& model, const MeshVertices& v);

// Subtracts the midpoint of the two hip landmarks.
LandmarkSet center_at_hips(const LandmarkSet& landmarks, const LandmarkLayout& layout);

Vec3 hips_center(const LandmarkSet& landmarks, const LandmarkLayout& layout);

// --- Landmark evaluator -------------------------------------------------

// Precomputes, per (landmark, joint) pair, the combined skinning/regression
// weights so landmarks and their derivatives never loop over vertices:
//   X_s = sum_j A_j (u0_sj + U_sj beta) + c_sj b_j
// with (A_j, b_j) the world transforms. Algebraically identical to
// regress_landmarks(skin_vertices(...)).
class LandmarkEvaluator {
 public:
  explicit LandmarkEvaluator(const KinematicModel& model);

  const KinematicModel& model() const { return *model_; }

  // World-frame landmarks.
  std::vector<Vec3> landmarks(const PoseState& state) const;

  // Dense Jacobian of the stacked landmarks w.r.t. (r, t, beta, theta).
  // Rows ordered landmark-major (x, y, z per landmark); columns follow
  // PoseState::flatten.
  MatX jacobian(const PoseState& state) const;

  // Reverse-mode: maps a gradient w.r.t. the landmarks to a gradient w.r.t.
  // the flattened state. One pass, used by the trainer and the fitter.
  VecX pullback(const PoseState& state, const std::vector<Vec3>& dl_dx) const;

 private:
  struct Term {
    int joint = 0;
    double c = 0.0;   // combined convex weight
    Vec3 u0;          // combined weighted rest position
    MatX u_beta;      // 3 x D_beta, combined shape response
  };

  struct Forward {
    std::vector<Mat3> local_rot;          // per joint
    std::vector<RigidTransform> world;    // per joint
    Mat3 root_rot;
    std::vector<Vec6> rot6d;              // per joint, decoder output
  };

  Forward run_forward(const PoseState& state) const;

  const KinematicModel* model_;
  std::vector<std::vector<Term>> terms_;  // per landmark
};

// --- Toy model ----------------------------------------------------------

struct ToyModelConfig {
  std::uint64_t seed = 2024;
  int vertex_count = 600;   // rounded down to a multiple of the ring size
  int beta_dim = 8;
  int theta_dim = 32;
  // Typical per-joint rotation magnitude (rad) at unit latent std. Keeps the
  // decoder well clear of Gram-Schmidt degeneracy for bounded theta.
  double articulation = 0.2;
  // Overall figure size as a fraction of the human-proportioned source
  // dimensions; the default is a figurine roughly 0.3 m tall.
  double scale = 0.2;
};

// Deterministic desk-scale stand-in: 20 joints (16 body + 2 stubs per hand),
// tube-mesh vertices around the bones, procedural shape basis and a frozen
// Gaussian pose decoder. Any file with the same schema can replace it.
KinematicModel make_toy_model(const ToyModelConfig& config = {});

}  // namespace posekit
