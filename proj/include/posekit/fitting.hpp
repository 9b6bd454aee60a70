#pragma once

#include "posekit/body_model.hpp"
#include "posekit/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace posekit {

inline constexpr double kHuberDeltaPx = 5.0;

// Pinhole intrinsics; the world frame doubles as the camera frame (camera at
// the origin looking down +z).
struct Camera {
  double fx = 1000.0;
  double fy = 1000.0;
  double cx = 500.0;
  double cy = 500.0;

  void validate() const;
};

// u = fx x/z + cx, v = fy y/z + cy. Throws BehindCamera when z <= 1e-6 m.
Vec2 project(const Camera& camera, const Vec3& point);

// One 2D keypoint; confidence 0 marks the landmark unobserved.
struct Observation2D {
  Vec2 uv = Vec2::Zero();
  double confidence = 0.0;
};

// A skeleton edge by its two landmark indices; a == b references a joint
// (an edge of length zero).
struct EdgeRef {
  int a = 0;
  int b = 0;
};

enum class OrdinalRelation { ACloser, BCloser };

struct OrdinalConstraint {
  EdgeRef subject;
  EdgeRef object;
  OrdinalRelation relation = OrdinalRelation::ACloser;
};

struct FitWeights {
  double w_2d = 1.0;
  double w_ord = 1.0;
  double w_reg_beta = 1e-3;
  double w_reg_theta = 1e-3;
};

struct FitProblem {
  Camera camera;
  std::vector<Observation2D> observations;  // one per landmark
  std::vector<OrdinalConstraint> constraints;
  FitWeights weights;
  int iterations = 400;
  double step_size = 0.03;
  std::uint64_t seed = 0;
  int restarts = 3;
  double tau = 0.05;        // ordinal softplus temperature, meters
  double init_depth = 0.8;  // default starting distance from the camera, meters

  // Optional known generating state, carried for end-to-end checks.
  bool has_truth = false;
  Vec6 truth_r = rot6d_identity();
  Vec3 truth_t = Vec3::Zero();
  VecX truth_beta;
  VecX truth_theta;

  PoseState truth_state() const;
  int observed_count() const;
  void validate(int landmark_count) const;
};

// Mean over observed landmarks of confidence-weighted Huber (delta = 5 px)
// reprojection residuals. Optionally returns the gradient w.r.t. the
// flattened state.
double reprojection_loss(const FitProblem& problem, const LandmarkEvaluator& evaluator,
                         const PoseState& state, VecX* grad = nullptr);

// z coordinate per landmark.
std::vector<double> landmark_depths(const std::vector<Vec3>& landmarks);

// Representative depth of an edge: the mean of its endpoint depths.
double edge_depth(const EdgeRef& edge, const std::vector<double>& depths);

// Sum over constraints of softplus(signed depth gap / tau). d_depths, when
// given, receives the gradient w.r.t. each landmark depth.
double ordinal_loss(const std::vector<OrdinalConstraint>& constraints,
                    const std::vector<double>& depths, double tau,
                    std::vector<double>* d_depths = nullptr);

// Fraction of constraints whose depths violate the annotated relation; ties
// count as violations. Throws EmptyConstraints on an empty list.
double depth_order_error(const std::vector<OrdinalConstraint>& constraints,
                         const std::vector<double>& depths);

struct LossBreakdown {
  double total = 0.0;
  double reprojection = 0.0;
  double ordinal = 0.0;
  double reg_beta = 0.0;
  double reg_theta = 0.0;
  VecX grad;  // w.r.t. the flattened state, all weights applied
};

// Full fitting objective:
//   w_2d reprojection + w_ord ordinal + w_reg_beta |beta|^2 + w_reg_theta |theta|^2.
LossBreakdown fit_loss(const LandmarkEvaluator& evaluator, const FitProblem& problem,
                       const PoseState& state);

struct FitReport {
  PoseState state;
  double total = 0.0;
  double reprojection = 0.0;
  double ordinal = 0.0;
  double reg_beta = 0.0;
  double reg_theta = 0.0;
  bool has_constraints = false;
  double depth_error_before = 0.0;  // meaningful only when has_constraints
  double depth_error_after = 0.0;
  std::vector<double> restart_losses;
  int best_restart = 0;
  // Filled by callers that know the generating state (problems with a truth
  // block); both are MPJPE of fitted vs true landmarks.
  bool has_truth_error = false;
  double truth_mpjpe_mm = 0.0;
  double truth_mpjpe_root_centered_mm = 0.0;
};

// Adam descent over (r, t, beta, theta) with multi-restart; keeps the best
// state seen across all restarts and iterations. Restart 0 starts from
// `init` when given, else from the identity pose at init_depth; later
// restarts perturb the base (fresh uniform root rotations when uninitialized).
FitReport fit(const LandmarkEvaluator& evaluator, const FitProblem& problem,
              const PoseState* init = nullptr);

// MPJPE between the landmarks decoded from two states, in millimeters.
double state_mpjpe_mm(const LandmarkEvaluator& evaluator, const PoseState& a, const PoseState& b,
                      bool root_centered);

// JSON round trip of problems and reports.
void save_fit_problem(const FitProblem& problem, const std::string& path);
FitProblem load_fit_problem(const std::string& path);
void save_fit_report(const FitReport& report, const std::string& path);

}  // namespace posekit
