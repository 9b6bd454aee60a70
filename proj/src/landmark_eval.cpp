#include "posekit/body_model.hpp"

#include <map>

namespace posekit {

LandmarkEvaluator::LandmarkEvaluator(const KinematicModel& model) : model_(&model) {
  const int d_beta = model.beta_dim();
  terms_.resize(model.landmark_count());
  for (int s = 0; s < model.landmark_count(); ++s) {
    std::map<int, Term> by_joint;
    for (const auto& rw : model.landmark_regressor[s]) {
      for (const auto& sw : model.skin_weights[rw.vertex]) {
        const double w = rw.weight * sw.weight;
        auto [it, inserted] = by_joint.try_emplace(sw.joint);
        Term& term = it->second;
        if (inserted) {
          term.joint = sw.joint;
          term.u0 = Vec3::Zero();
          term.u_beta = MatX::Zero(3, d_beta);
        }
        term.c += w;
        term.u0 += w * model.rest_vertices[rw.vertex];
        term.u_beta += w * model.shape_basis.block(3 * rw.vertex, 0, 3, d_beta);
      }
    }
    terms_[s].reserve(by_joint.size());
    for (auto& [joint, term] : by_joint) terms_[s].push_back(std::move(term));
  }
}

LandmarkEvaluator::Forward LandmarkEvaluator::run_forward(const PoseState& state) const {
  const KinematicModel& m = *model_;
  Forward f;
  f.rot6d.resize(m.joint_count);
  f.local_rot.resize(m.joint_count);
  for (int j = 0; j < m.joint_count; ++j) {
    f.rot6d[j] = rot6d_identity() + m.pose_decoder[j] * state.theta;
    f.local_rot[j] = rot6d_to_matrix(f.rot6d[j]);
  }
  f.root_rot = rot6d_to_matrix(state.r);
  f.world = forward_kinematics(m, f.local_rot, state.r, state.t);
  return f;
}

std::vector<Vec3> LandmarkEvaluator::landmarks(const PoseState& state) const {
  const Forward f = run_forward(state);
  std::vector<Vec3> out(model_->landmark_count());
  for (std::size_t s = 0; s < terms_.size(); ++s) {
    Vec3 p = Vec3::Zero();
    for (const auto& term : terms_[s]) {
      const RigidTransform& w = f.world[term.joint];
      const Vec3 y = term.u0 + term.u_beta * state.beta;
      p += w.rot * y + term.c * w.trans;
    }
    out[s] = p;
  }
  return out;
}

MatX LandmarkEvaluator::jacobian(const PoseState& state) const {
  const KinematicModel& m = *model_;
  const Forward f = run_forward(state);
  const int rows = 3 * m.landmark_count();
  MatX jac = MatX::Zero(rows, m.state_dim());

  std::vector<Mat3> d_rot(m.joint_count);
  std::vector<Vec3> d_trans(m.joint_count);

  // Forward-mode FK sweep. d_root is the derivative of the global rotation,
  // d_local[j] the derivative of joint j's local rotation; either may be null.
  const auto fk_sweep = [&](const Mat3* d_root, const std::vector<Mat3>* d_local) {
    for (int j = 0; j < m.joint_count; ++j) {
      const Mat3& local = f.local_rot[j];
      const Vec3 offset = m.rest_joints[j] - local * m.rest_joints[j];
      Mat3 dl = Mat3::Zero();
      Vec3 doff = Vec3::Zero();
      if (d_local != nullptr) {
        dl = (*d_local)[j];
        doff = -dl * m.rest_joints[j];
      }
      if (j == 0) {
        const Mat3 dr = d_root != nullptr ? *d_root : Mat3::Zero();
        d_rot[0] = dr * local + f.root_rot * dl;
        d_trans[0] = dr * offset + f.root_rot * doff;
      } else {
        const int p = m.parent[j];
        d_rot[j] = d_rot[p] * local + f.world[p].rot * dl;
        d_trans[j] = d_rot[p] * offset + f.world[p].rot * doff + d_trans[p];
      }
    }
  };

  const auto emit_column = [&](int col) {
    for (std::size_t s = 0; s < terms_.size(); ++s) {
      Vec3 dx = Vec3::Zero();
      for (const auto& term : terms_[s]) {
        const Vec3 y = term.u0 + term.u_beta * state.beta;
        dx += d_rot[term.joint] * y + term.c * d_trans[term.joint];
      }
      jac.block<3, 1>(3 * static_cast<int>(s), col) = dx;
    }
  };

  // r columns.
  for (int k = 0; k < 6; ++k) {
    Vec6 dr6 = Vec6::Zero();
    dr6[k] = 1.0;
    const Mat3 d_root = rot6d_to_matrix_jvp(state.r, dr6);
    fk_sweep(&d_root, nullptr);
    emit_column(k);
  }

  // t columns: landmarks are convex in the vertices, so translation passes
  // through as the identity.
  for (std::size_t s = 0; s < terms_.size(); ++s) {
    jac.block<3, 3>(3 * static_cast<int>(s), 6) = Mat3::Identity();
  }

  // beta columns.
  for (int k = 0; k < m.beta_dim(); ++k) {
    for (std::size_t s = 0; s < terms_.size(); ++s) {
      Vec3 dx = Vec3::Zero();
      for (const auto& term : terms_[s]) {
        dx += f.world[term.joint].rot * term.u_beta.col(k);
      }
      jac.block<3, 1>(3 * static_cast<int>(s), 9 + k) = dx;
    }
  }

  // theta columns.
  std::vector<Mat3> d_local(m.joint_count);
  for (int k = 0; k < m.theta_dim(); ++k) {
    for (int j = 0; j < m.joint_count; ++j) {
      d_local[j] = rot6d_to_matrix_jvp(f.rot6d[j], m.pose_decoder[j].col(k));
    }
    fk_sweep(nullptr, &d_local);
    emit_column(9 + m.beta_dim() + k);
  }

  return jac;
}

VecX LandmarkEvaluator::pullback(const PoseState& state, const std::vector<Vec3>& dl_dx) const {
  const KinematicModel& m = *model_;
  if (static_cast<int>(dl_dx.size()) != m.landmark_count()) {
    throw ShapeMismatch("pullback: one cotangent per landmark required");
  }
  const Forward f = run_forward(state);

  std::vector<Mat3> g_rot(m.joint_count, Mat3::Zero());
  std::vector<Vec3> g_trans(m.joint_count, Vec3::Zero());
  VecX g_beta = VecX::Zero(m.beta_dim());

  for (std::size_t s = 0; s < terms_.size(); ++s) {
    const Vec3& v = dl_dx[s];
    for (const auto& term : terms_[s]) {
      const Vec3 y = term.u0 + term.u_beta * state.beta;
      g_rot[term.joint] += v * y.transpose();
      g_trans[term.joint] += term.c * v;
      g_beta += term.u_beta.transpose() * (f.world[term.joint].rot.transpose() * v);
    }
  }

  // Reverse FK sweep: children first.
  std::vector<Mat3> g_local(m.joint_count, Mat3::Zero());
  Mat3 g_root = Mat3::Zero();
  Vec3 g_t = Vec3::Zero();
  for (int j = m.joint_count - 1; j >= 0; --j) {
    const Mat3& local = f.local_rot[j];
    const Vec3 offset = m.rest_joints[j] - local * m.rest_joints[j];
    const Mat3& parent_rot = (j == 0) ? f.root_rot : f.world[m.parent[j]].rot;

    // A_j = A_p * R_j and b_j = A_p * offset(R_j) + b_p, with
    // offset(R) = rest_j - R * rest_j.
    const Mat3& g_a = g_rot[j];
    const Vec3& g_b = g_trans[j];
    g_local[j] = parent_rot.transpose() * g_a -
                 (parent_rot.transpose() * g_b) * m.rest_joints[j].transpose();
    const Mat3 to_parent_rot = g_a * local.transpose() + g_b * offset.transpose();
    if (j == 0) {
      g_root += to_parent_rot;
      g_t += g_b;
    } else {
      g_rot[m.parent[j]] += to_parent_rot;
      g_trans[m.parent[j]] += g_b;
    }
  }

  VecX g_theta = VecX::Zero(m.theta_dim());
  for (int j = 0; j < m.joint_count; ++j) {
    const Vec6 g6 = rot6d_to_matrix_vjp(f.rot6d[j], g_local[j]);
    g_theta += m.pose_decoder[j].transpose() * g6;
  }
  const Vec6 g_r = rot6d_to_matrix_vjp(state.r, g_root);

  VecX grad(m.state_dim());
  grad.head<6>() = g_r;
  grad.segment<3>(6) = g_t;
  grad.segment(9, m.beta_dim()) = g_beta;
  grad.tail(m.theta_dim()) = g_theta;
  return grad;
}

}  // namespace posekit
