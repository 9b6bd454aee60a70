#include "posekit/body_model.hpp"
#include "posekit/philox.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace posekit {

namespace {

constexpr int kRingSize = 6;

struct JointSpec {
  const char* name;
  int parent;
  double x, y, z;
  double radius;  // tube radius of the bone ending at this joint
};

// 16 body joints + 2 stubs per hand, T-pose, y up, left = +x, meters.
constexpr JointSpec kJoints[] = {
    {"pelvis", -1, 0.00, 0.00, 0.0, 0.0},
    {"spine", 0, 0.00, 0.15, 0.0, 0.10},
    {"chest", 1, 0.00, 0.30, 0.0, 0.10},
    {"head", 2, 0.00, 0.55, 0.0, 0.07},
    {"l_shoulder", 2, 0.20, 0.42, 0.0, 0.06},
    {"l_elbow", 4, 0.45, 0.42, 0.0, 0.045},
    {"l_wrist", 5, 0.70, 0.42, 0.0, 0.04},
    {"r_shoulder", 2, -0.20, 0.42, 0.0, 0.06},
    {"r_elbow", 7, -0.45, 0.42, 0.0, 0.045},
    {"r_wrist", 8, -0.70, 0.42, 0.0, 0.04},
    {"l_hip", 0, 0.10, -0.05, 0.0, 0.07},
    {"l_knee", 10, 0.10, -0.50, 0.0, 0.07},
    {"l_ankle", 11, 0.10, -0.90, 0.0, 0.05},
    {"r_hip", 0, -0.10, -0.05, 0.0, 0.07},
    {"r_knee", 13, -0.10, -0.50, 0.0, 0.07},
    {"r_ankle", 14, -0.10, -0.90, 0.0, 0.05},
    {"l_hand_mid", 6, 0.78, 0.42, 0.0, 0.022},
    {"l_hand_tip", 16, 0.86, 0.42, 0.0, 0.022},
    {"r_hand_mid", 9, -0.78, 0.42, 0.0, 0.022},
    {"r_hand_tip", 18, -0.86, 0.42, 0.0, 0.022},
};
constexpr int kJointCount = static_cast<int>(std::size(kJoints));

double smoothstep01(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

// Target points the landmark regressor columns are anchored to.
std::vector<Vec3> landmark_targets() {
  std::vector<Vec3> pts;
  pts.reserve(75);

  // 33-point body block (BlazePose-style ordering; 23/24 are the hips).
  const double face_y = 0.63;
  pts.push_back({0.000, 0.60, 0.070});    // 0 nose
  pts.push_back({0.015, face_y, 0.060});  // 1 left eye inner
  pts.push_back({0.030, face_y, 0.055});  // 2 left eye
  pts.push_back({0.045, face_y, 0.050});  // 3 left eye outer
  pts.push_back({-0.015, face_y, 0.060}); // 4 right eye inner
  pts.push_back({-0.030, face_y, 0.055}); // 5 right eye
  pts.push_back({-0.045, face_y, 0.050}); // 6 right eye outer
  pts.push_back({0.070, 0.60, 0.000});    // 7 left ear
  pts.push_back({-0.070, 0.60, 0.000});   // 8 right ear
  pts.push_back({0.020, 0.56, 0.065});    // 9 mouth left
  pts.push_back({-0.020, 0.56, 0.065});   // 10 mouth right
  pts.push_back({0.20, 0.42, 0.0});   // 11 left shoulder
  pts.push_back({-0.20, 0.42, 0.0});  // 12 right shoulder
  pts.push_back({0.45, 0.42, 0.0});   // 13 left elbow
  pts.push_back({-0.45, 0.42, 0.0});  // 14 right elbow
  pts.push_back({0.70, 0.42, 0.0});   // 15 left wrist
  pts.push_back({-0.70, 0.42, 0.0});  // 16 right wrist
  pts.push_back({0.80, 0.40, -0.02}); // 17 left pinky knuckle
  pts.push_back({-0.80, 0.40, -0.02});// 18 right pinky knuckle
  pts.push_back({0.82, 0.43, 0.01});  // 19 left index knuckle
  pts.push_back({-0.82, 0.43, 0.01}); // 20 right index knuckle
  pts.push_back({0.75, 0.40, 0.03});  // 21 left thumb
  pts.push_back({-0.75, 0.40, 0.03}); // 22 right thumb
  pts.push_back({0.10, -0.05, 0.0});  // 23 left hip
  pts.push_back({-0.10, -0.05, 0.0}); // 24 right hip
  pts.push_back({0.10, -0.50, 0.0});  // 25 left knee
  pts.push_back({-0.10, -0.50, 0.0}); // 26 right knee
  pts.push_back({0.10, -0.90, 0.0});  // 27 left ankle
  pts.push_back({-0.10, -0.90, 0.0}); // 28 right ankle
  pts.push_back({0.10, -0.95, -0.04});// 29 left heel
  pts.push_back({-0.10, -0.95, -0.04});// 30 right heel
  pts.push_back({0.10, -0.95, 0.10}); // 31 left foot index
  pts.push_back({-0.10, -0.95, 0.10});// 32 right foot index

  // 21-point hand blocks: wrist, then thumb/index/middle/ring/pinky with 4
  // points each, fanned in z off the hand stub axis.
  const double finger_len[5] = {0.70, 0.95, 1.00, 0.93, 0.80};
  const double finger_z[5] = {0.035, 0.016, 0.0, -0.016, -0.032};
  for (const double side : {1.0, -1.0}) {
    const Vec3 wrist(side * 0.70, 0.42, 0.0);
    const double reach = 0.16;  // wrist to middle fingertip along the stub
    pts.push_back(wrist);
    for (int f = 0; f < 5; ++f) {
      for (int k = 1; k <= 4; ++k) {
        const double frac = 0.3 + 0.1667 * k;  // ~0.47 .. 0.97
        pts.push_back({side * (0.70 + frac * reach * finger_len[f]),
                       0.42 - 0.004 * k, finger_z[f]});
      }
    }
  }
  return pts;
}

}  // namespace

KinematicModel make_toy_model(const ToyModelConfig& config) {
  if (!(config.articulation > 0.0)) throw Error("toy model: articulation must be positive");
  if (!(config.scale > 0.0)) throw Error("toy model: scale must be positive");
  KinematicModel m;
  m.joint_count = kJointCount;
  for (const auto& js : kJoints) {
    m.parent.push_back(js.parent);
    m.joint_names.emplace_back(js.name);
    m.rest_joints.emplace_back(js.x, js.y, js.z);
  }

  // Ring allocation: >= 2 rings per bone, remainder by bone length.
  const int total_rings = std::max(2 * (kJointCount - 1), config.vertex_count / kRingSize);
  std::vector<double> bone_len(kJointCount, 0.0);
  double len_sum = 0.0;
  for (int j = 1; j < kJointCount; ++j) {
    bone_len[j] = (m.rest_joints[j] - m.rest_joints[m.parent[j]]).norm();
    len_sum += bone_len[j];
  }
  std::vector<int> rings(kJointCount, 0);
  int assigned = 0;
  std::vector<std::pair<double, int>> remainders;
  const int spare = total_rings - 2 * (kJointCount - 1);
  for (int j = 1; j < kJointCount; ++j) {
    const double share = spare * bone_len[j] / len_sum;
    rings[j] = 2 + static_cast<int>(share);
    assigned += rings[j];
    remainders.emplace_back(share - std::floor(share), j);
  }
  std::sort(remainders.begin(), remainders.end(),
            [](const auto& a, const auto& b) {
              return a.first != b.first ? a.first > b.first : a.second < b.second;
            });
  for (int i = 0; assigned < total_rings; ++i, ++assigned) {
    rings[remainders[i % remainders.size()].second]++;
  }

  Philox geom_rng(config.seed, 1);
  struct VertexInfo {
    int bone;      // child joint of the bone
    double s;      // 0 at parent joint, 1 at child joint
    Vec3 radial;   // unit offset direction from the ring center
    Vec3 axial;    // unit bone direction
  };
  std::vector<VertexInfo> info;

  for (int j = 1; j < kJointCount; ++j) {
    const Vec3 p0 = m.rest_joints[m.parent[j]];
    const Vec3 p1 = m.rest_joints[j];
    const Vec3 d = (p1 - p0).normalized();
    const Vec3 a = std::abs(d.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 e1 = d.cross(a).normalized();
    const Vec3 e2 = d.cross(e1);
    const int k = rings[j];
    const int base = static_cast<int>(m.rest_vertices.size());
    for (int i = 0; i < k; ++i) {
      const double s = k == 1 ? 0.0 : static_cast<double>(i) / (k - 1);
      const Vec3 center = p0 + s * (p1 - p0);
      for (int v = 0; v < kRingSize; ++v) {
        const double phi = 2.0 * M_PI * v / kRingSize;
        const double jitter = 1.0 + 0.2 * (geom_rng.uniform01() - 0.5);
        const Vec3 radial = std::cos(phi) * e1 + std::sin(phi) * e2;
        m.rest_vertices.push_back(center + kJoints[j].radius * jitter * radial);
        info.push_back({j, s, radial, d});

        // Ring of the bend: blend from the bone's parent joint toward the
        // child joint near the far end.
        const double wc = 0.5 * smoothstep01((s - 0.6) / 0.4);
        std::vector<SkinWeight> w;
        if (wc > 0.0) {
          w.push_back({m.parent[j], 1.0 - wc});
          w.push_back({j, wc});
        } else {
          w.push_back({m.parent[j], 1.0});
        }
        m.skin_weights.push_back(std::move(w));
      }
    }
    // Tube triangles between consecutive rings.
    for (int i = 0; i + 1 < k; ++i) {
      for (int v = 0; v < kRingSize; ++v) {
        const int a0 = base + kRingSize * i + v;
        const int a1 = base + kRingSize * i + (v + 1) % kRingSize;
        const int b0 = a0 + kRingSize;
        const int b1 = a1 + kRingSize;
        m.triangles.push_back({a0, a1, b0});
        m.triangles.push_back({a1, b1, b0});
      }
    }
  }

  const int n_verts = m.vertex_count();

  // Shape basis: a few structured deformation fields plus seeded smooth
  // sinusoidal fields, a couple of centimeters per unit of beta.
  Philox shape_rng(config.seed, 2);
  m.shape_basis = MatX::Zero(3 * n_verts, config.beta_dim);
  for (int k = 0; k < config.beta_dim; ++k) {
    Vec3 dir = Vec3::Zero();
    double amp = 0.0, omega = 0.0, phase = 0.0;
    Vec3 wave = Vec3::Zero();
    if (k >= 3) {
      amp = 0.02;
      omega = shape_rng.uniform(2.0, 6.0);
      phase = shape_rng.uniform(0.0, 2.0 * M_PI);
      dir = Vec3(shape_rng.normal(), shape_rng.normal(), shape_rng.normal()).normalized();
      wave = Vec3(shape_rng.normal(), shape_rng.normal(), shape_rng.normal()).normalized();
    }
    for (int v = 0; v < n_verts; ++v) {
      const Vec3& p = m.rest_vertices[v];
      Vec3 disp;
      switch (k) {
        case 0:  // girth
          disp = 0.03 * info[v].radial;
          break;
        case 1:  // height
          disp = Vec3(0.0, 0.05 * p.y(), 0.0);
          break;
        case 2:  // limb stretch along the bone
          disp = 0.04 * info[v].s * info[v].axial;
          break;
        default:
          disp = amp * std::sin(omega * wave.dot(p) + phase) * dir;
          break;
      }
      m.shape_basis.block<3, 1>(3 * v, k) = disp;
    }
  }

  // Landmark regressor: uniform average of the 8 rest vertices nearest each
  // target point.
  const auto targets = landmark_targets();
  const int k_nearest = std::min(8, n_verts);
  for (const Vec3& target : targets) {
    std::vector<std::pair<double, int>> dist;
    dist.reserve(n_verts);
    for (int v = 0; v < n_verts; ++v) {
      dist.emplace_back((m.rest_vertices[v] - target).squaredNorm(), v);
    }
    std::partial_sort(dist.begin(), dist.begin() + k_nearest, dist.end());
    std::vector<RegressorWeight> col;
    for (int i = 0; i < k_nearest; ++i) {
      col.push_back({dist[i].second, 1.0 / k_nearest});
    }
    std::sort(col.begin(), col.end(),
              [](const RegressorWeight& a, const RegressorWeight& b) { return a.vertex < b.vertex; });
    m.landmark_regressor.push_back(std::move(col));
  }

  // Frozen Gaussian pose decoder, scaled so sampled latents stay far from the
  // Gram-Schmidt degeneracy.
  const double decoder_std =
      config.articulation / std::sqrt(static_cast<double>(config.theta_dim));
  for (int j = 0; j < kJointCount; ++j) {
    Philox rng(config.seed, 1000 + static_cast<std::uint64_t>(j));
    MatX block(6, config.theta_dim);
    for (int row = 0; row < 6; ++row) {
      for (int col = 0; col < config.theta_dim; ++col) {
        block(row, col) = decoder_std * rng.normal();
      }
    }
    m.pose_decoder.push_back(std::move(block));
  }

  // Everything above is authored in human proportions for legibility; the
  // model itself is a desk figurine, so every length shrinks at the end.
  for (Vec3& p : m.rest_joints) p *= config.scale;
  for (Vec3& p : m.rest_vertices) p *= config.scale;
  m.shape_basis *= config.scale;

  m.validate();
  return m;
}

}  // namespace posekit
