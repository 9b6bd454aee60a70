#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace posekit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Rotation + translation, applied as x -> rot * x + trans.
struct RigidTransform {
  Mat3 rot = Mat3::Identity();
  Vec3 trans = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return rot * x + trans; }
};

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateRotation : Error { using Error::Error; };
struct NotARotation : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct StaleCache : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct DivergedError : Error { using Error::Error; };
struct BehindCamera : Error { using Error::Error; };
struct InsufficientObservations : Error { using Error::Error; };
struct EmptyConstraints : Error { using Error::Error; };
struct LayoutMismatch : Error { using Error::Error; };
struct DegenerateConfiguration : Error { using Error::Error; };
struct ZeroHandSize : Error { using Error::Error; };
struct DegenerateAxis : Error { using Error::Error; };

// FNV-1a, used to tie datasets to the model file they were generated from.
inline std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace posekit
