#pragma once

#include "posekit/common.hpp"

namespace posekit {

// 6D rotation representation: the first two columns of the rotation matrix,
// stacked column-first. Decoding runs Gram-Schmidt on the two 3-vectors and
// completes the frame with a cross product, so any pair of non-degenerate
// vectors maps to a proper rotation.

inline Vec6 rot6d_identity() {
  Vec6 r;
  r << 1, 0, 0, 0, 1, 0;
  return r;
}

// Throws DegenerateRotation if either normalization would divide by a norm <= 1e-12.
Mat3 rot6d_to_matrix(const Vec6& r);

// Inverse convention. Throws NotARotation unless R is orthogonal with det +1 (1e-6).
Vec6 matrix_to_rot6d(const Mat3& R);

// Directional derivative of rot6d_to_matrix at r along dr.
Mat3 rot6d_to_matrix_jvp(const Vec6& r, const Vec6& dr);

// Adjoint: maps a gradient w.r.t. the rotation matrix back to a gradient w.r.t. r.
Vec6 rot6d_to_matrix_vjp(const Vec6& r, const Mat3& dR);

// Geodesic angle between two rotations, in [0, pi].
double geodesic_angle(const Mat3& a, const Mat3& b);

// Gradient of geodesic_angle(a, b)^2 w.r.t. the entries of a (b held fixed).
Mat3 geodesic_sq_grad(const Mat3& a, const Mat3& b);

Mat3 axis_angle_matrix(const Vec3& axis, double angle);

}  // namespace posekit
