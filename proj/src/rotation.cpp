#include "posekit/rotation.hpp"

#include <cmath>

namespace posekit {

namespace {
constexpr double kDegenerateNorm = 1e-12;
}

Mat3 rot6d_to_matrix(const Vec6& r) {
  const Vec3 a1 = r.head<3>();
  const Vec3 a2 = r.tail<3>();

  const double n1 = a1.norm();
  if (n1 <= kDegenerateNorm) {
    throw DegenerateRotation("rot6d: first column vector has near-zero norm");
  }
  const Vec3 b1 = a1 / n1;

  const Vec3 u2 = a2 - b1.dot(a2) * b1;
  const double n2 = u2.norm();
  if (n2 <= kDegenerateNorm) {
    throw DegenerateRotation("rot6d: second column vector is parallel to the first");
  }
  const Vec3 b2 = u2 / n2;

  Mat3 R;
  R.col(0) = b1;
  R.col(1) = b2;
  R.col(2) = b1.cross(b2);
  return R;
}

Vec6 matrix_to_rot6d(const Mat3& R) {
  const Mat3 err = R.transpose() * R - Mat3::Identity();
  if (err.cwiseAbs().maxCoeff() > 1e-6 || std::abs(R.determinant() - 1.0) > 1e-6) {
    throw NotARotation("matrix_to_rot6d: input is not a proper rotation");
  }
  Vec6 r;
  r.head<3>() = R.col(0);
  r.tail<3>() = R.col(1);
  return r;
}

Mat3 rot6d_to_matrix_jvp(const Vec6& r, const Vec6& dr) {
  const Vec3 a1 = r.head<3>();
  const Vec3 a2 = r.tail<3>();
  const Vec3 da1 = dr.head<3>();
  const Vec3 da2 = dr.tail<3>();

  const double n1 = a1.norm();
  const Vec3 b1 = a1 / n1;
  const Vec3 db1 = (da1 - b1.dot(da1) * b1) / n1;

  const double s = b1.dot(a2);
  const Vec3 u2 = a2 - s * b1;
  const double n2 = u2.norm();
  const Vec3 b2 = u2 / n2;

  const double ds = db1.dot(a2) + b1.dot(da2);
  const Vec3 du2 = da2 - ds * b1 - s * db1;
  const Vec3 db2 = (du2 - b2.dot(du2) * b2) / n2;

  Mat3 dR;
  dR.col(0) = db1;
  dR.col(1) = db2;
  dR.col(2) = db1.cross(b2) + b1.cross(db2);
  return dR;
}

Vec6 rot6d_to_matrix_vjp(const Vec6& r, const Mat3& dR) {
  const Vec3 a1 = r.head<3>();
  const Vec3 a2 = r.tail<3>();

  const double n1 = a1.norm();
  const Vec3 b1 = a1 / n1;
  const double s = b1.dot(a2);
  const Vec3 u2 = a2 - s * b1;
  const double n2 = u2.norm();
  const Vec3 b2 = u2 / n2;

  // Adjoint of b3 = b1 x b2.
  const Vec3 v3 = dR.col(2);
  Vec3 gb1 = dR.col(0) + b2.cross(v3);
  Vec3 gb2 = dR.col(1) + v3.cross(b1);

  // Adjoint of the normalization b2 = u2 / |u2| (projector is symmetric).
  const Vec3 gu2 = (gb2 - b2.dot(gb2) * b2) / n2;

  // Adjoint of u2 = a2 - (b1.a2) b1.
  Vec3 ga2 = gu2 - gu2.dot(b1) * b1;
  gb1 += -gu2.dot(b1) * a2 - s * gu2;

  const Vec3 ga1 = (gb1 - b1.dot(gb1) * b1) / n1;

  Vec6 g;
  g.head<3>() = ga1;
  g.tail<3>() = ga2;
  return g;
}

double geodesic_angle(const Mat3& a, const Mat3& b) {
  const double tr = (a.transpose() * b).trace();
  const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

Mat3 geodesic_sq_grad(const Mat3& a, const Mat3& b) {
  const double tr = (a.transpose() * b).trace();
  const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  const double angle = std::acos(c);
  // d(angle^2)/da = 2*angle * dacos(c)/dc * dc/da, with dc/da = b/2.
  // angle/sin(angle) -> 1 as angle -> 0; guard both endpoints of the clamp.
  const double sin_angle = std::sqrt(std::max(1.0 - c * c, 0.0));
  double ratio;
  if (sin_angle < 1e-9) {
    ratio = (c > 0.0) ? 1.0 : angle / 1e-9;
  } else {
    ratio = angle / sin_angle;
  }
  return -ratio * b;
}

Mat3 axis_angle_matrix(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

}  // namespace posekit
