#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "posekit/philox.hpp"
#include "posekit/rotation.hpp"
#include "posekit/sampling.hpp"
#include "support/finite_diff.hpp"

#include <cmath>

using namespace posekit;
using posekit::testing::central_diff;
using posekit::testing::rel_err;

namespace {

Vec6 make_r6(double a, double b, double c, double d, double e, double f) {
  Vec6 r;
  r << a, b, c, d, e, f;
  return r;
}

}  // namespace

TEST_CASE("rot6d identity decodes to identity matrix") {
  CHECK((rot6d_to_matrix(rot6d_identity()) - Mat3::Identity()).norm() == doctest::Approx(0.0));
}

TEST_CASE("rot6d decode is scale invariant") {
  const Mat3 R = rot6d_to_matrix(make_r6(2, 0, 0, 0, 3, 0));
  CHECK((R - Mat3::Identity()).norm() < 1e-15);
}

TEST_CASE("rot6d Gram-Schmidt on a skewed pair matches the hand computation") {
  const Mat3 R = rot6d_to_matrix(make_r6(1, 1, 0, 0, 1, 0));
  const double s = 1.0 / std::sqrt(2.0);
  Mat3 expected;
  expected.col(0) = Vec3(s, s, 0);
  expected.col(1) = Vec3(-s, s, 0);
  expected.col(2) = Vec3(0, 0, 1);
  CHECK((R - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rot6d decode always lands on SO(3)") {
  Philox rng(71);
  for (int trial = 0; trial < 200; ++trial) {
    Vec6 r;
    for (int i = 0; i < 6; ++i) r[i] = rng.normal();
    const Mat3 R = rot6d_to_matrix(r);
    CHECK((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("matrix_to_rot6d inverts the decode") {
  CHECK((matrix_to_rot6d(Mat3::Identity()) - rot6d_identity()).norm() < 1e-15);

  const Mat3 Rz = axis_angle_matrix(Vec3(0, 0, 1), M_PI / 2.0);
  const Vec6 expected = make_r6(0, 1, 0, -1, 0, 0);
  CHECK((matrix_to_rot6d(Rz) - expected).cwiseAbs().maxCoeff() < 1e-12);

  Philox rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const Mat3 R = sample_haar_so3(rng);
    const Mat3 back = rot6d_to_matrix(matrix_to_rot6d(R));
    CHECK((back - R).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("degenerate 6D inputs are rejected") {
  CHECK_THROWS_AS(rot6d_to_matrix(make_r6(0, 0, 0, 0, 1, 0)), DegenerateRotation);
  CHECK_THROWS_AS(rot6d_to_matrix(make_r6(1, 0, 0, 2, 0, 0)), DegenerateRotation);
  CHECK_THROWS_AS(rot6d_to_matrix(make_r6(1e-13, 0, 0, 0, 1, 0)), DegenerateRotation);
}

TEST_CASE("matrix_to_rot6d rejects non-rotations") {
  Mat3 scaled = 2.0 * Mat3::Identity();
  CHECK_THROWS_AS(matrix_to_rot6d(scaled), NotARotation);

  Mat3 reflection = Mat3::Identity();
  reflection(2, 2) = -1.0;
  CHECK_THROWS_AS(matrix_to_rot6d(reflection), NotARotation);
}

TEST_CASE("jvp matches finite differences") {
  Philox rng(34);
  for (int trial = 0; trial < 60; ++trial) {
    Vec6 r;
    for (int i = 0; i < 6; ++i) r[i] = rng.normal();
    Vec6 dr;
    for (int i = 0; i < 6; ++i) dr[i] = rng.normal();

    const Mat3 analytic = rot6d_to_matrix_jvp(r, dr);
    const double h = 1e-6;
    const Mat3 numeric =
        (rot6d_to_matrix(r + h * dr) - rot6d_to_matrix(r - h * dr)) / (2.0 * h);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        CHECK(rel_err(analytic(i, j), numeric(i, j)) < 1e-5);
      }
    }
  }
}

TEST_CASE("vjp is the adjoint of jvp and matches finite differences") {
  Philox rng(35);
  for (int trial = 0; trial < 60; ++trial) {
    Vec6 r;
    for (int i = 0; i < 6; ++i) r[i] = rng.normal();
    Vec6 dr;
    for (int i = 0; i < 6; ++i) dr[i] = rng.normal();
    Mat3 dR;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) dR(i, j) = rng.normal();
    }

    // <dR, jvp(r, dr)> == <vjp(r, dR), dr>
    const double lhs = (dR.array() * rot6d_to_matrix_jvp(r, dr).array()).sum();
    const double rhs = rot6d_to_matrix_vjp(r, dR).dot(dr);
    CHECK(rel_err(lhs, rhs) < 1e-10);

    // vjp against central differences of the scalar <dR, R(r)>.
    const Vec6 g = rot6d_to_matrix_vjp(r, dR);
    for (int i = 0; i < 6; ++i) {
      const double numeric = central_diff(
          [&] { return (dR.array() * rot6d_to_matrix(r).array()).sum(); }, r[i]);
      CHECK(rel_err(g[i], numeric) < 1e-5);
    }
  }
}

TEST_CASE("geodesic angle examples") {
  const Mat3 I = Mat3::Identity();
  CHECK(geodesic_angle(I, I) == doctest::Approx(0.0));
  CHECK(geodesic_angle(I, axis_angle_matrix(Vec3(0, 0, 1), M_PI / 2.0)) ==
        doctest::Approx(M_PI / 2.0));
  CHECK(geodesic_angle(I, axis_angle_matrix(Vec3(1, 0, 0), M_PI)) == doctest::Approx(M_PI));
  CHECK(geodesic_angle(axis_angle_matrix(Vec3(0, 1, 0), 0.3),
                       axis_angle_matrix(Vec3(0, 1, 0), 0.7)) == doctest::Approx(0.4));
}

TEST_CASE("geodesic angle is symmetric and bi-invariant") {
  Philox rng(36);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat3 a = sample_haar_so3(rng);
    const Mat3 b = sample_haar_so3(rng);
    const Mat3 q = sample_haar_so3(rng);
    const double ang = geodesic_angle(a, b);
    CHECK(geodesic_angle(b, a) == doctest::Approx(ang).epsilon(1e-12));
    CHECK(geodesic_angle(q * a, q * b) == doctest::Approx(ang).epsilon(1e-9));
    CHECK(ang >= 0.0);
    CHECK(ang <= M_PI);
  }
}

TEST_CASE("geodesic squared gradient matches finite differences") {
  Philox rng(37);
  int done = 0;
  while (done < 60) {
    Mat3 a = sample_haar_so3(rng);
    const Mat3 b = sample_haar_so3(rng);
    const double ang = geodesic_angle(a, b);
    // arccos is not differentiable at the clamp endpoints; keep clear of them.
    if (ang < 0.2 || ang > M_PI - 0.2) continue;
    ++done;

    const Mat3 g = geodesic_sq_grad(a, b);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double numeric = central_diff(
            [&] {
              const double v = geodesic_angle(a, b);
              return v * v;
            },
            a(i, j));
        CHECK(rel_err(g(i, j), numeric) < 1e-5);
      }
    }
  }
}

TEST_CASE("geodesic gradient is finite at coincident rotations") {
  const Mat3 R = axis_angle_matrix(Vec3(1, 2, 3), 0.8);
  const Mat3 g = geodesic_sq_grad(R, R);
  CHECK(g.allFinite());
  // At angle 0 the gradient of angle^2 is -b (ratio -> 1).
  CHECK((g + R).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("axis_angle_matrix basic rotations") {
  const Mat3 Rz = axis_angle_matrix(Vec3(0, 0, 1), M_PI / 2.0);
  CHECK((Rz * Vec3(1, 0, 0) - Vec3(0, 1, 0)).norm() < 1e-12);
  const Mat3 Rx = axis_angle_matrix(Vec3(2, 0, 0), M_PI);  // non-unit axis is normalized
  CHECK((Rx * Vec3(0, 1, 0) - Vec3(0, -1, 0)).norm() < 1e-12);
}
