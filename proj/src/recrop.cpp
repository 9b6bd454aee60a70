#include "posekit/recrop.hpp"

#include <algorithm>
#include <cmath>

namespace posekit {

namespace {

Mat2 rot2(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Mat2 m;
  m << c, -s, s, c;
  return m;
}

double polygon_area(const std::vector<Vec2>& poly) {
  double twice = 0.0;
  const int n = static_cast<int>(poly.size());
  for (int i = 0; i < n; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % n];
    twice += a.x() * b.y() - a.y() * b.x();
  }
  return 0.5 * std::abs(twice);
}

// Clips `subject` against the half-plane left of the directed edge a->b.
std::vector<Vec2> clip_edge(const std::vector<Vec2>& subject, const Vec2& a, const Vec2& b) {
  std::vector<Vec2> out;
  const Vec2 edge = b - a;
  const int n = static_cast<int>(subject.size());
  auto side = [&](const Vec2& p) { return edge.x() * (p.y() - a.y()) - edge.y() * (p.x() - a.x()); };
  for (int i = 0; i < n; ++i) {
    const Vec2& cur = subject[i];
    const Vec2& nxt = subject[(i + 1) % n];
    const double sc = side(cur);
    const double sn = side(nxt);
    if (sc >= 0.0) out.push_back(cur);
    if ((sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0)) {
      const double t = sc / (sc - sn);
      out.push_back(cur + t * (nxt - cur));
    }
  }
  return out;
}

}  // namespace

std::array<Vec2, 4> OrientedCrop::corners() const {
  const Mat2 rot = rot2(angle);
  const double h = 0.5 * side;
  // Counter-clockwise in the crop's local frame.
  const std::array<Vec2, 4> local = {Vec2(-h, -h), Vec2(h, -h), Vec2(h, h), Vec2(-h, h)};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i) out[i] = center + rot * local[i];
  return out;
}

Vec2 SimilarityTransform2D::apply(const Vec2& p) const {
  return scale * (rot2(angle) * p) + translation;
}

SimilarityTransform2D SimilarityTransform2D::inverse() const {
  SimilarityTransform2D inv;
  inv.scale = 1.0 / scale;
  inv.angle = -angle;
  inv.translation = -(inv.scale * (rot2(inv.angle) * translation));
  return inv;
}

OrientedCrop crop_from_landmarks(const std::vector<Vec2>& points, int axis_a, int axis_b,
                                 double scale_factor) {
  if (points.size() < 2) throw ShapeMismatch("crop_from_landmarks: need at least 2 points");
  if (axis_a < 0 || axis_b < 0 || axis_a >= static_cast<int>(points.size()) ||
      axis_b >= static_cast<int>(points.size())) {
    throw ShapeMismatch("crop_from_landmarks: axis index out of range");
  }
  const Vec2 axis = points[axis_b] - points[axis_a];
  const double axis_norm = axis.norm();
  if (axis_norm <= 1e-12) throw DegenerateAxis("crop_from_landmarks: axis points coincide");
  const Vec2 up = axis / axis_norm;

  OrientedCrop crop;
  // R(angle) * (0,1) = (-sin, cos) must equal `up`.
  crop.angle = std::atan2(-up.x(), up.y());
  Vec2 centroid = Vec2::Zero();
  for (const Vec2& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  crop.center = centroid;

  // Largest absolute coordinate of any point in the crop-aligned frame. Using
  // twice this (rather than max-min) keeps the centroid-centered square a true
  // bound at scale_factor = 1.
  const Mat2 to_local = rot2(-crop.angle);
  double extent = 0.0;
  for (const Vec2& p : points) {
    const Vec2 local = to_local * (p - centroid);
    extent = std::max(extent, std::max(std::abs(local.x()), std::abs(local.y())));
  }
  crop.side = scale_factor * 2.0 * extent;
  return crop;
}

SimilarityTransform2D crop_to_transform(const OrientedCrop& crop, double resolution) {
  if (!(resolution > 0.0)) throw ShapeMismatch("crop_to_transform: resolution must be positive");
  SimilarityTransform2D tf;
  tf.scale = resolution / crop.side;
  tf.angle = -crop.angle;
  const Vec2 half(0.5 * resolution, 0.5 * resolution);
  tf.translation = half - tf.scale * (rot2(tf.angle) * crop.center);
  return tf;
}

OrientedCrop refine_crop(const OrientedCrop& crop, const std::vector<Vec2>& hand_landmarks,
                         double scale_factor) {
  if (hand_landmarks.size() != kHandLandmarkCount) {
    throw ShapeMismatch("refine_crop: expected 21 hand landmarks");
  }
  const Vec2 axis = hand_landmarks[kHandMiddleMcp] - hand_landmarks[kHandWrist];
  if (axis.norm() <= 1e-12) return crop;  // declared fallback for empty-extent input
  return crop_from_landmarks(hand_landmarks, kHandWrist, kHandMiddleMcp, scale_factor);
}

double crop_iou(const OrientedCrop& a, const OrientedCrop& b) {
  const std::array<Vec2, 4> ca = a.corners();
  const std::array<Vec2, 4> cb = b.corners();
  std::vector<Vec2> poly(ca.begin(), ca.end());
  for (int i = 0; i < 4 && !poly.empty(); ++i) {
    poly = clip_edge(poly, cb[i], cb[(i + 1) % 4]);
  }
  const double inter = poly.size() >= 3 ? polygon_area(poly) : 0.0;
  const double area_a = a.side * a.side;
  const double area_b = b.side * b.side;
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace posekit
