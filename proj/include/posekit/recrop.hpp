#pragma once

#include "posekit/common.hpp"

#include <array>
#include <vector>

namespace posekit {

// Hand landmark indexing shared with the body model's per-hand blocks.
inline constexpr int kHandLandmarkCount = 21;
inline constexpr int kHandWrist = 0;
inline constexpr int kHandMiddleMcp = 9;  // middle-finger base, canonical axis target

// Palm crops frame roughly half the hand, so seed crops get extra padding;
// refined crops can sit tighter.
inline constexpr double kSeedScaleFactor = 2.0;
inline constexpr double kRefineScaleFactor = 1.3;

// Oriented square region of interest. `angle` is the ccw rotation taking an
// axis-aligned square to the crop, so the crop's up axis is R(angle)*(0,1).
struct OrientedCrop {
  Vec2 center = Vec2::Zero();  // pixels
  double side = 1.0;           // pixels
  double angle = 0.0;          // radians

  std::array<Vec2, 4> corners() const;
};

// p -> scale * R(angle) * p + translation.
struct SimilarityTransform2D {
  double scale = 1.0;
  double angle = 0.0;
  Vec2 translation = Vec2::Zero();

  Vec2 apply(const Vec2& p) const;
  SimilarityTransform2D inverse() const;
};

// Square around the given points: the up axis follows point[axis_a] ->
// point[axis_b], the center is the centroid, and the side covers twice the
// largest absolute extent in the rotated frame, times scale_factor. With
// scale_factor >= 1 every input point lies inside the crop.
OrientedCrop crop_from_landmarks(const std::vector<Vec2>& points, int axis_a, int axis_b,
                                 double scale_factor);

// Maps image coordinates to [0, resolution]^2 crop pixels (and back).
SimilarityTransform2D crop_to_transform(const OrientedCrop& crop, double resolution);

// Recomputes the crop from a full 21-point hand (axis wrist -> middle-finger
// base). Falls back to `crop` when the landmarks have no extent.
OrientedCrop refine_crop(const OrientedCrop& crop, const std::vector<Vec2>& hand_landmarks,
                         double scale_factor);

// Exact polygon intersection over union of the two oriented squares.
double crop_iou(const OrientedCrop& a, const OrientedCrop& b);

}  // namespace posekit
