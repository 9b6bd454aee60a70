#pragma once

#include "posekit/common.hpp"

#include <vector>

namespace posekit {

// Least-squares similarity fit: minimizes |s * R * a + t - b|^2.
struct SimilarityFit {
  double scale = 1.0;
  Mat3 rot = Mat3::Identity();
  Vec3 trans = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rot * p) + trans; }
};

// Mean per-point Euclidean distance, in millimeters.
double mpjpe_mm(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt);

// Closed-form Umeyama alignment. R is always a proper rotation; reflections
// are not absorbed. Throws DegenerateConfiguration for < 3 points or
// (near-)collinear input. with_scale=false restricts to rigid alignment.
SimilarityFit procrustes_align(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt,
                               bool with_scale = true);

// MPJPE after optimal similarity alignment of pred onto gt.
double mpjpe_pa_mm(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt,
                   bool with_scale = true);

// Mean per-landmark error over a 21-point hand, divided by the ground-truth
// hand size (wrist to middle fingertip).
double normalized_hand_error(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt);

}  // namespace posekit
