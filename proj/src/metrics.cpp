#include "posekit/metrics.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace posekit {

namespace {

constexpr int kHandPoints = 21;
constexpr int kWrist = 0;
constexpr int kMiddleFingertip = 12;

Vec3 centroid(const std::vector<Vec3>& pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  return c / static_cast<double>(pts.size());
}

}  // namespace

double mpjpe_mm(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw LayoutMismatch("mpjpe: point counts disagree");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += (pred[i] - gt[i]).norm();
  return 1000.0 * sum / static_cast<double>(pred.size());
}

SimilarityFit procrustes_align(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt,
                               bool with_scale) {
  if (pred.size() != gt.size()) throw LayoutMismatch("procrustes: point counts disagree");
  const auto n = static_cast<double>(pred.size());
  if (pred.size() < 3) throw DegenerateConfiguration("procrustes: need at least 3 points");

  const Vec3 mean_p = centroid(pred);
  const Vec3 mean_g = centroid(gt);

  Mat3 cov = Mat3::Zero();
  double var_p = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Vec3 dp = pred[i] - mean_p;
    const Vec3 dg = gt[i] - mean_g;
    cov += dg * dp.transpose();
    var_p += dp.squaredNorm();
  }
  cov /= n;
  var_p /= n;

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  // Rank < 2 means the points do not determine a rotation.
  if (sv(1) <= 1e-12 * std::max(sv(0), 1e-300)) {
    throw DegenerateConfiguration("procrustes: collinear or coincident points");
  }

  Vec3 sign = Vec3::Ones();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) sign(2) = -1.0;

  SimilarityFit fit;
  fit.rot = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
  if (with_scale) {
    if (var_p <= 0.0) throw DegenerateConfiguration("procrustes: zero-variance source");
    fit.scale = sv.dot(sign) / var_p;
  }
  fit.trans = mean_g - fit.scale * (fit.rot * mean_p);
  return fit;
}

double mpjpe_pa_mm(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt, bool with_scale) {
  const SimilarityFit fit = procrustes_align(pred, gt, with_scale);
  std::vector<Vec3> aligned;
  aligned.reserve(pred.size());
  for (const auto& p : pred) aligned.push_back(fit.apply(p));
  return mpjpe_mm(aligned, gt);
}

double normalized_hand_error(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
  if (pred.size() != kHandPoints || gt.size() != kHandPoints) {
    throw LayoutMismatch("hand error: expected 21 landmarks per hand");
  }
  const double hand_size = (gt[kMiddleFingertip] - gt[kWrist]).norm();
  if (hand_size <= 1e-12) throw ZeroHandSize("hand error: zero wrist-to-fingertip distance");
  double sum = 0.0;
  for (int i = 0; i < kHandPoints; ++i) sum += (pred[i] - gt[i]).norm();
  return sum / kHandPoints / hand_size;
}

}  // namespace posekit
