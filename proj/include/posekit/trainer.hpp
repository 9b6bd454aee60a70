#pragma once

#include "posekit/body_model.hpp"
#include "posekit/mixer.hpp"
#include "posekit/sampling.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace posekit {

struct TrainConfig {
  int batch_size = 32;
  int steps = 4000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Loss term weights; landmarks are in meters, so w_x trades millimeters
  // against radians/latent units directly.
  double w_r = 1.0;
  double w_t = 1.0;
  double w_beta = 0.1;
  double w_theta = 0.1;
  double w_x = 1.0;
  int eval_every = 500;
  std::uint64_t seed = 2024;
  int warmup_steps = 0;  // 0 disables the linear warmup

  void validate() const;
};

// Adam moments share the parameter tree, so leaf iteration stays congruent.
struct AdamState {
  MixerParams m;
  MixerParams v;
  std::uint64_t step = 0;

  static AdamState zero_like(const MixerParams& params);
};

struct LossResult {
  double loss = 0.0;
  Vec6 d_r = Vec6::Zero();
  Vec3 d_t = Vec3::Zero();
  VecX d_beta;
  VecX d_theta;
  double mpjpe_m = 0.0;  // root-centered landmark error of this pair, meters
};

// loss = w_r geodesic^2 + w_t |dt|^2 + w_beta |dbeta|^2 + w_theta |dtheta|^2
//      + w_x MPJPE^2, with MPJPE over root-centered decoded landmarks.
// Returns the exact gradient w.r.t. the predicted (r, t, beta, theta).
LossResult lifter_loss(const LandmarkEvaluator& evaluator, const PoseState& prediction,
                       const PoseState& target, const TrainConfig& config);

// Same loss against a precomputed root-centered target landmark set (the
// dataset's clean landmarks), skipping the redundant target decode.
LossResult lifter_loss_with_landmarks(const LandmarkEvaluator& evaluator,
                                      const PoseState& prediction, const PoseState& target,
                                      const std::vector<Vec3>& target_centered,
                                      const TrainConfig& config);

// Standard bias-corrected Adam. `lr` is the effective rate for this step
// (the train loop folds warmup into it).
void adam_step(MixerParams& params, const MixerGradients& grads, AdamState& state,
               const TrainConfig& config, double lr);

struct EvalMetrics {
  double mpjpe_mm = 0.0;
  double mpjpe_pa_mm = 0.0;
  double rot_err_deg = 0.0;
  double t_err_mm = 0.0;
  double beta_rmse = 0.0;
  double theta_rmse = 0.0;
  int examples = 0;
};

// Mean metrics of the lifter over dataset examples [begin, end).
EvalMetrics evaluate(const LandmarkEvaluator& evaluator, const MixerParams& params,
                     const Dataset& dataset, std::size_t begin, std::size_t end);

struct MetricsRow {
  std::uint64_t step = 0;
  double train_loss = 0.0;
  double eval_mpjpe_mm = 0.0;
  double eval_mpjpe_pa_mm = 0.0;
  double rot_err_deg = 0.0;
  double t_err_mm = 0.0;
};

struct TrainResult {
  MixerParams best_params;
  std::uint64_t best_step = 0;
  EvalMetrics best_eval;
  EvalMetrics final_eval;
  std::vector<MetricsRow> log;
  std::vector<double> step_losses;  // one entry per optimization step
};

// Deterministic training loop: batches come from a per-step Philox stream,
// the held-out split is the last 10% of the dataset by index, and the best
// checkpoint (by held-out MPJPE) is kept. Writes the metrics log as CSV when
// csv_path is nonempty. Throws DivergedError when the loss leaves f64 range.
TrainResult train(const KinematicModel& model, const Dataset& dataset,
                  const MixerConfig& mixer_config, const TrainConfig& config,
                  const std::string& csv_path = "");

}  // namespace posekit
