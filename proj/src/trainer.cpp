#include "posekit/trainer.hpp"

#include "posekit/metrics.hpp"
#include "posekit/philox.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <utility>

namespace posekit {

namespace {

constexpr std::uint64_t kBatchStreamTag = 0x8000000000000000ull;
constexpr double kRadToDeg = 57.295779513082320877;

// Decoded landmarks with the hips midpoint subtracted; the frame every
// landmark-space comparison in training uses.
std::vector<Vec3> centered_landmarks(const LandmarkEvaluator& evaluator, const PoseState& state) {
  const LandmarkLayout& layout = evaluator.model().layout;
  std::vector<Vec3> x = evaluator.landmarks(state);
  const Vec3 ctr = 0.5 * (x[layout.left_hip] + x[layout.right_hip]);
  for (Vec3& p : x) p -= ctr;
  return x;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ShapeMismatch("train config: batch_size must be >= 1");
  if (steps < 0) throw ShapeMismatch("train config: steps must be >= 0");
  if (!(learning_rate > 0.0)) throw ShapeMismatch("train config: learning_rate must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ShapeMismatch("train config: adam betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ShapeMismatch("train config: adam_eps must be > 0");
  if (w_r < 0.0 || w_t < 0.0 || w_beta < 0.0 || w_theta < 0.0 || w_x < 0.0) {
    throw ShapeMismatch("train config: loss weights must be >= 0");
  }
  if (eval_every < 1) throw ShapeMismatch("train config: eval_every must be >= 1");
  if (warmup_steps < 0) throw ShapeMismatch("train config: warmup_steps must be >= 0");
}

AdamState AdamState::zero_like(const MixerParams& params) {
  AdamState state;
  state.m = params;
  state.m.set_zero();
  state.v = params;
  state.v.set_zero();
  state.step = 0;
  return state;
}

LossResult lifter_loss_with_landmarks(const LandmarkEvaluator& evaluator,
                                      const PoseState& prediction, const PoseState& target,
                                      const std::vector<Vec3>& target_centered,
                                      const TrainConfig& config) {
  const KinematicModel& model = evaluator.model();
  LossResult res;
  res.d_beta = VecX::Zero(model.beta_dim());
  res.d_theta = VecX::Zero(model.theta_dim());

  const Mat3 rot_pred = rot6d_to_matrix(prediction.r);
  const Mat3 rot_tgt = rot6d_to_matrix(target.r);
  const double angle = geodesic_angle(rot_pred, rot_tgt);
  res.loss += config.w_r * angle * angle;
  res.d_r += config.w_r * rot6d_to_matrix_vjp(prediction.r, geodesic_sq_grad(rot_pred, rot_tgt));

  const Vec3 dt = prediction.t - target.t;
  res.loss += config.w_t * dt.squaredNorm();
  res.d_t += 2.0 * config.w_t * dt;

  const VecX dbeta = prediction.beta - target.beta;
  res.loss += config.w_beta * dbeta.squaredNorm();
  res.d_beta += 2.0 * config.w_beta * dbeta;

  const VecX dtheta = prediction.theta - target.theta;
  res.loss += config.w_theta * dtheta.squaredNorm();
  res.d_theta += 2.0 * config.w_theta * dtheta;

  const int s_total = model.landmark_count();
  if (static_cast<int>(target_centered.size()) != s_total) {
    throw LayoutMismatch("lifter loss: target landmark count does not match the model");
  }
  std::vector<Vec3> x_pred = centered_landmarks(evaluator, prediction);
  std::vector<double> dist(static_cast<std::size_t>(s_total));
  double mpjpe = 0.0;
  for (int s = 0; s < s_total; ++s) {
    dist[s] = (x_pred[s] - target_centered[s]).norm();
    mpjpe += dist[s];
  }
  mpjpe /= s_total;
  res.mpjpe_m = mpjpe;
  res.loss += config.w_x * mpjpe * mpjpe;

  // d(MPJPE^2)/dX_s = 2 MPJPE/S * unit(X_s - X'_s); then the hips-centering
  // pullback spreads the summed gradient back onto the two hip landmarks.
  std::vector<Vec3> g(static_cast<std::size_t>(s_total), Vec3::Zero());
  const double scale = config.w_x * 2.0 * mpjpe / s_total;
  Vec3 g_sum = Vec3::Zero();
  for (int s = 0; s < s_total; ++s) {
    if (dist[s] > 1e-12) {
      g[s] = scale * (x_pred[s] - target_centered[s]) / dist[s];
      g_sum += g[s];
    }
  }
  const LandmarkLayout& layout = model.layout;
  g[layout.left_hip] -= 0.5 * g_sum;
  g[layout.right_hip] -= 0.5 * g_sum;

  const VecX flat = evaluator.pullback(prediction, g);
  res.d_r += flat.segment<6>(0);
  res.d_t += flat.segment<3>(6);
  res.d_beta += flat.segment(9, model.beta_dim());
  res.d_theta += flat.segment(9 + model.beta_dim(), model.theta_dim());
  return res;
}

LossResult lifter_loss(const LandmarkEvaluator& evaluator, const PoseState& prediction,
                       const PoseState& target, const TrainConfig& config) {
  return lifter_loss_with_landmarks(evaluator, prediction, target,
                                    centered_landmarks(evaluator, target), config);
}

void adam_step(MixerParams& params, const MixerGradients& grads, AdamState& state,
               const TrainConfig& config, double lr) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);

  auto p_leaves = params.leaves();
  const auto g_leaves = grads.leaves();
  auto m_leaves = state.m.leaves();
  auto v_leaves = state.v.leaves();
  if (p_leaves.size() != g_leaves.size() || p_leaves.size() != m_leaves.size() ||
      p_leaves.size() != v_leaves.size()) {
    throw ShapeMismatch("adam_step: parameter/gradient trees are not congruent");
  }
  for (std::size_t i = 0; i < p_leaves.size(); ++i) {
    if (p_leaves[i].size != g_leaves[i].size || p_leaves[i].size != m_leaves[i].size ||
        p_leaves[i].size != v_leaves[i].size) {
      throw ShapeMismatch("adam_step: leaf " + p_leaves[i].name + " shape mismatch");
    }
    double* p = p_leaves[i].data;
    const double* g = g_leaves[i].data;
    double* m = m_leaves[i].data;
    double* v = v_leaves[i].data;
    const Eigen::Index n = p_leaves[i].size;
    for (Eigen::Index k = 0; k < n; ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + config.adam_eps);
    }
  }
}

EvalMetrics evaluate(const LandmarkEvaluator& evaluator, const MixerParams& params,
                     const Dataset& dataset, std::size_t begin, std::size_t end) {
  if (begin >= end || end > dataset.examples.size()) {
    throw ShapeMismatch("evaluate: empty or out-of-range split");
  }
  const KinematicModel& model = evaluator.model();
  const int s_total = model.landmark_count();
  if (params.config.tokens != s_total) {
    throw ShapeMismatch("evaluate: mixer token count does not match the model");
  }

  EvalMetrics em;
  double beta_sq = 0.0;
  double theta_sq = 0.0;
  const std::size_t chunk = 256;
  for (std::size_t at = begin; at < end; at += chunk) {
    const std::size_t cb = std::min(chunk, end - at);
    MatX tokens(3, static_cast<Eigen::Index>(cb) * s_total);
    for (std::size_t i = 0; i < cb; ++i) {
      const auto& pts = dataset.examples[at + i].input.points;
      for (int s = 0; s < s_total; ++s) {
        tokens.col(static_cast<Eigen::Index>(i) * s_total + s) = pts[static_cast<std::size_t>(s)];
      }
    }
    const MixerOutput out = mixer_forward_batch(params, tokens);
    for (std::size_t i = 0; i < cb; ++i) {
      const PoseState pred = output_column_state(out, static_cast<int>(i));
      const TrainingExample& ex = dataset.examples[at + i];
      const std::vector<Vec3> xc = centered_landmarks(evaluator, pred);
      em.mpjpe_mm += mpjpe_mm(xc, ex.clean.points);
      em.mpjpe_pa_mm += mpjpe_pa_mm(xc, ex.clean.points, true);
      em.rot_err_deg +=
          geodesic_angle(rot6d_to_matrix(pred.r), rot6d_to_matrix(ex.target.r)) * kRadToDeg;
      em.t_err_mm += (pred.t - ex.target.t).norm() * 1000.0;
      beta_sq += (pred.beta - ex.target.beta).squaredNorm();
      theta_sq += (pred.theta - ex.target.theta).squaredNorm();
    }
  }
  const double count = static_cast<double>(end - begin);
  em.mpjpe_mm /= count;
  em.mpjpe_pa_mm /= count;
  em.rot_err_deg /= count;
  em.t_err_mm /= count;
  em.beta_rmse = std::sqrt(beta_sq / (count * model.beta_dim()));
  em.theta_rmse = std::sqrt(theta_sq / (count * model.theta_dim()));
  em.examples = static_cast<int>(end - begin);
  return em;
}

TrainResult train(const KinematicModel& model, const Dataset& dataset,
                  const MixerConfig& mixer_config, const TrainConfig& config,
                  const std::string& csv_path) {
  config.validate();
  mixer_config.validate();
  if (static_cast<int>(dataset.landmark_total) != model.landmark_count() ||
      static_cast<int>(dataset.beta_dim) != model.beta_dim() ||
      static_cast<int>(dataset.theta_dim) != model.theta_dim()) {
    throw ShapeMismatch("train: dataset does not match the model's layout");
  }
  if (mixer_config.tokens != model.landmark_count() ||
      mixer_config.beta_dim != model.beta_dim() || mixer_config.theta_dim != model.theta_dim()) {
    throw ShapeMismatch("train: mixer config does not match the model's layout");
  }
  const std::size_t n = dataset.examples.size();
  if (n == 0) throw ShapeMismatch("train: empty dataset");
  // Held-out split: the last 10% by index. A single-example dataset cannot be
  // split, so it is both train and eval (the memorization edge case).
  const std::size_t n_eval = std::max<std::size_t>(1, n / 10);
  const std::size_t n_train = std::max<std::size_t>(n - n_eval, 1);
  const std::size_t eval_begin = n - n_eval;

  const LandmarkEvaluator evaluator(model);
  MixerParams params = init_params(mixer_config, config.seed);
  AdamState adam = AdamState::zero_like(params);
  const int s_total = mixer_config.tokens;
  const int batch = config.batch_size;

  TrainResult result;
  std::ofstream csv;
  if (!csv_path.empty()) {
    csv.open(csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot open metrics log for writing: " + csv_path);
    csv << "step,train_loss,eval_mpjpe_mm,eval_mpjpe_pa_mm,rot_err_deg,t_err_mm\n";
  }

  std::vector<std::size_t> idx(static_cast<std::size_t>(batch));
  auto draw_batch = [&](std::uint64_t step_index) {
    Philox rng(config.seed, kBatchStreamTag | step_index);
    for (auto& i : idx) {
      i = std::min<std::size_t>(n_train - 1,
                                static_cast<std::size_t>(rng.uniform01() * n_train));
    }
  };

  auto run_batch = [&](bool with_grad, MixerGradients* grads_out) -> double {
    MatX tokens(3, static_cast<Eigen::Index>(batch) * s_total);
    for (int b = 0; b < batch; ++b) {
      const auto& pts = dataset.examples[idx[static_cast<std::size_t>(b)]].input.points;
      for (int s = 0; s < s_total; ++s) {
        tokens.col(static_cast<Eigen::Index>(b) * s_total + s) = pts[static_cast<std::size_t>(s)];
      }
    }
    MixerCache cache;
    const MixerOutput out = mixer_forward_batch(params, tokens, with_grad ? &cache : nullptr);
    MixerOutput head_grad;
    if (with_grad) {
      head_grad.r = MatX::Zero(6, batch);
      head_grad.t = MatX::Zero(3, batch);
      head_grad.beta = MatX::Zero(mixer_config.beta_dim, batch);
      head_grad.theta = MatX::Zero(mixer_config.theta_dim, batch);
    }
    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
      const PoseState pred = output_column_state(out, b);
      const TrainingExample& ex = dataset.examples[idx[static_cast<std::size_t>(b)]];
      const LossResult lr =
          lifter_loss_with_landmarks(evaluator, pred, ex.target, ex.clean.points, config);
      total += lr.loss;
      if (with_grad) {
        head_grad.r.col(b) = lr.d_r / batch;
        head_grad.t.col(b) = lr.d_t / batch;
        head_grad.beta.col(b) = lr.d_beta / batch;
        head_grad.theta.col(b) = lr.d_theta / batch;
      }
    }
    total /= batch;
    if (with_grad) {
      MixerBackward bw = mixer_backward_batch(params, cache, head_grad);
      *grads_out = std::move(bw.grads);
    }
    return total;
  };

  auto do_eval = [&](std::uint64_t step, double train_loss) {
    const EvalMetrics em = evaluate(evaluator, params, dataset, eval_begin, n);
    MetricsRow row;
    row.step = step;
    row.train_loss = train_loss;
    row.eval_mpjpe_mm = em.mpjpe_mm;
    row.eval_mpjpe_pa_mm = em.mpjpe_pa_mm;
    row.rot_err_deg = em.rot_err_deg;
    row.t_err_mm = em.t_err_mm;
    if (csv.is_open()) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                    static_cast<unsigned long long>(row.step), row.train_loss, row.eval_mpjpe_mm,
                    row.eval_mpjpe_pa_mm, row.rot_err_deg, row.t_err_mm);
      csv << buf;
      csv.flush();
    }
    const bool improved = result.log.empty() || em.mpjpe_mm < result.best_eval.mpjpe_mm;
    result.log.push_back(row);
    if (improved) {
      result.best_params = params;
      result.best_step = step;
      result.best_eval = em;
    }
    result.final_eval = em;
  };

  draw_batch(0);
  const double probe_loss = run_batch(false, nullptr);
  if (!std::isfinite(probe_loss)) throw DivergedError("training loss non-finite at step 0");
  do_eval(0, probe_loss);

  result.step_losses.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 1; step <= config.steps; ++step) {
    draw_batch(static_cast<std::uint64_t>(step));
    MixerGradients grads;
    const double loss = run_batch(true, &grads);
    if (!std::isfinite(loss)) {
      throw DivergedError("training loss non-finite at step " + std::to_string(step));
    }
    double lr = config.learning_rate;
    if (config.warmup_steps > 0) {
      lr *= std::min(1.0, static_cast<double>(step) / config.warmup_steps);
    }
    adam_step(params, grads, adam, config, lr);
    result.step_losses.push_back(loss);
    if (step % config.eval_every == 0 || step == config.steps) {
      do_eval(static_cast<std::uint64_t>(step), loss);
    }
  }
  if (csv.is_open() && !csv) throw IoError("metrics log write failed: " + csv_path);
  return result;
}

}  // namespace posekit
