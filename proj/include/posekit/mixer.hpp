#pragma once

#include "posekit/body_model.hpp"
#include "posekit/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace posekit {

// Lifter architecture. Tokens are landmarks; channels are the hidden width
// every token is projected to by the shared input projection.
struct MixerConfig {
  int tokens = 75;
  int channels = 64;
  int layers = 4;
  int token_hidden = 64;
  int channel_hidden = 128;
  int beta_dim = 8;
  int theta_dim = 32;
  // The per-layer pre-normalization and residual connections can be switched
  // off for ablation runs.
  bool use_layer_norm = true;
  bool use_residual = true;

  int output_dim() const { return 6 + 3 + beta_dim + theta_dim; }
  void validate() const;
};

// Flat view of one parameter tensor; `leaves()` yields these in a fixed
// declared order shared by gradients, Adam moments, and checkpoints.
struct TensorRef {
  std::string name;
  double* data = nullptr;
  Eigen::Index size = 0;
};

struct ConstTensorRef {
  std::string name;
  const double* data = nullptr;
  Eigen::Index size = 0;
};

struct MixerLayerParams {
  VecX ln_token_gain, ln_token_bias;  // C
  MatX token_w1;                      // token_hidden × S
  VecX token_b1;                      // token_hidden
  MatX token_w2;                      // S × token_hidden
  VecX token_b2;                      // S
  VecX ln_chan_gain, ln_chan_bias;    // C
  MatX chan_w1;                       // channel_hidden × C
  VecX chan_b1;                       // channel_hidden
  MatX chan_w2;                       // C × channel_hidden
  VecX chan_b2;                       // C
};

struct MixerParams {
  MixerConfig config;
  MatX input_proj;  // C × 3
  std::vector<MixerLayerParams> layer;
  MatX head_r_w;  // 6 × C
  VecX head_r_b;
  MatX head_t_w;  // 3 × C
  VecX head_t_b;
  MatX head_beta_w;  // beta_dim × C
  VecX head_beta_b;
  MatX head_theta_w;  // theta_dim × C
  VecX head_theta_b;

  std::vector<TensorRef> leaves();
  std::vector<ConstTensorRef> leaves() const;
  Eigen::Index parameter_count() const;
  void set_zero();
  bool all_finite() const;
};

// Gradients carry the same shape tree as the parameters they differentiate.
using MixerGradients = MixerParams;

// Batched head outputs; one column per batch element.
struct MixerOutput {
  MatX r;      // 6 × B
  MatX t;      // 3 × B
  MatX beta;   // beta_dim × B
  MatX theta;  // theta_dim × B
};

struct MixerLayerCache {
  MatX xhat1;
  VecX inv_std1;
  MatX n1;  // S × (B·C): token-major view fed to the token MLP
  MatX t_act, t_dact;
  MatX u;  // C × (B·S): after the token-mixing residual
  MatX xhat2;
  VecX inv_std2;
  MatX y2;  // C × (B·S): what the channel MLP consumed
  MatX c_act, c_dact;
};

struct MixerCache {
  int batch = 0;
  MatX tokens;  // 3 × (B·S) forward input
  std::vector<MixerLayerCache> layers;
  MatX final_act;  // C × (B·S)
  MatX pooled;     // C × B
};

struct MixerBackward {
  MixerGradients grads;
  MatX token_grad;  // 3 × (B·S), gradient w.r.t. the forward input
};

// Deterministic init: fan-in-scaled Gaussian weights, zero biases, unit
// normalization gains, and the r head biased to the 6D identity so the
// network predicts a valid rotation before any training.
MixerParams init_params(const MixerConfig& config, std::uint64_t seed);

// Stacks per-example S×3 landmark matrices into the 3×(B·S) batch layout.
MatX pack_tokens(const std::vector<MatX>& examples, int tokens);

// Batched forward pass. `tokens` is 3×(B·S); pass a cache to enable backward.
MixerOutput mixer_forward_batch(const MixerParams& params, const MatX& tokens,
                                MixerCache* cache = nullptr);

// Single example: landmarks as S×3 rows, decoded into a pose state.
PoseState mixer_forward(const MixerParams& params, const MatX& landmarks);

// Exact reverse-mode gradients for the loss whose per-head gradients are
// given in `head_grad` (summed over the batch, no averaging applied here).
MixerBackward mixer_backward_batch(const MixerParams& params, const MixerCache& cache,
                                   const MixerOutput& head_grad);

PoseState output_column_state(const MixerOutput& out, int column);

// Checkpoint file: fixed header (config, seed, step) followed by every
// parameter leaf as little-endian f64 blobs in leaves() order.
void save_checkpoint(const std::string& path, const MixerParams& params, std::uint64_t seed,
                     std::uint64_t step);

struct LoadedCheckpoint {
  MixerParams params;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace posekit
