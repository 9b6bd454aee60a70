#include "posekit/mixer.hpp"

#include "posekit/philox.hpp"

#include <unsupported/Eigen/SpecialFunctions>

#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

namespace posekit {

namespace {

using RowVecX = Eigen::RowVectorXd;

constexpr double kLnEps = 1e-6;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// C×(B·S) channel-major <-> S×(B·C) token-major, per-batch block transpose.
MatX to_token_major(const MatX& m, int batch, int tokens, int channels) {
  MatX n(tokens, static_cast<Eigen::Index>(batch) * channels);
  for (int b = 0; b < batch; ++b) {
    n.middleCols(static_cast<Eigen::Index>(b) * channels, channels) =
        m.middleCols(static_cast<Eigen::Index>(b) * tokens, tokens).transpose();
  }
  return n;
}

MatX to_channel_major(const MatX& n, int batch, int tokens, int channels) {
  MatX m(channels, static_cast<Eigen::Index>(batch) * tokens);
  for (int b = 0; b < batch; ++b) {
    m.middleCols(static_cast<Eigen::Index>(b) * tokens, tokens) =
        n.middleCols(static_cast<Eigen::Index>(b) * channels, channels).transpose();
  }
  return m;
}

// Exact GELU: x * Phi(x). The derivative is emitted alongside when requested
// so backward never re-evaluates erf/exp.
void gelu_forward(const MatX& pre, MatX& act, MatX* dact) {
  const auto x = pre.array();
  const MatX cdf = 0.5 * (1.0 + (x * kInvSqrt2).erf());
  act = x * cdf.array();
  if (dact) *dact = cdf.array() + x * kInvSqrt2Pi * (-0.5 * x.square()).exp();
}

// Walks every tensor leaf in the fixed order shared by gradients, moments,
// and checkpoints.
template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
  fn("input_proj", p.input_proj);
  for (std::size_t l = 0; l < p.layer.size(); ++l) {
    auto& lay = p.layer[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    fn(pre + "ln_token_gain", lay.ln_token_gain);
    fn(pre + "ln_token_bias", lay.ln_token_bias);
    fn(pre + "token_w1", lay.token_w1);
    fn(pre + "token_b1", lay.token_b1);
    fn(pre + "token_w2", lay.token_w2);
    fn(pre + "token_b2", lay.token_b2);
    fn(pre + "ln_chan_gain", lay.ln_chan_gain);
    fn(pre + "ln_chan_bias", lay.ln_chan_bias);
    fn(pre + "chan_w1", lay.chan_w1);
    fn(pre + "chan_b1", lay.chan_b1);
    fn(pre + "chan_w2", lay.chan_w2);
    fn(pre + "chan_b2", lay.chan_b2);
  }
  fn("head_r_w", p.head_r_w);
  fn("head_r_b", p.head_r_b);
  fn("head_t_w", p.head_t_w);
  fn("head_t_b", p.head_t_b);
  fn("head_beta_w", p.head_beta_w);
  fn("head_beta_b", p.head_beta_b);
  fn("head_theta_w", p.head_theta_w);
  fn("head_theta_b", p.head_theta_b);
}

MixerParams allocate_params(const MixerConfig& config) {
  MixerParams p;
  p.config = config;
  const int c = config.channels;
  p.input_proj = MatX::Zero(c, 3);
  p.layer.resize(config.layers);
  for (auto& lay : p.layer) {
    lay.ln_token_gain = VecX::Ones(c);
    lay.ln_token_bias = VecX::Zero(c);
    lay.token_w1 = MatX::Zero(config.token_hidden, config.tokens);
    lay.token_b1 = VecX::Zero(config.token_hidden);
    lay.token_w2 = MatX::Zero(config.tokens, config.token_hidden);
    lay.token_b2 = VecX::Zero(config.tokens);
    lay.ln_chan_gain = VecX::Ones(c);
    lay.ln_chan_bias = VecX::Zero(c);
    lay.chan_w1 = MatX::Zero(config.channel_hidden, c);
    lay.chan_b1 = VecX::Zero(config.channel_hidden);
    lay.chan_w2 = MatX::Zero(c, config.channel_hidden);
    lay.chan_b2 = VecX::Zero(c);
  }
  p.head_r_w = MatX::Zero(6, c);
  p.head_r_b = VecX::Zero(6);
  p.head_t_w = MatX::Zero(3, c);
  p.head_t_b = VecX::Zero(3);
  p.head_beta_w = MatX::Zero(config.beta_dim, c);
  p.head_beta_b = VecX::Zero(config.beta_dim);
  p.head_theta_w = MatX::Zero(config.theta_dim, c);
  p.head_theta_b = VecX::Zero(config.theta_dim);
  return p;
}

void write_bytes(std::ofstream& out, const void* data, std::size_t size) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

void write_u64(std::ofstream& out, std::uint64_t v) { write_bytes(out, &v, sizeof v); }
void write_u32(std::ofstream& out, std::uint32_t v) { write_bytes(out, &v, sizeof v); }

void read_bytes(std::ifstream& in, void* data, std::size_t size) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
  if (!in) throw ParseError("checkpoint truncated");
}

std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  read_bytes(in, &v, sizeof v);
  return v;
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  read_bytes(in, &v, sizeof v);
  return v;
}

}  // namespace

void MixerConfig::validate() const {
  if (tokens < 1 || channels < 1 || layers < 1 || token_hidden < 1 || channel_hidden < 1 ||
      beta_dim < 1 || theta_dim < 1) {
    throw ShapeMismatch("mixer config: every dimension must be >= 1");
  }
}

std::vector<TensorRef> MixerParams::leaves() {
  std::vector<TensorRef> out;
  visit_params(*this, [&](std::string name, auto& m) {
    out.push_back(TensorRef{std::move(name), m.data(), m.size()});
  });
  return out;
}

std::vector<ConstTensorRef> MixerParams::leaves() const {
  std::vector<ConstTensorRef> out;
  visit_params(*this, [&](std::string name, const auto& m) {
    out.push_back(ConstTensorRef{std::move(name), m.data(), m.size()});
  });
  return out;
}

Eigen::Index MixerParams::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& leaf : leaves()) n += leaf.size;
  return n;
}

void MixerParams::set_zero() {
  visit_params(*this, [](const std::string&, auto& m) { m.setZero(); });
}

bool MixerParams::all_finite() const {
  bool ok = true;
  visit_params(*this, [&](const std::string&, const auto& m) { ok = ok && m.allFinite(); });
  return ok;
}

MixerParams init_params(const MixerConfig& config, std::uint64_t seed) {
  config.validate();
  MixerParams p = allocate_params(config);
  Philox rng(seed, 0x6d697865);
  auto fill = [&rng](MatX& w, int fan_in) {
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = std_dev * rng.normal();
  };
  fill(p.input_proj, 3);
  for (auto& lay : p.layer) {
    fill(lay.token_w1, config.tokens);
    fill(lay.token_w2, config.token_hidden);
    fill(lay.chan_w1, config.channels);
    fill(lay.chan_w2, config.channel_hidden);
  }
  fill(p.head_r_w, config.channels);
  fill(p.head_t_w, config.channels);
  fill(p.head_beta_w, config.channels);
  fill(p.head_theta_w, config.channels);
  p.head_r_b = rot6d_identity();
  return p;
}

MatX pack_tokens(const std::vector<MatX>& examples, int tokens) {
  const int batch = static_cast<int>(examples.size());
  MatX out(3, static_cast<Eigen::Index>(batch) * tokens);
  for (int b = 0; b < batch; ++b) {
    if (examples[b].rows() != tokens || examples[b].cols() != 3) {
      throw ShapeMismatch("pack_tokens: expected " + std::to_string(tokens) + "x3 landmarks");
    }
    out.middleCols(static_cast<Eigen::Index>(b) * tokens, tokens) = examples[b].transpose();
  }
  return out;
}

MixerOutput mixer_forward_batch(const MixerParams& params, const MatX& tokens,
                                MixerCache* cache) {
  const MixerConfig& cfg = params.config;
  cfg.validate();
  const int s = cfg.tokens;
  const int c = cfg.channels;
  if (tokens.rows() != 3 || tokens.cols() < s || tokens.cols() % s != 0) {
    throw ShapeMismatch("mixer forward: input must be 3 x (batch * " + std::to_string(s) + ")");
  }
  const int batch = static_cast<int>(tokens.cols()) / s;

  if (cache) {
    cache->batch = batch;
    cache->tokens = tokens;
    cache->layers.assign(static_cast<std::size_t>(cfg.layers), MixerLayerCache{});
  }

  auto layer_norm = [&](const MatX& x, const VecX& gain, const VecX& bias, MatX* xhat_out,
                        VecX* inv_std_out) -> MatX {
    if (!cfg.use_layer_norm) return x;
    RowVecX mu = x.colwise().mean();
    MatX centered = x.rowwise() - mu;
    RowVecX inv_std = (centered.array().square().colwise().mean() + kLnEps).rsqrt().matrix();
    MatX xhat = (centered.array().rowwise() * inv_std.array()).matrix();
    MatX y = ((xhat.array().colwise() * gain.array()).colwise() + bias.array()).matrix();
    if (xhat_out) *xhat_out = std::move(xhat);
    if (inv_std_out) *inv_std_out = inv_std.transpose();
    return y;
  };

  MatX x = params.input_proj * tokens;  // C × (B·S)
  for (int l = 0; l < cfg.layers; ++l) {
    const MixerLayerParams& p = params.layer[l];
    MixerLayerCache* lc = cache ? &cache->layers[static_cast<std::size_t>(l)] : nullptr;

    // Token mixing: MLP along the S axis, one instance per (batch, channel).
    MatX y1 = layer_norm(x, p.ln_token_gain, p.ln_token_bias, lc ? &lc->xhat1 : nullptr,
                         lc ? &lc->inv_std1 : nullptr);
    MatX n1 = to_token_major(y1, batch, s, c);
    MatX t_pre = (p.token_w1 * n1).colwise() + p.token_b1;
    MatX t_act;
    gelu_forward(t_pre, t_act, lc ? &lc->t_dact : nullptr);
    MatX t_out = (p.token_w2 * t_act).colwise() + p.token_b2;
    MatX mtok = to_channel_major(t_out, batch, s, c);
    MatX u;
    if (cfg.use_residual) {
      u = x + mtok;
    } else {
      u = std::move(mtok);
    }
    if (lc) {
      lc->n1 = std::move(n1);
      lc->t_act = std::move(t_act);
    }

    // Channel mixing: MLP along the C axis, one instance per token.
    MatX y2 = layer_norm(u, p.ln_chan_gain, p.ln_chan_bias, lc ? &lc->xhat2 : nullptr,
                         lc ? &lc->inv_std2 : nullptr);
    MatX c_pre = (p.chan_w1 * y2).colwise() + p.chan_b1;
    MatX c_act;
    gelu_forward(c_pre, c_act, lc ? &lc->c_dact : nullptr);
    MatX c_out = (p.chan_w2 * c_act).colwise() + p.chan_b2;
    if (cfg.use_residual) {
      x = u + c_out;
    } else {
      x = std::move(c_out);
    }
    if (lc) {
      lc->y2 = std::move(y2);
      lc->c_act = std::move(c_act);
      lc->u = std::move(u);
    }
  }

  MatX pooled(c, batch);
  for (int b = 0; b < batch; ++b) {
    pooled.col(b) = x.middleCols(static_cast<Eigen::Index>(b) * s, s).rowwise().mean();
  }

  MixerOutput out;
  out.r = (params.head_r_w * pooled).colwise() + params.head_r_b;
  out.t = (params.head_t_w * pooled).colwise() + params.head_t_b;
  out.beta = (params.head_beta_w * pooled).colwise() + params.head_beta_b;
  out.theta = (params.head_theta_w * pooled).colwise() + params.head_theta_b;

  if (cache) {
    cache->final_act = std::move(x);
    cache->pooled = std::move(pooled);
  }
  return out;
}

PoseState mixer_forward(const MixerParams& params, const MatX& landmarks) {
  if (landmarks.rows() != params.config.tokens || landmarks.cols() != 3) {
    throw ShapeMismatch("mixer forward: expected " + std::to_string(params.config.tokens) +
                        "x3 landmarks, got " + std::to_string(landmarks.rows()) + "x" +
                        std::to_string(landmarks.cols()));
  }
  if (!landmarks.allFinite()) throw ShapeMismatch("mixer forward: non-finite landmarks");
  MixerOutput out = mixer_forward_batch(params, landmarks.transpose());
  return output_column_state(out, 0);
}

PoseState output_column_state(const MixerOutput& out, int column) {
  PoseState st;
  st.r = out.r.col(column);
  st.t = out.t.col(column);
  st.beta = out.beta.col(column);
  st.theta = out.theta.col(column);
  return st;
}

MixerBackward mixer_backward_batch(const MixerParams& params, const MixerCache& cache,
                                   const MixerOutput& head_grad) {
  const MixerConfig& cfg = params.config;
  const int s = cfg.tokens;
  const int c = cfg.channels;
  const int batch = cache.batch;
  const Eigen::Index bs = static_cast<Eigen::Index>(batch) * s;
  if (batch < 1 || cache.final_act.rows() != c || cache.final_act.cols() != bs ||
      cache.pooled.rows() != c || cache.pooled.cols() != batch ||
      static_cast<int>(cache.layers.size()) != cfg.layers || cache.tokens.rows() != 3 ||
      cache.tokens.cols() != bs) {
    throw StaleCache("mixer backward: cache does not match parameter shapes");
  }
  if (head_grad.r.rows() != 6 || head_grad.r.cols() != batch || head_grad.t.rows() != 3 ||
      head_grad.t.cols() != batch || head_grad.beta.rows() != cfg.beta_dim ||
      head_grad.beta.cols() != batch || head_grad.theta.rows() != cfg.theta_dim ||
      head_grad.theta.cols() != batch) {
    throw StaleCache("mixer backward: head gradient shapes do not match");
  }

  MixerBackward result;
  result.grads = allocate_params(cfg);
  result.grads.set_zero();
  MixerGradients& g = result.grads;

  g.head_r_w.noalias() = head_grad.r * cache.pooled.transpose();
  g.head_r_b = head_grad.r.rowwise().sum();
  g.head_t_w.noalias() = head_grad.t * cache.pooled.transpose();
  g.head_t_b = head_grad.t.rowwise().sum();
  g.head_beta_w.noalias() = head_grad.beta * cache.pooled.transpose();
  g.head_beta_b = head_grad.beta.rowwise().sum();
  g.head_theta_w.noalias() = head_grad.theta * cache.pooled.transpose();
  g.head_theta_b = head_grad.theta.rowwise().sum();

  MatX d_pooled = params.head_r_w.transpose() * head_grad.r;
  d_pooled.noalias() += params.head_t_w.transpose() * head_grad.t;
  d_pooled.noalias() += params.head_beta_w.transpose() * head_grad.beta;
  d_pooled.noalias() += params.head_theta_w.transpose() * head_grad.theta;

  // Mean pooling spreads the pooled gradient uniformly over the tokens.
  MatX dx(c, bs);
  for (int b = 0; b < batch; ++b) {
    dx.middleCols(static_cast<Eigen::Index>(b) * s, s) =
        (d_pooled.col(b) / static_cast<double>(s)).replicate(1, s);
  }

  auto ln_backward = [&](const MatX& dy, const MatX& xhat, const VecX& inv_std, const VecX& gain,
                         VecX& dgain, VecX& dbias) -> MatX {
    if (!cfg.use_layer_norm) return dy;
    dgain += (dy.array() * xhat.array()).rowwise().sum().matrix();
    dbias += dy.rowwise().sum();
    MatX dxhat = (dy.array().colwise() * gain.array()).matrix();
    RowVecX m1 = dxhat.colwise().mean();
    RowVecX m2 = (dxhat.array() * xhat.array()).colwise().mean();
    MatX dxv = dxhat;
    dxv.rowwise() -= m1;
    dxv.array() -= xhat.array().rowwise() * m2.array();
    dxv.array().rowwise() *= inv_std.transpose().array();
    return dxv;
  };

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const MixerLayerParams& p = params.layer[l];
    MixerLayerParams& gl = g.layer[l];
    const MixerLayerCache& lc = cache.layers[static_cast<std::size_t>(l)];
    const MatX& y2 = cfg.use_layer_norm ? lc.y2 : lc.u;

    // Channel-mixing block.
    g.layer[l].chan_w2.noalias() += dx * lc.c_act.transpose();
    gl.chan_b2 += dx.rowwise().sum();
    MatX d_cact = p.chan_w2.transpose() * dx;
    MatX d_cpre = d_cact.cwiseProduct(lc.c_dact);
    gl.chan_w1.noalias() += d_cpre * y2.transpose();
    gl.chan_b1 += d_cpre.rowwise().sum();
    MatX d_y2 = p.chan_w1.transpose() * d_cpre;
    MatX d_u = ln_backward(d_y2, lc.xhat2, lc.inv_std2, p.ln_chan_gain, gl.ln_chan_gain,
                           gl.ln_chan_bias);
    if (cfg.use_residual) d_u += dx;

    // Token-mixing block.
    MatX d_tout = to_token_major(d_u, batch, s, c);
    gl.token_w2.noalias() += d_tout * lc.t_act.transpose();
    gl.token_b2 += d_tout.rowwise().sum();
    MatX d_tact = p.token_w2.transpose() * d_tout;
    MatX d_tpre = d_tact.cwiseProduct(lc.t_dact);
    gl.token_w1.noalias() += d_tpre * lc.n1.transpose();
    gl.token_b1 += d_tpre.rowwise().sum();
    MatX d_n1 = p.token_w1.transpose() * d_tpre;
    MatX d_y1 = to_channel_major(d_n1, batch, s, c);
    MatX d_x = ln_backward(d_y1, lc.xhat1, lc.inv_std1, p.ln_token_gain, gl.ln_token_gain,
                           gl.ln_token_bias);
    if (cfg.use_residual) d_x += d_u;
    dx = std::move(d_x);
  }

  g.input_proj.noalias() = dx * cache.tokens.transpose();
  result.token_grad.noalias() = params.input_proj.transpose() * dx;
  return result;
}

void save_checkpoint(const std::string& path, const MixerParams& params, std::uint64_t seed,
                     std::uint64_t step) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write("PKMIX001", 8);
  const MixerConfig& c = params.config;
  write_u32(out, static_cast<std::uint32_t>(c.tokens));
  write_u32(out, static_cast<std::uint32_t>(c.channels));
  write_u32(out, static_cast<std::uint32_t>(c.layers));
  write_u32(out, static_cast<std::uint32_t>(c.token_hidden));
  write_u32(out, static_cast<std::uint32_t>(c.channel_hidden));
  write_u32(out, static_cast<std::uint32_t>(c.beta_dim));
  write_u32(out, static_cast<std::uint32_t>(c.theta_dim));
  write_u32(out, (c.use_layer_norm ? 1u : 0u) | (c.use_residual ? 2u : 0u));
  write_u64(out, seed);
  write_u64(out, step);
  const auto leaves = params.leaves();
  write_u64(out, leaves.size());
  for (const auto& leaf : leaves) {
    write_u64(out, static_cast<std::uint64_t>(leaf.size));
    write_bytes(out, leaf.data, static_cast<std::size_t>(leaf.size) * sizeof(double));
  }
  if (!out) throw IoError("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  read_bytes(in, magic, 8);
  if (std::memcmp(magic, "PKMIX001", 8) != 0) throw ParseError("not a mixer checkpoint: " + path);
  MixerConfig c;
  c.tokens = static_cast<int>(read_u32(in));
  c.channels = static_cast<int>(read_u32(in));
  c.layers = static_cast<int>(read_u32(in));
  c.token_hidden = static_cast<int>(read_u32(in));
  c.channel_hidden = static_cast<int>(read_u32(in));
  c.beta_dim = static_cast<int>(read_u32(in));
  c.theta_dim = static_cast<int>(read_u32(in));
  const std::uint32_t flags = read_u32(in);
  c.use_layer_norm = (flags & 1u) != 0;
  c.use_residual = (flags & 2u) != 0;
  c.validate();

  LoadedCheckpoint loaded;
  loaded.seed = read_u64(in);
  loaded.step = read_u64(in);
  loaded.params = allocate_params(c);
  auto leaves = loaded.params.leaves();
  const std::uint64_t count = read_u64(in);
  if (count != leaves.size()) throw ParseError("checkpoint leaf count mismatch");
  for (auto& leaf : leaves) {
    const std::uint64_t size = read_u64(in);
    if (size != static_cast<std::uint64_t>(leaf.size)) {
      throw ParseError("checkpoint tensor size mismatch at " + leaf.name);
    }
    read_bytes(in, leaf.data, static_cast<std::size_t>(size) * sizeof(double));
  }
  if (!loaded.params.all_finite()) throw ParseError("checkpoint holds non-finite parameters");
  return loaded;
}

}  // namespace posekit
