#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "posekit/mixer.hpp"
#include "posekit/philox.hpp"
#include "posekit/rotation.hpp"
#include "posekit/sampling.hpp"
#include "support/finite_diff.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

using namespace posekit;
using posekit::testing::rel_err;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

double ref_gelu(double x) { return x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Straight-line reference forward pass, scalar loops only. Shares nothing with
// the production implementation beyond the parameter struct it reads from.
std::vector<double> reference_forward(const MixerParams& p, const MatX& landmarks) {
  const MixerConfig& cfg = p.config;
  const int S = cfg.tokens, C = cfg.channels;
  std::vector<std::vector<double>> x(C, std::vector<double>(S, 0.0));
  for (int c = 0; c < C; ++c) {
    for (int s = 0; s < S; ++s) {
      for (int d = 0; d < 3; ++d) x[c][s] += p.input_proj(c, d) * landmarks(s, d);
    }
  }

  auto layer_norm = [&](const std::vector<std::vector<double>>& in, const VecX& gain,
                        const VecX& bias) {
    if (!cfg.use_layer_norm) return in;
    std::vector<std::vector<double>> out(C, std::vector<double>(S));
    for (int s = 0; s < S; ++s) {
      double mu = 0.0;
      for (int c = 0; c < C; ++c) mu += in[c][s];
      mu /= C;
      double var = 0.0;
      for (int c = 0; c < C; ++c) var += (in[c][s] - mu) * (in[c][s] - mu);
      var /= C;
      const double inv = 1.0 / std::sqrt(var + 1e-6);
      for (int c = 0; c < C; ++c) out[c][s] = gain[c] * ((in[c][s] - mu) * inv) + bias[c];
    }
    return out;
  };

  for (int l = 0; l < cfg.layers; ++l) {
    const MixerLayerParams& lp = p.layer[l];
    const auto y1 = layer_norm(x, lp.ln_token_gain, lp.ln_token_bias);
    std::vector<std::vector<double>> u(C, std::vector<double>(S));
    for (int c = 0; c < C; ++c) {
      std::vector<double> hidden(cfg.token_hidden);
      for (int h = 0; h < cfg.token_hidden; ++h) {
        double pre = lp.token_b1[h];
        for (int s = 0; s < S; ++s) pre += lp.token_w1(h, s) * y1[c][s];
        hidden[h] = ref_gelu(pre);
      }
      for (int s = 0; s < S; ++s) {
        double out = lp.token_b2[s];
        for (int h = 0; h < cfg.token_hidden; ++h) out += lp.token_w2(s, h) * hidden[h];
        u[c][s] = (cfg.use_residual ? x[c][s] : 0.0) + out;
      }
    }
    const auto y2 = layer_norm(u, lp.ln_chan_gain, lp.ln_chan_bias);
    for (int s = 0; s < S; ++s) {
      std::vector<double> hidden(cfg.channel_hidden);
      for (int h = 0; h < cfg.channel_hidden; ++h) {
        double pre = lp.chan_b1[h];
        for (int c = 0; c < C; ++c) pre += lp.chan_w1(h, c) * y2[c][s];
        hidden[h] = ref_gelu(pre);
      }
      for (int c = 0; c < C; ++c) {
        double out = lp.chan_b2[c];
        for (int h = 0; h < cfg.channel_hidden; ++h) out += lp.chan_w2(c, h) * hidden[h];
        x[c][s] = (cfg.use_residual ? u[c][s] : 0.0) + out;
      }
    }
  }

  std::vector<double> pooled(C, 0.0);
  for (int c = 0; c < C; ++c) {
    for (int s = 0; s < S; ++s) pooled[c] += x[c][s];
    pooled[c] /= S;
  }
  std::vector<double> out;
  auto head = [&](const MatX& w, const VecX& b) {
    for (int i = 0; i < w.rows(); ++i) {
      double v = b[i];
      for (int c = 0; c < C; ++c) v += w(i, c) * pooled[c];
      out.push_back(v);
    }
  };
  head(p.head_r_w, p.head_r_b);
  head(p.head_t_w, p.head_t_b);
  head(p.head_beta_w, p.head_beta_b);
  head(p.head_theta_w, p.head_theta_b);
  return out;
}

MixerParams random_params(const MixerConfig& cfg, std::uint64_t seed, double scale = 0.4) {
  MixerParams p = init_params(cfg, seed);
  Philox rng(seed, 0xabc);
  for (auto& leaf : p.leaves()) {
    for (Eigen::Index i = 0; i < leaf.size; ++i) leaf.data[i] = scale * rng.normal();
  }
  return p;
}

MatX random_landmarks(int tokens, Philox& rng, double scale = 0.7) {
  MatX m(tokens, 3);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

MixerOutput random_head_grad(const MixerConfig& cfg, int batch, Philox& rng) {
  MixerOutput g;
  auto fill = [&](MatX& m, int rows) {
    m = MatX(rows, batch);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  };
  fill(g.r, 6);
  fill(g.t, 3);
  fill(g.beta, cfg.beta_dim);
  fill(g.theta, cfg.theta_dim);
  return g;
}

double weighted_output_sum(const MixerOutput& out, const MixerOutput& weights) {
  return (out.r.array() * weights.r.array()).sum() + (out.t.array() * weights.t.array()).sum() +
         (out.beta.array() * weights.beta.array()).sum() +
         (out.theta.array() * weights.theta.array()).sum();
}

}  // namespace

TEST_CASE("all-zero parameters produce all-zero heads") {
  MixerConfig cfg;
  cfg.tokens = 5;
  cfg.channels = 4;
  cfg.layers = 2;
  cfg.token_hidden = 3;
  cfg.channel_hidden = 3;
  cfg.beta_dim = 2;
  cfg.theta_dim = 2;
  MixerParams p = init_params(cfg, 1);
  p.set_zero();

  Philox rng(80);
  const MatX lm = random_landmarks(cfg.tokens, rng);
  const MixerOutput out = mixer_forward_batch(p, lm.transpose());
  CHECK(out.r.cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.t.cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.beta.cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.theta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two-token chain matches the written-out arithmetic") {
  MixerConfig cfg;
  cfg.tokens = 2;
  cfg.channels = 2;
  cfg.layers = 1;
  cfg.token_hidden = 2;
  cfg.channel_hidden = 2;
  cfg.beta_dim = 1;
  cfg.theta_dim = 1;
  cfg.use_layer_norm = false;
  cfg.use_residual = false;

  MixerParams p = init_params(cfg, 1);
  p.set_zero();
  p.input_proj << 1, 0, 0, 0, 1, 0;
  p.layer[0].token_w1 << 1, 2, 0, -1;
  p.layer[0].token_b1 << 0.1, -0.2;
  p.layer[0].token_w2 << 1, -1, 2, 0;
  p.layer[0].token_b2 << 0, 0.3;
  p.layer[0].chan_w1 << 1, 1, 1, -1;
  p.layer[0].chan_w2 << 0.5, 0.5, -1, 1;
  p.layer[0].chan_b2 << 0.05, -0.05;
  p.head_r_w(0, 0) = 1.0;
  p.head_r_b[0] = 0.25;
  p.head_t_w(0, 1) = 2.0;
  p.head_beta_w(0, 0) = -1.0;
  p.head_theta_w(0, 1) = 1.0;

  MatX lm(2, 3);
  lm << 0.5, -0.3, 9.0, -0.2, 0.7, 9.0;  // z never enters the projection

  // Projection picks (x, y): x = [[0.5, -0.2], [-0.3, 0.7]].
  // Token MLP per channel:
  //   c0: pre = (0.5 + 2(-0.2) + 0.1, -(-0.2) - 0.2) = (0.2, 0)
  //   c1: pre = (-0.3 + 2(0.7) + 0.1, -(0.7) - 0.2) = (1.2, -0.9)
  const double g02 = ref_gelu(0.2), g0 = ref_gelu(0.0);
  const double g12 = ref_gelu(1.2), gm9 = ref_gelu(-0.9);
  const double u00 = g02 - g0, u01 = 2 * g02 + 0.3;
  const double u10 = g12 - gm9, u11 = 2 * g12 + 0.3;
  // Channel MLP per token: pre = (u0 + u1, u0 - u1).
  const double a0 = ref_gelu(u00 + u10), b0 = ref_gelu(u00 - u10);
  const double a1 = ref_gelu(u01 + u11), b1 = ref_gelu(u01 - u11);
  const double x00 = 0.5 * (a0 + b0) + 0.05, x01 = 0.5 * (a1 + b1) + 0.05;
  const double x10 = -a0 + b0 - 0.05, x11 = -a1 + b1 - 0.05;
  const double pool0 = 0.5 * (x00 + x01), pool1 = 0.5 * (x10 + x11);

  const PoseState out = mixer_forward(p, lm);
  CHECK(out.r[0] == doctest::Approx(pool0 + 0.25).epsilon(1e-14));
  CHECK(out.r[1] == doctest::Approx(0.0));
  CHECK(out.t[0] == doctest::Approx(2.0 * pool1).epsilon(1e-14));
  CHECK(out.beta[0] == doctest::Approx(-pool0).epsilon(1e-14));
  CHECK(out.theta[0] == doctest::Approx(pool1).epsilon(1e-14));
}

TEST_CASE("forward matches the loop reference on random configs") {
  Philox rng(81);
  int kase = 0;
  for (bool ln : {false, true}) {
    for (bool res : {false, true}) {
      MixerConfig cfg;
      cfg.tokens = 4;
      cfg.channels = 6;
      cfg.layers = 2;
      cfg.token_hidden = 5;
      cfg.channel_hidden = 7;
      cfg.beta_dim = 2;
      cfg.theta_dim = 3;
      cfg.use_layer_norm = ln;
      cfg.use_residual = res;
      for (int trial = 0; trial < 10; ++trial) {
        const MixerParams p = random_params(cfg, 900 + kase * 100 + trial);
        const MatX lm = random_landmarks(cfg.tokens, rng);
        const PoseState got = mixer_forward(p, lm);
        const std::vector<double> want = reference_forward(p, lm);
        const VecX flat = got.flatten();
        REQUIRE(static_cast<int>(want.size()) == flat.size());
        for (int i = 0; i < flat.size(); ++i) {
          CHECK(rel_err(flat[i], want[static_cast<std::size_t>(i)]) < 1e-12);
        }
      }
      ++kase;
    }
  }
}

TEST_CASE("batched forward equals per-example forward") {
  MixerConfig cfg;
  cfg.tokens = 4;
  cfg.channels = 6;
  cfg.layers = 2;
  cfg.token_hidden = 5;
  cfg.channel_hidden = 7;
  cfg.beta_dim = 2;
  cfg.theta_dim = 3;
  const MixerParams p = random_params(cfg, 55);
  Philox rng(82);

  std::vector<MatX> examples;
  for (int b = 0; b < 3; ++b) examples.push_back(random_landmarks(cfg.tokens, rng));
  const MixerOutput out = mixer_forward_batch(p, pack_tokens(examples, cfg.tokens));
  for (int b = 0; b < 3; ++b) {
    const PoseState single = mixer_forward(p, examples[b]);
    const PoseState batched = output_column_state(out, b);
    CHECK((single.flatten() - batched.flatten()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("forward is bitwise deterministic") {
  MixerConfig cfg;
  cfg.tokens = 8;
  cfg.channels = 16;
  cfg.layers = 2;
  cfg.token_hidden = 8;
  cfg.channel_hidden = 8;
  const MixerParams p = random_params(cfg, 7);
  Philox rng(83);
  const MatX lm = random_landmarks(cfg.tokens, rng);
  const PoseState a = mixer_forward(p, lm);
  const PoseState b = mixer_forward(p, lm);
  CHECK(a.flatten() == b.flatten());
}

TEST_CASE("the token count contract is exact") {
  MixerConfig cfg;  // defaults: S = 75
  const MixerParams p = init_params(cfg, 3);
  CHECK(p.config.tokens == 75);

  Philox rng(84);
  const MatX ok = random_landmarks(75, rng);
  CHECK_NOTHROW(mixer_forward(p, ok));
  CHECK_THROWS_AS(mixer_forward(p, random_landmarks(74, rng)), ShapeMismatch);
  CHECK_THROWS_AS(mixer_forward(p, random_landmarks(76, rng)), ShapeMismatch);
  CHECK_THROWS_AS(mixer_forward(p, MatX::Zero(75, 2)), ShapeMismatch);

  MatX bad = ok;
  bad(3, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(mixer_forward(p, bad), ShapeMismatch);

  // Batched entry point enforces the same multiple-of-S contract.
  CHECK_THROWS_AS(mixer_forward_batch(p, MatX::Zero(3, 74)), ShapeMismatch);
  CHECK_NOTHROW(mixer_forward_batch(p, MatX::Zero(3, 150)));
}

TEST_CASE("zero upstream gradient produces zero parameter gradients") {
  MixerConfig cfg;
  cfg.tokens = 4;
  cfg.channels = 6;
  cfg.layers = 2;
  cfg.token_hidden = 5;
  cfg.channel_hidden = 7;
  cfg.beta_dim = 2;
  cfg.theta_dim = 3;
  const MixerParams p = random_params(cfg, 12);
  Philox rng(85);
  MixerCache cache;
  mixer_forward_batch(p, random_landmarks(cfg.tokens, rng).transpose(), &cache);

  MixerOutput zero;
  zero.r = MatX::Zero(6, 1);
  zero.t = MatX::Zero(3, 1);
  zero.beta = MatX::Zero(cfg.beta_dim, 1);
  zero.theta = MatX::Zero(cfg.theta_dim, 1);
  const MixerBackward back = mixer_backward_batch(p, cache, zero);
  for (const auto& leaf : back.grads.leaves()) {
    for (Eigen::Index i = 0; i < leaf.size; ++i) CHECK(leaf.data[i] == 0.0);
  }
  CHECK(back.token_grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("analytic gradients match finite differences on every leaf") {
  Philox rng(86);
  int kase = 0;
  for (bool ln : {true, false}) {
    for (bool res : {true, false}) {
      MixerConfig cfg;
      cfg.tokens = 4;
      cfg.channels = 8;
      cfg.layers = 2;
      cfg.token_hidden = 5;
      cfg.channel_hidden = 7;
      cfg.beta_dim = 2;
      cfg.theta_dim = 3;
      cfg.use_layer_norm = ln;
      cfg.use_residual = res;

      MixerParams p = random_params(cfg, 4000 + kase);
      const int batch = 2;
      std::vector<MatX> examples;
      for (int b = 0; b < batch; ++b) examples.push_back(random_landmarks(cfg.tokens, rng));
      MatX tokens = pack_tokens(examples, cfg.tokens);
      const MixerOutput weights = random_head_grad(cfg, batch, rng);

      MixerCache cache;
      mixer_forward_batch(p, tokens, &cache);
      const MixerBackward back = mixer_backward_batch(p, cache, weights);

      const auto loss = [&] {
        return weighted_output_sum(mixer_forward_batch(p, tokens), weights);
      };

      auto grads = back.grads.leaves();
      auto leaves = p.leaves();
      REQUIRE(grads.size() == leaves.size());
      // The loss is a few units, so central differences carry ~1e-10 of
      // roundoff; a 1e-4 floor keeps genuinely-zero derivatives from failing
      // on that noise while real gradients (1e-2 and up) are still held to
      // the full tolerance.
      for (std::size_t leaf = 0; leaf < leaves.size(); ++leaf) {
        for (Eigen::Index i = 0; i < leaves[leaf].size; ++i) {
          const double numeric =
              posekit::testing::central_diff(loss, leaves[leaf].data[i]);
          CHECK_MESSAGE(rel_err(grads[leaf].data[i], numeric, 1e-4) < 1e-5,
                        leaves[leaf].name << "[" << i << "]");
        }
      }

      // Input gradient through the same scalar loss.
      for (Eigen::Index i = 0; i < tokens.size(); ++i) {
        const double numeric = posekit::testing::central_diff(loss, tokens.data()[i]);
        CHECK(rel_err(back.token_grad.data()[i], numeric, 1e-4) < 1e-5);
      }
      ++kase;
    }
  }
}

TEST_CASE("input gradient through identity layers is the pooled head row") {
  MixerConfig cfg;
  cfg.tokens = 5;
  cfg.channels = 4;
  cfg.layers = 1;
  cfg.token_hidden = 3;
  cfg.channel_hidden = 3;
  cfg.beta_dim = 1;
  cfg.theta_dim = 1;
  cfg.use_layer_norm = false;
  cfg.use_residual = true;

  // Zero MLPs + residual = identity trunk; only projection and heads act.
  MixerParams p = init_params(cfg, 9);
  p.set_zero();
  Philox rng(87);
  for (Eigen::Index i = 0; i < p.input_proj.size(); ++i) p.input_proj.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < p.head_r_w.size(); ++i) p.head_r_w.data()[i] = rng.normal();

  const MatX lm = random_landmarks(cfg.tokens, rng);
  MixerCache cache;
  mixer_forward_batch(p, lm.transpose(), &cache);

  MixerOutput upstream;
  upstream.r = MatX::Zero(6, 1);
  upstream.r(2, 0) = 1.0;  // select head row 2
  upstream.t = MatX::Zero(3, 1);
  upstream.beta = MatX::Zero(1, 1);
  upstream.theta = MatX::Zero(1, 1);
  const MixerBackward back = mixer_backward_batch(p, cache, upstream);

  const Vec3 expected = p.input_proj.transpose() * p.head_r_w.row(2).transpose() /
                        static_cast<double>(cfg.tokens);
  for (int s = 0; s < cfg.tokens; ++s) {
    CHECK((back.token_grad.col(s) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("token permutation with repermuted token MLP leaves heads unchanged") {
  MixerConfig cfg;
  cfg.tokens = 6;
  cfg.channels = 5;
  cfg.layers = 2;
  cfg.token_hidden = 4;
  cfg.channel_hidden = 3;
  cfg.beta_dim = 2;
  cfg.theta_dim = 2;
  cfg.use_layer_norm = true;
  cfg.use_residual = true;

  MixerParams p = random_params(cfg, 21);
  // Identity channel path: zero channel MLPs so only token mixing acts.
  for (auto& lay : p.layer) {
    lay.chan_w1.setZero();
    lay.chan_b1.setZero();
    lay.chan_w2.setZero();
    lay.chan_b2.setZero();
  }

  Philox rng(88);
  const MatX lm = random_landmarks(cfg.tokens, rng);
  const PoseState base = mixer_forward(p, lm);

  const std::vector<int> perm = {3, 0, 5, 1, 4, 2};  // token i reads old token perm[i]
  MatX lm_perm(cfg.tokens, 3);
  for (int i = 0; i < cfg.tokens; ++i) lm_perm.row(i) = lm.row(perm[i]);

  MixerParams q = p;
  for (std::size_t l = 0; l < q.layer.size(); ++l) {
    for (int i = 0; i < cfg.tokens; ++i) {
      q.layer[l].token_w1.col(i) = p.layer[l].token_w1.col(perm[i]);
      q.layer[l].token_w2.row(i) = p.layer[l].token_w2.row(perm[i]);
      q.layer[l].token_b2[i] = p.layer[l].token_b2[perm[i]];
    }
  }
  const PoseState permuted = mixer_forward(q, lm_perm);
  CHECK((permuted.flatten() - base.flatten()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("init is deterministic and biases the r head to the identity") {
  MixerConfig cfg;
  cfg.tokens = 10;
  cfg.channels = 12;
  cfg.layers = 2;
  cfg.token_hidden = 6;
  cfg.channel_hidden = 9;
  const MixerParams a = init_params(cfg, 2024);
  const MixerParams b = init_params(cfg, 2024);
  const MixerParams c = init_params(cfg, 2025);

  auto la = a.leaves(), lb = b.leaves(), lc = c.leaves();
  bool any_diff = false;
  for (std::size_t i = 0; i < la.size(); ++i) {
    for (Eigen::Index j = 0; j < la[i].size; ++j) {
      CHECK(la[i].data[j] == lb[i].data[j]);
      any_diff = any_diff || (la[i].data[j] != lc[i].data[j]);
    }
  }
  CHECK(any_diff);

  // Zero input at init: the trunk contributes nothing, heads emit biases.
  const PoseState out = mixer_forward(a, MatX::Zero(cfg.tokens, 3));
  CHECK((out.r - rot6d_identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(out.t.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(out.beta.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(out.theta.cwiseAbs().maxCoeff() < 1e-12);
  CHECK((rot6d_to_matrix(out.r) - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("init weight std tracks 1/sqrt(fan_in) for large fans") {
  MixerConfig cfg;
  cfg.tokens = 300;
  cfg.channels = 512;
  cfg.layers = 1;
  cfg.token_hidden = 256;
  cfg.channel_hidden = 256;
  const MixerParams p = init_params(cfg, 31);

  const auto sample_std = [](const MatX& w) {
    const double mean = w.mean();
    return std::sqrt((w.array() - mean).square().sum() / static_cast<double>(w.size()));
  };
  CHECK(sample_std(p.layer[0].token_w1) ==
        doctest::Approx(1.0 / std::sqrt(300.0)).epsilon(0.05));
  CHECK(sample_std(p.layer[0].token_w2) ==
        doctest::Approx(1.0 / std::sqrt(256.0)).epsilon(0.05));
  CHECK(sample_std(p.layer[0].chan_w1) ==
        doctest::Approx(1.0 / std::sqrt(512.0)).epsilon(0.05));
  CHECK(sample_std(p.layer[0].chan_w2) ==
        doctest::Approx(1.0 / std::sqrt(256.0)).epsilon(0.05));
  CHECK(sample_std(p.head_theta_w) == doctest::Approx(1.0 / std::sqrt(512.0)).epsilon(0.05));

  // Biases zero, normalization gains one.
  CHECK(p.layer[0].token_b1.cwiseAbs().maxCoeff() == 0.0);
  CHECK(p.layer[0].ln_token_gain.minCoeff() == 1.0);
  CHECK(p.layer[0].ln_token_gain.maxCoeff() == 1.0);
}

TEST_CASE("activations stay bounded on the training distribution") {
  MixerConfig cfg;  // default desk-scale architecture
  const MixerParams p = init_params(cfg, 2024);
  const KinematicModel toy = make_toy_model({});
  SamplerConfig sc;
  Philox rng(2024);

  std::vector<MatX> batch;
  for (int i = 0; i < 64; ++i) {
    const TrainingExample ex = make_training_example(toy, sc, rng);
    MatX lm(cfg.tokens, 3);
    for (int s = 0; s < cfg.tokens; ++s) lm.row(s) = ex.input.points[s].transpose();
    batch.push_back(lm);
  }
  MixerCache cache;
  mixer_forward_batch(p, pack_tokens(batch, cfg.tokens), &cache);

  double peak = cache.final_act.cwiseAbs().maxCoeff();
  peak = std::max(peak, cache.pooled.cwiseAbs().maxCoeff());
  for (const auto& lc : cache.layers) {
    peak = std::max(peak, lc.u.cwiseAbs().maxCoeff());
    peak = std::max(peak, lc.t_act.cwiseAbs().maxCoeff());
    peak = std::max(peak, lc.c_act.cwiseAbs().maxCoeff());
  }
  CHECK(peak < 1e6);
}

TEST_CASE("stale caches are rejected") {
  MixerConfig cfg;
  cfg.tokens = 4;
  cfg.channels = 6;
  cfg.layers = 2;
  cfg.token_hidden = 5;
  cfg.channel_hidden = 7;
  cfg.beta_dim = 2;
  cfg.theta_dim = 3;
  const MixerParams p = random_params(cfg, 61);
  Philox rng(89);

  MixerCache cache;
  mixer_forward_batch(p, random_landmarks(cfg.tokens, rng).transpose(), &cache);

  // Head gradient sized for a different batch.
  CHECK_THROWS_AS(mixer_backward_batch(p, cache, random_head_grad(cfg, 3, rng)), StaleCache);

  // Cache produced by a differently shaped network.
  MixerConfig other = cfg;
  other.layers = 1;
  const MixerParams q = random_params(other, 62);
  CHECK_THROWS_AS(mixer_backward_batch(q, cache, random_head_grad(other, 1, rng)), StaleCache);
}

TEST_CASE("checkpoint round trip is exact") {
  MixerConfig cfg;
  cfg.tokens = 9;
  cfg.channels = 11;
  cfg.layers = 3;
  cfg.token_hidden = 7;
  cfg.channel_hidden = 5;
  cfg.beta_dim = 4;
  cfg.theta_dim = 6;
  cfg.use_layer_norm = false;
  cfg.use_residual = true;
  const MixerParams p = random_params(cfg, 99);
  const std::string path = temp_path("posekit_mixer_ckpt.bin");
  save_checkpoint(path, p, 99, 12345);

  const LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.seed == 99);
  CHECK(loaded.step == 12345);
  CHECK(loaded.params.config.tokens == cfg.tokens);
  CHECK(loaded.params.config.use_layer_norm == false);
  CHECK(loaded.params.config.use_residual == true);

  auto la = p.leaves(), lb = loaded.params.leaves();
  REQUIRE(la.size() == lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) {
    REQUIRE(la[i].size == lb[i].size);
    for (Eigen::Index j = 0; j < la[i].size; ++j) CHECK(la[i].data[j] == lb[i].data[j]);
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loader rejects junk") {
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/posekit/ckpt.bin"), IoError);

  const std::string path = temp_path("posekit_mixer_junk.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "BADMAGIC and some other bytes";
  }
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);

  // Truncated valid header.
  MixerConfig cfg;
  cfg.tokens = 4;
  cfg.channels = 4;
  cfg.layers = 1;
  cfg.token_hidden = 4;
  cfg.channel_hidden = 4;
  save_checkpoint(path, init_params(cfg, 1), 1, 1);
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("config validation rejects degenerate dimensions") {
  MixerConfig cfg;
  cfg.channels = 0;
  CHECK_THROWS_AS(cfg.validate(), ShapeMismatch);
  cfg = MixerConfig{};
  cfg.layers = -1;
  CHECK_THROWS_AS(cfg.validate(), ShapeMismatch);
  CHECK_THROWS_AS(init_params(cfg, 0), ShapeMismatch);
}
