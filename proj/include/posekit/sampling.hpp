#pragma once

#include "posekit/body_model.hpp"
#include "posekit/philox.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace posekit {

struct SamplerConfig {
  std::uint64_t seed = 0;
  Vec3 translation_half_extent = Vec3(0.1, 0.1, 0.1);  // meters
  double noise_sigma = 0.005;                          // meters
  double latent_std = 1.0;

  void validate() const;
};

struct TrainingExample {
  LandmarkSet input;   // root-centered, noise added
  PoseState target;
  LandmarkSet clean;   // root-centered, noise-free
};

// Uniform (Haar) rotation: a quaternion drawn uniformly from S^3.
Mat3 sample_haar_so3(Philox& rng);

PoseState sample_state(const KinematicModel& model, const SamplerConfig& config, Philox& rng);

// Landmarks of a sampled state, root-centered, plus per-coordinate Gaussian
// noise of std noise_sigma on the input copy.
TrainingExample make_training_example(const KinematicModel& model, const SamplerConfig& config,
                                      Philox& rng);

// Deterministic per-index substream (seed, index), so example #k can be
// regenerated in isolation.
TrainingExample make_training_example_at(const KinematicModel& model, const SamplerConfig& config,
                                         std::uint64_t index);

struct Dataset {
  std::uint32_t landmark_total = 0;
  std::uint32_t beta_dim = 0;
  std::uint32_t theta_dim = 0;
  std::uint64_t model_hash = 0;
  SamplerConfig config;
  std::vector<TrainingExample> examples;
};

// Binary dataset file: fixed header, then per example the noisy input, the
// target state and the clean landmarks as little-endian f64.
void generate_dataset(const KinematicModel& model, const SamplerConfig& config,
                      std::uint64_t count, std::uint64_t model_hash_value,
                      const std::string& path);

Dataset load_dataset(const std::string& path);

// Lossless JSON mirror of the binary file, for debugging.
void export_dataset_json(const Dataset& dataset, const std::string& path);

}  // namespace posekit
