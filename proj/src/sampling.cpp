#include "posekit/sampling.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace posekit {

void SamplerConfig::validate() const {
  if (translation_half_extent.minCoeff() < 0.0) throw Error("sampler: half extents must be >= 0");
  if (noise_sigma < 0.0) throw Error("sampler: noise sigma must be >= 0");
  if (latent_std < 0.0) throw Error("sampler: latent std must be >= 0");
}

Mat3 sample_haar_so3(Philox& rng) {
  double q[4];
  double norm_sq = 0.0;
  do {
    norm_sq = 0.0;
    for (double& c : q) {
      c = rng.normal();
      norm_sq += c * c;
    }
  } while (norm_sq < 1e-24);
  const double inv = 1.0 / std::sqrt(norm_sq);
  const double w = q[0] * inv, x = q[1] * inv, y = q[2] * inv, z = q[3] * inv;

  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

PoseState sample_state(const KinematicModel& model, const SamplerConfig& config, Philox& rng) {
  PoseState s;
  s.r = matrix_to_rot6d(sample_haar_so3(rng));
  for (int i = 0; i < 3; ++i) {
    const double h = config.translation_half_extent[i];
    s.t[i] = h > 0.0 ? rng.uniform(-h, h) : 0.0;
  }
  s.beta = VecX(model.beta_dim());
  for (int i = 0; i < s.beta.size(); ++i) s.beta[i] = config.latent_std * rng.normal();
  s.theta = VecX(model.theta_dim());
  for (int i = 0; i < s.theta.size(); ++i) s.theta[i] = config.latent_std * rng.normal();
  return s;
}

TrainingExample make_training_example(const KinematicModel& model, const SamplerConfig& config,
                                      Philox& rng) {
  TrainingExample ex;
  ex.target = sample_state(model, config, rng);
  const LandmarkSet world = regress_landmarks(model, skin_vertices(model, ex.target));
  ex.clean = center_at_hips(world, model.layout);
  ex.input = ex.clean;
  if (config.noise_sigma > 0.0) {
    for (auto& p : ex.input.points) {
      for (int i = 0; i < 3; ++i) p[i] += config.noise_sigma * rng.normal();
    }
  }
  return ex;
}

TrainingExample make_training_example_at(const KinematicModel& model, const SamplerConfig& config,
                                         std::uint64_t index) {
  Philox rng(config.seed, index);
  return make_training_example(model, config, rng);
}

namespace {

constexpr char kMagic[8] = {'P', 'K', 'D', 'S', 'E', 'T', '0', '1'};

void put_f64(std::ofstream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void put_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

double get_f64(std::ifstream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::uint64_t get_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::uint32_t get_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void put_landmarks(std::ofstream& out, const LandmarkSet& set) {
  for (const auto& p : set.points) {
    put_f64(out, p.x());
    put_f64(out, p.y());
    put_f64(out, p.z());
  }
}

LandmarkSet get_landmarks(std::ifstream& in, int count) {
  LandmarkSet set;
  set.frame = LandmarkFrame::RootCentered;
  set.points.resize(count);
  for (auto& p : set.points) {
    p.x() = get_f64(in);
    p.y() = get_f64(in);
    p.z() = get_f64(in);
  }
  return set;
}

}  // namespace

void generate_dataset(const KinematicModel& model, const SamplerConfig& config,
                      std::uint64_t count, std::uint64_t model_hash_value,
                      const std::string& path) {
  if (count == 0) throw Error("generate_dataset: count must be > 0");
  config.validate();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);

  out.write(kMagic, sizeof(kMagic));
  put_u64(out, count);
  put_u32(out, static_cast<std::uint32_t>(model.landmark_count()));
  put_u32(out, static_cast<std::uint32_t>(model.beta_dim()));
  put_u32(out, static_cast<std::uint32_t>(model.theta_dim()));
  put_u32(out, 0);  // reserved
  put_u64(out, model_hash_value);
  put_u64(out, config.seed);
  for (int i = 0; i < 3; ++i) put_f64(out, config.translation_half_extent[i]);
  put_f64(out, config.noise_sigma);
  put_f64(out, config.latent_std);

  for (std::uint64_t k = 0; k < count; ++k) {
    const TrainingExample ex = make_training_example_at(model, config, k);
    put_landmarks(out, ex.input);
    for (int i = 0; i < 6; ++i) put_f64(out, ex.target.r[i]);
    for (int i = 0; i < 3; ++i) put_f64(out, ex.target.t[i]);
    for (int i = 0; i < ex.target.beta.size(); ++i) put_f64(out, ex.target.beta[i]);
    for (int i = 0; i < ex.target.theta.size(); ++i) put_f64(out, ex.target.theta[i]);
    put_landmarks(out, ex.clean);
  }
  if (!out) throw IoError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw ParseError("dataset: bad magic: " + path);
  }

  Dataset ds;
  const std::uint64_t count = get_u64(in);
  ds.landmark_total = get_u32(in);
  ds.beta_dim = get_u32(in);
  ds.theta_dim = get_u32(in);
  get_u32(in);  // reserved
  ds.model_hash = get_u64(in);
  ds.config.seed = get_u64(in);
  for (int i = 0; i < 3; ++i) ds.config.translation_half_extent[i] = get_f64(in);
  ds.config.noise_sigma = get_f64(in);
  ds.config.latent_std = get_f64(in);

  ds.examples.resize(count);
  const int s = static_cast<int>(ds.landmark_total);
  for (auto& ex : ds.examples) {
    ex.input = get_landmarks(in, s);
    for (int i = 0; i < 6; ++i) ex.target.r[i] = get_f64(in);
    for (int i = 0; i < 3; ++i) ex.target.t[i] = get_f64(in);
    ex.target.beta = VecX(ds.beta_dim);
    for (int i = 0; i < ex.target.beta.size(); ++i) ex.target.beta[i] = get_f64(in);
    ex.target.theta = VecX(ds.theta_dim);
    for (int i = 0; i < ex.target.theta.size(); ++i) ex.target.theta[i] = get_f64(in);
    ex.clean = get_landmarks(in, s);
  }
  if (!in) throw ParseError("dataset: truncated file: " + path);
  return ds;
}

void export_dataset_json(const Dataset& dataset, const std::string& path) {
  using nlohmann::json;
  json doc;
  doc["format"] = "posekit-dataset";
  doc["version"] = 1;
  doc["count"] = dataset.examples.size();
  doc["landmark_total"] = dataset.landmark_total;
  doc["beta_dim"] = dataset.beta_dim;
  doc["theta_dim"] = dataset.theta_dim;
  doc["model_hash"] = dataset.model_hash;
  doc["config"] = {
      {"seed", dataset.config.seed},
      {"translation_half_extent",
       {dataset.config.translation_half_extent.x(), dataset.config.translation_half_extent.y(),
        dataset.config.translation_half_extent.z()}},
      {"noise_sigma", dataset.config.noise_sigma},
      {"latent_std", dataset.config.latent_std},
  };
  json examples = json::array();
  const auto landmarks_json = [](const LandmarkSet& set) {
    json arr = json::array();
    for (const auto& p : set.points) arr.push_back(json::array({p.x(), p.y(), p.z()}));
    return arr;
  };
  for (const auto& ex : dataset.examples) {
    json e;
    e["input"] = landmarks_json(ex.input);
    e["target"] = {
        {"r", std::vector<double>(ex.target.r.data(), ex.target.r.data() + 6)},
        {"t", {ex.target.t.x(), ex.target.t.y(), ex.target.t.z()}},
        {"beta", std::vector<double>(ex.target.beta.data(), ex.target.beta.data() + ex.target.beta.size())},
        {"theta", std::vector<double>(ex.target.theta.data(), ex.target.theta.data() + ex.target.theta.size())},
    };
    e["clean"] = landmarks_json(ex.clean);
    examples.push_back(std::move(e));
  }
  doc["examples"] = std::move(examples);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << doc.dump() << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace posekit
