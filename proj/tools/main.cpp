#include "posekit/body_model.hpp"
#include "posekit/fitting.hpp"
#include "posekit/metrics.hpp"
#include "posekit/mixer.hpp"
#include "posekit/model_io.hpp"
#include "posekit/obj_export.hpp"
#include "posekit/sampling.hpp"
#include "posekit/trainer.hpp"

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace {

using namespace posekit;
using nlohmann::json;

VecX json_array_to_vec(const json& j) {
  VecX v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

// Accepts either a bare state object or a fit report (whose state lives
// under the "state" key), so reports pipe straight into export-obj.
PoseState load_state_file(const KinematicModel& model, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open state file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("state file: ") + e.what());
  }
  if (j.contains("state")) j = j["state"];
  try {
    PoseState st;
    const VecX r = json_array_to_vec(j.at("r"));
    const VecX t = json_array_to_vec(j.at("t"));
    if (r.size() != 6 || t.size() != 3) throw ParseError("state file: r must be 6-dim, t 3-dim");
    st.r = r;
    st.t = t;
    st.beta = json_array_to_vec(j.at("beta"));
    st.theta = json_array_to_vec(j.at("theta"));
    if (st.beta.size() != model.beta_dim() || st.theta.size() != model.theta_dim()) {
      throw ParseError("state file: latent sizes do not match the model");
    }
    return st;
  } catch (const json::exception& e) {
    throw ParseError(std::string("state file: ") + e.what());
  }
}

MatX load_landmarks_file(const std::string& path, int expected_rows) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open landmarks file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("landmarks file: ") + e.what());
  }
  if (j.contains("points")) j = j["points"];
  if (!j.is_array() || static_cast<int>(j.size()) != expected_rows) {
    throw ParseError("landmarks file: expected " + std::to_string(expected_rows) + " rows");
  }
  MatX m(expected_rows, 3);
  for (int s = 0; s < expected_rows; ++s) {
    const json& row = j[static_cast<std::size_t>(s)];
    if (!row.is_array() || row.size() != 3) throw ParseError("landmarks file: rows must be xyz");
    for (int k = 0; k < 3; ++k) m(s, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

struct MakeModelArgs {
  std::string out;
  ToyModelConfig config;
};

void run_make_model(const MakeModelArgs& a) {
  const KinematicModel model = make_toy_model(a.config);
  save_model(model, a.out);
  std::printf("model: %d joints, %d vertices, %d landmarks, %zu triangles, hash %016llx\n",
              model.joint_count, model.vertex_count(), model.landmark_count(),
              model.triangles.size(),
              static_cast<unsigned long long>(model_hash(model)));
  std::printf("wrote %s\n", a.out.c_str());
}

struct GenerateArgs {
  std::string model_path;
  std::string out;
  std::string export_json;
  std::uint64_t count = 1000;
  SamplerConfig config;
  double half_extent = 0.1;
};

void run_generate(GenerateArgs a) {
  const KinematicModel model = load_model(a.model_path);
  a.config.translation_half_extent = Vec3::Constant(a.half_extent);
  generate_dataset(model, a.config, a.count, model_hash(model), a.out);
  std::printf("wrote %llu examples (S=%d, noise=%g, seed=%llu, model %016llx) to %s\n",
              static_cast<unsigned long long>(a.count), model.landmark_count(),
              a.config.noise_sigma, static_cast<unsigned long long>(a.config.seed),
              static_cast<unsigned long long>(model_hash(model)), a.out.c_str());
  if (!a.export_json.empty()) {
    export_dataset_json(load_dataset(a.out), a.export_json);
    std::printf("wrote JSON mirror to %s\n", a.export_json.c_str());
  }
}

struct TrainArgs {
  std::string model_path;
  std::string dataset_path;
  std::string out = "checkpoint.pkmix";
  std::string log_path;
  MixerConfig mixer;
  TrainConfig train;
  int tokens_override = 0;
  bool no_layer_norm = false;
  bool no_residual = false;
};

void run_train(TrainArgs a) {
  const KinematicModel model = load_model(a.model_path);
  const Dataset dataset = load_dataset(a.dataset_path);
  if (dataset.model_hash != model_hash(model)) {
    throw Error("dataset was generated from a different model (hash mismatch)");
  }
  a.mixer.tokens = a.tokens_override > 0 ? a.tokens_override : model.landmark_count();
  a.mixer.beta_dim = model.beta_dim();
  a.mixer.theta_dim = model.theta_dim();
  a.mixer.use_layer_norm = !a.no_layer_norm;
  a.mixer.use_residual = !a.no_residual;

  const TrainResult result = train(model, dataset, a.mixer, a.train, a.log_path);
  save_checkpoint(a.out, result.best_params, a.train.seed, result.best_step);
  std::printf("checkpoint %s (best step %llu)\n", a.out.c_str(),
              static_cast<unsigned long long>(result.best_step));
  std::printf("held-out MPJPE %.3f mm, MPJPE-PA %.3f mm\n", result.best_eval.mpjpe_mm,
              result.best_eval.mpjpe_pa_mm);
}

struct EvalArgs {
  std::string model_path;
  std::string dataset_path;
  std::string checkpoint_path;
  std::string split = "heldout";
};

void run_eval(const EvalArgs& a) {
  const KinematicModel model = load_model(a.model_path);
  const Dataset dataset = load_dataset(a.dataset_path);
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint_path);
  const LandmarkEvaluator evaluator(model);
  const std::size_t n = dataset.examples.size();
  if (n == 0) throw Error("eval: empty dataset");
  std::size_t begin = 0;
  if (a.split == "heldout") {
    begin = n - std::max<std::size_t>(1, n / 10);
  } else if (a.split != "all") {
    throw Error("eval: --split must be 'heldout' or 'all'");
  }
  const EvalMetrics m = evaluate(evaluator, ck.params, dataset, begin, n);
  std::printf("MPJPE %.3f mm | MPJPE-PA %.3f mm | rot %.3f deg | t %.3f mm | "
              "beta RMSE %.4f | theta RMSE %.4f (n=%d)\n",
              m.mpjpe_mm, m.mpjpe_pa_mm, m.rot_err_deg, m.t_err_mm, m.beta_rmse, m.theta_rmse,
              m.examples);
}

struct FitArgs {
  std::string model_path;
  std::string problem_path;
  std::string out = "fit_report.json";
  bool init_truth = false;
};

void run_fit(const FitArgs& a) {
  const KinematicModel model = load_model(a.model_path);
  const LandmarkEvaluator evaluator(model);
  const FitProblem problem = load_fit_problem(a.problem_path);
  PoseState init;
  const PoseState* init_ptr = nullptr;
  if (a.init_truth) {
    if (!problem.has_truth) throw Error("fit: --init-truth needs a truth block in the problem");
    init = problem.truth_state();
    init_ptr = &init;
  }
  FitReport report = fit(evaluator, problem, init_ptr);
  if (problem.has_truth) {
    report.has_truth_error = true;
    const PoseState truth = problem.truth_state();
    report.truth_mpjpe_mm = state_mpjpe_mm(evaluator, report.state, truth, false);
    report.truth_mpjpe_root_centered_mm = state_mpjpe_mm(evaluator, report.state, truth, true);
  }
  save_fit_report(report, a.out);
  std::printf("fit loss %.6g (reprojection %.6g", report.total, report.reprojection);
  if (report.has_constraints) {
    std::printf(", ordinal %.6g)\n", report.ordinal);
    std::printf("depth order error: %.3f before -> %.3f after\n", report.depth_error_before,
                report.depth_error_after);
  } else {
    std::printf(", no ordinal constraints)\n");
  }
  if (report.has_truth_error) {
    std::printf("MPJPE to truth: %.3f mm (root-centered %.3f mm)\n", report.truth_mpjpe_mm,
                report.truth_mpjpe_root_centered_mm);
  }
  std::printf("wrote %s\n", a.out.c_str());
}

struct ExportObjArgs {
  std::string model_path;
  std::string out;
  std::string state_path;
  std::string checkpoint_path;
  std::string landmarks_path;
};

void run_export_obj(const ExportObjArgs& a) {
  const KinematicModel model = load_model(a.model_path);
  PoseState state = PoseState::zero(model);
  if (!a.state_path.empty()) {
    state = load_state_file(model, a.state_path);
  } else if (!a.checkpoint_path.empty() || !a.landmarks_path.empty()) {
    if (a.checkpoint_path.empty() || a.landmarks_path.empty()) {
      throw Error("export-obj: --checkpoint and --landmarks must be given together");
    }
    const LoadedCheckpoint ck = load_checkpoint(a.checkpoint_path);
    const MatX landmarks = load_landmarks_file(a.landmarks_path, ck.params.config.tokens);
    state = mixer_forward(ck.params, landmarks);
  }
  export_obj(model, state, a.out);
  std::printf("wrote %d vertices, %zu faces to %s\n", model.vertex_count(),
              model.triangles.size(), a.out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"posekit: parametric body model, synthetic landmark datasets, lifter training, "
               "2D keypoint fitting"};
  app.require_subcommand(1);

  MakeModelArgs mm;
  auto* make_model = app.add_subcommand("make-model", "Write the built-in desk-scale body model");
  make_model->add_option("--out", mm.out, "Output model JSON path")->required();
  make_model->add_option("--seed", mm.config.seed, "Model construction seed");
  make_model->add_option("--vertices", mm.config.vertex_count, "Approximate mesh vertex count");
  make_model->add_option("--beta-dim", mm.config.beta_dim, "Shape latent dimension");
  make_model->add_option("--theta-dim", mm.config.theta_dim, "Pose latent dimension");
  make_model->callback([&mm]() { run_make_model(mm); });

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Sample a synthetic training dataset");
  generate->add_option("--model", gen.model_path, "Model JSON path")->required();
  generate->add_option("--out", gen.out, "Output dataset path")->required();
  generate->add_option("--count", gen.count, "Number of examples");
  generate->add_option("--seed", gen.config.seed, "Sampling seed");
  generate->add_option("--noise", gen.config.noise_sigma, "Input landmark noise sigma (m)");
  generate->add_option("--half-extent", gen.half_extent, "Translation half extent (m)");
  generate->add_option("--latent-std", gen.config.latent_std, "Latent sampling std");
  generate->add_option("--export-json", gen.export_json, "Also write a JSON mirror here");
  generate->callback([&gen]() { run_generate(gen); });

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the lifter on a dataset");
  train_cmd->add_option("--model", tr.model_path, "Model JSON path")->required();
  train_cmd->add_option("--dataset", tr.dataset_path, "Dataset path")->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint output path");
  train_cmd->add_option("--log", tr.log_path, "Metrics CSV output path");
  train_cmd->add_option("--tokens", tr.tokens_override, "Token count (default: model landmarks)");
  train_cmd->add_option("--channels", tr.mixer.channels, "Hidden channel width");
  train_cmd->add_option("--layers", tr.mixer.layers, "Mixer layer count");
  train_cmd->add_option("--token-hidden", tr.mixer.token_hidden, "Token MLP hidden width");
  train_cmd->add_option("--channel-hidden", tr.mixer.channel_hidden, "Channel MLP hidden width");
  train_cmd->add_flag("--no-layer-norm", tr.no_layer_norm, "Disable pre-normalization");
  train_cmd->add_flag("--no-residual", tr.no_residual, "Disable residual connections");
  train_cmd->add_option("--steps", tr.train.steps, "Optimization steps");
  train_cmd->add_option("--batch-size", tr.train.batch_size, "Batch size");
  train_cmd->add_option("--lr", tr.train.learning_rate, "Adam learning rate");
  train_cmd->add_option("--eval-every", tr.train.eval_every, "Eval cadence in steps");
  train_cmd->add_option("--seed", tr.train.seed, "Training seed (init + batch order)");
  train_cmd->add_option("--warmup", tr.train.warmup_steps, "Linear warmup steps (0 = off)");
  train_cmd->add_option("--w-r", tr.train.w_r, "Rotation loss weight");
  train_cmd->add_option("--w-t", tr.train.w_t, "Translation loss weight");
  train_cmd->add_option("--w-beta", tr.train.w_beta, "Shape latent loss weight");
  train_cmd->add_option("--w-theta", tr.train.w_theta, "Pose latent loss weight");
  train_cmd->add_option("--w-x", tr.train.w_x, "Landmark reconstruction loss weight");
  train_cmd->callback([&tr]() { run_train(tr); });

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--model", ev.model_path, "Model JSON path")->required();
  eval_cmd->add_option("--dataset", ev.dataset_path, "Dataset path")->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint_path, "Checkpoint path")->required();
  eval_cmd->add_option("--split", ev.split, "'heldout' (last 10%) or 'all'");
  eval_cmd->callback([&ev]() { run_eval(ev); });

  FitArgs ft;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a state to 2D observations");
  fit_cmd->add_option("--model", ft.model_path, "Model JSON path")->required();
  fit_cmd->add_option("--problem", ft.problem_path, "Fit problem JSON path")->required();
  fit_cmd->add_option("--out", ft.out, "Report JSON output path");
  fit_cmd->add_flag("--init-truth", ft.init_truth, "Start from the problem's truth block");
  fit_cmd->callback([&ft]() { run_fit(ft); });

  ExportObjArgs ex;
  auto* export_cmd = app.add_subcommand("export-obj", "Export a posed mesh as OBJ");
  export_cmd->add_option("--model", ex.model_path, "Model JSON path")->required();
  export_cmd->add_option("--out", ex.out, "OBJ output path")->required();
  export_cmd->add_option("--state", ex.state_path, "State JSON (bare state or fit report)");
  export_cmd->add_option("--checkpoint", ex.checkpoint_path, "Lifter checkpoint path");
  export_cmd->add_option("--landmarks", ex.landmarks_path, "Landmark JSON to lift into a state");
  export_cmd->callback([&ex]() { run_export_obj(ex); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const DivergedError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
