#include "posekit/fitting.hpp"

#include "posekit/philox.hpp"
#include "posekit/sampling.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace posekit {

namespace {

using nlohmann::json;

double softplus(double x) {
  // log(1 + e^x) without overflow on either tail.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  return x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Huber value and derivative w.r.t. the residual magnitude.
void huber(double e, double delta, double& value, double& slope) {
  if (e <= delta) {
    value = 0.5 * e * e;
    slope = e;
  } else {
    value = delta * (e - 0.5 * delta);
    slope = delta;
  }
}

EdgeRef normalized(const EdgeRef& e) {
  return e.a <= e.b ? e : EdgeRef{e.b, e.a};
}

bool same_edge(const EdgeRef& x, const EdgeRef& y) {
  const EdgeRef a = normalized(x);
  const EdgeRef b = normalized(y);
  return a.a == b.a && a.b == b.b;
}

json state_to_json(const Vec6& r, const Vec3& t, const VecX& beta, const VecX& theta) {
  json j;
  j["r"] = std::vector<double>(r.data(), r.data() + 6);
  j["t"] = std::vector<double>(t.data(), t.data() + 3);
  j["beta"] = std::vector<double>(beta.data(), beta.data() + beta.size());
  j["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
  return j;
}

VecX json_to_vecx(const json& j) {
  VecX v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

}  // namespace

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error("camera: focal lengths must be positive");
}

Vec2 project(const Camera& camera, const Vec3& point) {
  if (point.z() <= 1e-6) throw BehindCamera("projection: point depth <= 1e-6 m");
  return Vec2(camera.fx * point.x() / point.z() + camera.cx,
              camera.fy * point.y() / point.z() + camera.cy);
}

PoseState FitProblem::truth_state() const {
  PoseState s;
  s.r = truth_r;
  s.t = truth_t;
  s.beta = truth_beta;
  s.theta = truth_theta;
  return s;
}

int FitProblem::observed_count() const {
  int n = 0;
  for (const auto& obs : observations) {
    if (obs.confidence > 0.0) ++n;
  }
  return n;
}

void FitProblem::validate(int landmark_count) const {
  camera.validate();
  if (static_cast<int>(observations.size()) != landmark_count) {
    throw LayoutMismatch("fit problem: expected " + std::to_string(landmark_count) +
                         " observations, got " + std::to_string(observations.size()));
  }
  for (const auto& obs : observations) {
    if (!(obs.confidence >= 0.0 && obs.confidence <= 1.0)) {
      throw Error("fit problem: confidences must lie in [0, 1]");
    }
  }
  if (weights.w_2d < 0.0 || weights.w_ord < 0.0 || weights.w_reg_beta < 0.0 ||
      weights.w_reg_theta < 0.0) {
    throw Error("fit problem: weights must be >= 0");
  }
  if (iterations < 0) throw Error("fit problem: iterations must be >= 0");
  if (!(step_size > 0.0)) throw Error("fit problem: step size must be positive");
  if (restarts < 1) throw Error("fit problem: needs at least one restart");
  if (!(tau > 0.0)) throw Error("fit problem: tau must be positive");
  for (const auto& c : constraints) {
    for (const int idx : {c.subject.a, c.subject.b, c.object.a, c.object.b}) {
      if (idx < 0 || idx >= landmark_count) {
        throw Error("fit problem: constraint references landmark " + std::to_string(idx) +
                    " outside the layout");
      }
    }
    if (same_edge(c.subject, c.object)) {
      throw Error("fit problem: a constraint must relate two distinct references");
    }
  }
}

double reprojection_loss(const FitProblem& problem, const LandmarkEvaluator& evaluator,
                         const PoseState& state, VecX* grad) {
  const std::vector<Vec3> x = evaluator.landmarks(state);
  const int s_total = static_cast<int>(x.size());
  std::vector<Vec3> gx;
  if (grad) gx.assign(static_cast<std::size_t>(s_total), Vec3::Zero());

  double loss = 0.0;
  int observed = 0;
  for (int s = 0; s < s_total; ++s) {
    const Observation2D& obs = problem.observations[static_cast<std::size_t>(s)];
    if (obs.confidence <= 0.0) continue;
    ++observed;
    const Vec2 uv = project(problem.camera, x[static_cast<std::size_t>(s)]);
    const Vec2 res = uv - obs.uv;
    const double e = res.norm();
    double value = 0.0;
    double slope = 0.0;
    huber(e, kHuberDeltaPx, value, slope);
    loss += obs.confidence * value;
    if (grad && e > 1e-12) {
      const Vec2 d_uv = obs.confidence * (slope / e) * res;
      const double z = x[static_cast<std::size_t>(s)].z();
      const double inv_z = 1.0 / z;
      Vec3 g;
      g.x() = problem.camera.fx * inv_z * d_uv.x();
      g.y() = problem.camera.fy * inv_z * d_uv.y();
      g.z() = -(problem.camera.fx * x[static_cast<std::size_t>(s)].x() * inv_z * inv_z) * d_uv.x() -
              (problem.camera.fy * x[static_cast<std::size_t>(s)].y() * inv_z * inv_z) * d_uv.y();
      gx[static_cast<std::size_t>(s)] = g;
    }
  }
  if (observed == 0) {
    if (grad) grad->setZero(evaluator.model().state_dim());
    return 0.0;
  }
  loss /= observed;
  if (grad) {
    for (auto& g : gx) g /= static_cast<double>(observed);
    *grad = evaluator.pullback(state, gx);
  }
  return loss;
}

std::vector<double> landmark_depths(const std::vector<Vec3>& landmarks) {
  std::vector<double> z(landmarks.size());
  for (std::size_t i = 0; i < landmarks.size(); ++i) z[i] = landmarks[i].z();
  return z;
}

double edge_depth(const EdgeRef& edge, const std::vector<double>& depths) {
  return 0.5 * (depths[static_cast<std::size_t>(edge.a)] +
                depths[static_cast<std::size_t>(edge.b)]);
}

double ordinal_loss(const std::vector<OrdinalConstraint>& constraints,
                    const std::vector<double>& depths, double tau,
                    std::vector<double>* d_depths) {
  if (d_depths) d_depths->assign(depths.size(), 0.0);
  double loss = 0.0;
  for (const auto& c : constraints) {
    const double z_sub = edge_depth(c.subject, depths);
    const double z_obj = edge_depth(c.object, depths);
    // "closer" = smaller depth, so the penalized gap is closer minus farther.
    const double gap =
        c.relation == OrdinalRelation::ACloser ? (z_sub - z_obj) : (z_obj - z_sub);
    const double d = gap / tau;
    loss += softplus(d);
    if (d_depths) {
      const double sgn = c.relation == OrdinalRelation::ACloser ? 1.0 : -1.0;
      const double slope = sigmoid(d) / tau * sgn;
      (*d_depths)[static_cast<std::size_t>(c.subject.a)] += 0.5 * slope;
      (*d_depths)[static_cast<std::size_t>(c.subject.b)] += 0.5 * slope;
      (*d_depths)[static_cast<std::size_t>(c.object.a)] -= 0.5 * slope;
      (*d_depths)[static_cast<std::size_t>(c.object.b)] -= 0.5 * slope;
    }
  }
  return loss;
}

double depth_order_error(const std::vector<OrdinalConstraint>& constraints,
                         const std::vector<double>& depths) {
  if (constraints.empty()) throw EmptyConstraints("depth_order_error: no constraints");
  int violations = 0;
  for (const auto& c : constraints) {
    const double z_sub = edge_depth(c.subject, depths);
    const double z_obj = edge_depth(c.object, depths);
    const bool satisfied =
        c.relation == OrdinalRelation::ACloser ? (z_sub < z_obj) : (z_obj < z_sub);
    if (!satisfied) ++violations;
  }
  return static_cast<double>(violations) / static_cast<double>(constraints.size());
}

LossBreakdown fit_loss(const LandmarkEvaluator& evaluator, const FitProblem& problem,
                       const PoseState& state) {
  const KinematicModel& model = evaluator.model();
  const std::vector<Vec3> x = evaluator.landmarks(state);
  const int s_total = static_cast<int>(x.size());
  std::vector<Vec3> gx(static_cast<std::size_t>(s_total), Vec3::Zero());

  LossBreakdown out;

  double reproj = 0.0;
  int observed = 0;
  for (int s = 0; s < s_total; ++s) {
    const Observation2D& obs = problem.observations[static_cast<std::size_t>(s)];
    if (obs.confidence <= 0.0) continue;
    ++observed;
    const Vec3& p = x[static_cast<std::size_t>(s)];
    const Vec2 uv = project(problem.camera, p);
    const Vec2 res = uv - obs.uv;
    const double e = res.norm();
    double value = 0.0;
    double slope = 0.0;
    huber(e, kHuberDeltaPx, value, slope);
    reproj += obs.confidence * value;
    if (e > 1e-12) {
      const Vec2 d_uv = obs.confidence * (slope / e) * res;
      const double inv_z = 1.0 / p.z();
      gx[static_cast<std::size_t>(s)].x() += problem.camera.fx * inv_z * d_uv.x();
      gx[static_cast<std::size_t>(s)].y() += problem.camera.fy * inv_z * d_uv.y();
      gx[static_cast<std::size_t>(s)].z() -=
          (problem.camera.fx * p.x() * inv_z * inv_z) * d_uv.x() +
          (problem.camera.fy * p.y() * inv_z * inv_z) * d_uv.y();
    }
  }
  if (observed > 0) {
    reproj /= observed;
    const double scale = problem.weights.w_2d / observed;
    for (auto& g : gx) g *= scale;
  }
  out.reprojection = reproj;
  out.total += problem.weights.w_2d * reproj;

  if (!problem.constraints.empty()) {
    std::vector<double> d_depths;
    out.ordinal = ordinal_loss(problem.constraints, landmark_depths(x), problem.tau, &d_depths);
    out.total += problem.weights.w_ord * out.ordinal;
    for (int s = 0; s < s_total; ++s) {
      gx[static_cast<std::size_t>(s)].z() +=
          problem.weights.w_ord * d_depths[static_cast<std::size_t>(s)];
    }
  }

  out.grad = evaluator.pullback(state, gx);

  out.reg_beta = state.beta.squaredNorm();
  out.reg_theta = state.theta.squaredNorm();
  out.total += problem.weights.w_reg_beta * out.reg_beta;
  out.total += problem.weights.w_reg_theta * out.reg_theta;
  out.grad.segment(9, model.beta_dim()) += 2.0 * problem.weights.w_reg_beta * state.beta;
  out.grad.segment(9 + model.beta_dim(), model.theta_dim()) +=
      2.0 * problem.weights.w_reg_theta * state.theta;
  return out;
}

FitReport fit(const LandmarkEvaluator& evaluator, const FitProblem& problem,
              const PoseState* init) {
  const KinematicModel& model = evaluator.model();
  problem.validate(model.landmark_count());
  if (problem.observed_count() < 4) {
    throw InsufficientObservations("fit: needs at least 4 observed landmarks, got " +
                                   std::to_string(problem.observed_count()));
  }

  PoseState base = init ? *init : PoseState::zero(model);
  if (!init) base.t = Vec3(0.0, 0.0, problem.init_depth);

  std::vector<PoseState> starts;
  starts.push_back(base);
  Philox rng(problem.seed, 0xF17u);
  for (int k = 1; k < problem.restarts; ++k) {
    PoseState s = base;
    if (init) {
      // Stay near the caller's initialization: small rotation and shift.
      Vec3 axis(rng.normal(), rng.normal(), rng.normal());
      if (axis.norm() < 1e-12) axis = Vec3::UnitX();
      axis.normalize();
      s.r = matrix_to_rot6d(axis_angle_matrix(axis, 0.3 * rng.normal()) * rot6d_to_matrix(base.r));
      s.t += 0.1 * Vec3(rng.normal(), rng.normal(), rng.normal());
    } else {
      s.r = matrix_to_rot6d(sample_haar_so3(rng));
      s.t = base.t + 0.2 * Vec3(rng.normal(), rng.normal(), rng.normal());
    }
    starts.push_back(s);
  }

  const double inf = std::numeric_limits<double>::infinity();
  FitReport report;
  report.has_constraints = !problem.constraints.empty();
  if (report.has_constraints) {
    report.depth_error_before =
        depth_order_error(problem.constraints, landmark_depths(evaluator.landmarks(starts[0])));
  }

  double best_loss = inf;
  PoseState best_state = starts[0];
  for (std::size_t restart = 0; restart < starts.size(); ++restart) {
    double restart_best = inf;
    PoseState restart_state = starts[restart];
    try {
      VecX x = starts[restart].flatten();
      VecX m = VecX::Zero(x.size());
      VecX v = VecX::Zero(x.size());
      const double b1 = 0.9;
      const double b2 = 0.999;
      const double eps = 1e-8;
      for (int it = 0; it <= problem.iterations; ++it) {
        const PoseState st = PoseState::unflatten(model, x);
        const LossBreakdown lb = fit_loss(evaluator, problem, st);
        if (!std::isfinite(lb.total)) break;
        if (lb.total < restart_best) {
          restart_best = lb.total;
          restart_state = st;
        }
        if (it == problem.iterations) break;
        const double t = static_cast<double>(it + 1);
        m = b1 * m + (1.0 - b1) * lb.grad;
        v = b2 * v + (1.0 - b2) * lb.grad.cwiseProduct(lb.grad);
        const VecX m_hat = m / (1.0 - std::pow(b1, t));
        const VecX v_hat = v / (1.0 - std::pow(b2, t));
        x -= problem.step_size * (m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
      }
    } catch (const BehindCamera&) {
      // This restart wandered out of the camera's view; drop it.
    }
    report.restart_losses.push_back(restart_best);
    if (restart_best < best_loss) {
      best_loss = restart_best;
      best_state = restart_state;
      report.best_restart = static_cast<int>(restart);
    }
  }
  if (!std::isfinite(best_loss)) {
    throw DivergedError("fit: no restart produced a finite loss");
  }

  const LossBreakdown lb = fit_loss(evaluator, problem, best_state);
  report.state = best_state;
  report.total = lb.total;
  report.reprojection = lb.reprojection;
  report.ordinal = lb.ordinal;
  report.reg_beta = lb.reg_beta;
  report.reg_theta = lb.reg_theta;
  if (report.has_constraints) {
    report.depth_error_after =
        depth_order_error(problem.constraints, landmark_depths(evaluator.landmarks(best_state)));
  }
  return report;
}

double state_mpjpe_mm(const LandmarkEvaluator& evaluator, const PoseState& a, const PoseState& b,
                      bool root_centered) {
  std::vector<Vec3> xa = evaluator.landmarks(a);
  std::vector<Vec3> xb = evaluator.landmarks(b);
  if (root_centered) {
    const LandmarkLayout& layout = evaluator.model().layout;
    const Vec3 ca = 0.5 * (xa[layout.left_hip] + xa[layout.right_hip]);
    const Vec3 cb = 0.5 * (xb[layout.left_hip] + xb[layout.right_hip]);
    for (auto& p : xa) p -= ca;
    for (auto& p : xb) p -= cb;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < xa.size(); ++i) sum += (xa[i] - xb[i]).norm();
  return sum / static_cast<double>(xa.size()) * 1000.0;
}

void save_fit_problem(const FitProblem& problem, const std::string& path) {
  json j;
  j["format"] = "posekit-fit-problem";
  j["version"] = 1;
  j["camera"] = {{"fx", problem.camera.fx},
                 {"fy", problem.camera.fy},
                 {"cx", problem.camera.cx},
                 {"cy", problem.camera.cy}};
  json obs = json::array();
  for (const auto& o : problem.observations) {
    obs.push_back({o.uv.x(), o.uv.y(), o.confidence});
  }
  j["observations"] = std::move(obs);
  json cons = json::array();
  for (const auto& c : problem.constraints) {
    cons.push_back({{"subject", {c.subject.a, c.subject.b}},
                    {"object", {c.object.a, c.object.b}},
                    {"relation", c.relation == OrdinalRelation::ACloser ? "A_closer" : "B_closer"}});
  }
  j["constraints"] = std::move(cons);
  j["weights"] = {{"w_2d", problem.weights.w_2d},
                  {"w_ord", problem.weights.w_ord},
                  {"w_reg_beta", problem.weights.w_reg_beta},
                  {"w_reg_theta", problem.weights.w_reg_theta}};
  j["iterations"] = problem.iterations;
  j["step_size"] = problem.step_size;
  j["seed"] = problem.seed;
  j["restarts"] = problem.restarts;
  j["tau"] = problem.tau;
  j["init_depth"] = problem.init_depth;
  if (problem.has_truth) {
    j["truth"] = state_to_json(problem.truth_r, problem.truth_t, problem.truth_beta,
                               problem.truth_theta);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open fit problem for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

FitProblem load_fit_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fit problem: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("fit problem: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "posekit-fit-problem") {
      throw ParseError("fit problem: unexpected format tag");
    }
    FitProblem p;
    const json& cam = j.at("camera");
    p.camera.fx = cam.at("fx").get<double>();
    p.camera.fy = cam.at("fy").get<double>();
    p.camera.cx = cam.at("cx").get<double>();
    p.camera.cy = cam.at("cy").get<double>();
    for (const auto& o : j.at("observations")) {
      Observation2D obs;
      obs.uv = Vec2(o.at(0).get<double>(), o.at(1).get<double>());
      obs.confidence = o.at(2).get<double>();
      p.observations.push_back(obs);
    }
    for (const auto& c : j.at("constraints")) {
      OrdinalConstraint oc;
      oc.subject = EdgeRef{c.at("subject").at(0).get<int>(), c.at("subject").at(1).get<int>()};
      oc.object = EdgeRef{c.at("object").at(0).get<int>(), c.at("object").at(1).get<int>()};
      const std::string rel = c.at("relation").get<std::string>();
      if (rel == "A_closer") {
        oc.relation = OrdinalRelation::ACloser;
      } else if (rel == "B_closer") {
        oc.relation = OrdinalRelation::BCloser;
      } else {
        throw ParseError("fit problem: unknown relation '" + rel + "'");
      }
      p.constraints.push_back(oc);
    }
    const json& w = j.at("weights");
    p.weights.w_2d = w.at("w_2d").get<double>();
    p.weights.w_ord = w.at("w_ord").get<double>();
    p.weights.w_reg_beta = w.at("w_reg_beta").get<double>();
    p.weights.w_reg_theta = w.at("w_reg_theta").get<double>();
    p.iterations = j.at("iterations").get<int>();
    p.step_size = j.at("step_size").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.restarts = j.at("restarts").get<int>();
    p.tau = j.at("tau").get<double>();
    p.init_depth = j.at("init_depth").get<double>();
    if (j.contains("truth")) {
      const json& tr = j.at("truth");
      const VecX r = json_to_vecx(tr.at("r"));
      const VecX t = json_to_vecx(tr.at("t"));
      if (r.size() != 6 || t.size() != 3) throw ParseError("fit problem: bad truth block");
      p.has_truth = true;
      p.truth_r = r;
      p.truth_t = t;
      p.truth_beta = json_to_vecx(tr.at("beta"));
      p.truth_theta = json_to_vecx(tr.at("theta"));
    }
    return p;
  } catch (const json::exception& e) {
    throw ParseError(std::string("fit problem: ") + e.what());
  }
}

void save_fit_report(const FitReport& report, const std::string& path) {
  json j;
  j["format"] = "posekit-fit-report";
  j["version"] = 1;
  j["state"] = state_to_json(report.state.r, report.state.t, report.state.beta,
                             report.state.theta);
  j["losses"] = {{"total", report.total},
                 {"reprojection", report.reprojection},
                 {"ordinal", report.has_constraints ? json(report.ordinal) : json(nullptr)},
                 {"reg_beta", report.reg_beta},
                 {"reg_theta", report.reg_theta}};
  j["depth_order_error"] = {
      {"before", report.has_constraints ? json(report.depth_error_before) : json(nullptr)},
      {"after", report.has_constraints ? json(report.depth_error_after) : json(nullptr)}};
  j["restart_losses"] = report.restart_losses;
  j["best_restart"] = report.best_restart;
  if (report.has_truth_error) {
    j["truth_mpjpe_mm"] = report.truth_mpjpe_mm;
    j["truth_mpjpe_root_centered_mm"] = report.truth_mpjpe_root_centered_mm;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open fit report for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace posekit
