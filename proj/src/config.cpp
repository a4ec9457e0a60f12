#include "zdp/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "zdp/errors.hpp"

namespace zdp::config {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& what) { throw Error(ErrorCode::kConfig, what); }

// Typed access to one JSON object that remembers which keys were read so
// leftovers can be reported.
class Section {
 public:
  Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ && !j_->is_object()) fail(path_ + " must be an object");
  }

  Section sub(const char* key) {
    return Section(take(key), path_.empty() ? key : path_ + "." + key);
  }

  void get(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(where(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(where(key) + " must be an integer");
      out = v->get<int>();
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer() || v->get<long long>() < 0) {
        fail(where(key) + " must be a nonnegative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(where(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  void vec(const char* key, Eigen::VectorXd& out, int n) {
    if (const json* v = take(key)) {
      if (!v->is_array() || static_cast<int>(v->size()) != n) {
        fail(where(key) + " must be an array of " + std::to_string(n) + " numbers");
      }
      out.resize(n);
      for (int i = 0; i < n; ++i) {
        const json& e = (*v)[static_cast<std::size_t>(i)];
        if (!e.is_number()) fail(where(key) + " must contain numbers");
        out(i) = e.get<double>();
      }
    }
  }
  void diag(const char* key, Eigen::Matrix3d& out) {
    Eigen::VectorXd d = out.diagonal();
    vec(key, d, 3);
    out = d.asDiagonal();
  }
  void vec2(const char* key, Eigen::Vector2d& out) {
    Eigen::VectorXd d = out;
    vec(key, d, 2);
    out = d;
  }

  void finish() const {
    if (!j_) return;
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      if (!seen_.count(it.key())) fail("unknown key " + where(it.key().c_str()));
    }
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    if (!j_ || !j_->contains(key)) return nullptr;
    return &j_->at(key);
  }
  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

void validate(const RunConfig& c) {
  try {
    c.hopper.validate();
    c.raibert.validate();
    policy::OutputBox::from(c.box).validate();
  } catch (const Error& e) {
    fail(e.what());
  }
  if (!(c.box.lower.array() < c.box.upper.array()).all() ||
      c.box.lower.cwiseAbs().maxCoeff() >= c.hopper.max_lean ||
      c.box.upper.cwiseAbs().maxCoeff() >= c.hopper.max_lean) {
    fail("input_box must be ordered and inside the lean cone");
  }
  if (!(c.flight.dt > 0.0) || !(c.flight.event_tolerance > 0.0) || !(c.flight.max_horizon > 0.0)) {
    fail("flight step, tolerance and horizon must be positive");
  }
  if (c.horizon < 1 || c.ilqr.max_iter < 1 || !(c.ilqr.tolerance > 0.0)) {
    fail("trajopt horizon, max_iter and tolerance must be positive");
  }
  if ((c.q_diag.array() <= 0.0).any() || (c.r_diag.array() <= 0.0).any()) {
    fail("cost weights must be positive");
  }
  if (c.hidden < 1 || c.pretrain.steps < 0 || c.pretrain.batch < 1 || !(c.pretrain.rate > 0.0) ||
      c.pretrain.patience < 1) {
    fail("policy and pretrain settings must be positive");
  }
  if (c.batch_size < 1 || c.num_steps < 0 || !(c.optimizer.learning_rate >= 0.0) ||
      c.checkpoint_every < 0 || !(c.z_lower.array() <= c.z_upper.array()).all()) {
    fail("invalid train section");
  }
  if (c.checkpoint_every > 0 && c.checkpoint_dir.empty()) {
    fail("train.checkpoint_dir is required when checkpoint_every > 0");
  }
  const EvalConfig& e = c.eval;
  if (e.holdout_samples < 1 || e.starts < 1 || e.hops < 5 || !(e.start_radius > 0.0) ||
      !(e.agreement_radius > 0.0) || e.agreement_grid < 2 || !(e.square_side > 0.0) ||
      e.square_hops < 1 || e.max_recovery_hops < 1 || !(e.recovery_tolerance > 0.0)) {
    fail("invalid eval section");
  }
  if (c.jobs < 0) fail("jobs must be nonnegative");
}

}  // namespace

RunConfig::RunConfig()
    : q_diag((Eigen::VectorXd(8) << 1, 1, 1, 1, 10, 10, 1, 1).finished()),
      r_diag(Eigen::VectorXd::Ones(2)),
      z_lower((Eigen::VectorXd(4) << -1, -1, -1, -1).finished()),
      z_upper((Eigen::VectorXd(4) << 1, 1, 1, 1).finished()) {}

trajopt::QuadCost RunConfig::cost() const {
  trajopt::QuadCost c = trajopt::QuadCost::make(q_diag.asDiagonal(), r_diag.asDiagonal());
  const hopper::ClosedFormStep lin = hopper::closed_form_return_map(
      hopper::Vec4::Zero(), hopper::Vec4::Zero(), hopper::Vec2::Zero(), hopper);
  c.Qf = trajopt::lqr_solve(lin.d_state, lin.d_input, c.Q, c.R).P;
  return c;
}

model::HopperModel RunConfig::make_model() const {
  return model::HopperModel(hopper, box, raibert, cost());
}

training::SolveConfig RunConfig::solve() const {
  training::SolveConfig s;
  s.horizon = horizon;
  s.ilqr = ilqr;
  s.jobs = jobs;
  return s;
}

training::TrainConfig RunConfig::train() const {
  training::TrainConfig t;
  t.batch_size = batch_size;
  t.num_steps = num_steps;
  t.optimizer = optimizer;
  t.z_lower = z_lower;
  t.z_upper = z_upper;
  t.solve = solve();
  t.seed = seed + 2;
  t.checkpoint_every = checkpoint_every;
  t.checkpoint_dir = checkpoint_dir;
  return t;
}

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section root(&doc, "");
  int version = -1;
  root.get("schema_version", version);
  if (version != kSchemaVersion) {
    fail("schema_version must be " + std::to_string(kSchemaVersion));
  }
  root.get("seed", c.seed);
  root.get("jobs", c.jobs);

  {
    Section h = root.sub("hopper");
    h.get("mass", c.hopper.mass);
    h.get("gravity", c.hopper.gravity);
    h.get("leg_length", c.hopper.leg_length);
    h.get("apex_height", c.hopper.apex_height);
    h.get("ground_duration", c.hopper.ground_duration);
    h.diag("body_inertia", c.hopper.body_inertia);
    h.get("flywheel_inertia", c.hopper.flywheel_inertia);
    h.get("torque_limit", c.hopper.torque_limit);
    h.get("spindown_gain", c.hopper.spindown_gain);
    h.diag("kp", c.hopper.kp);
    h.diag("kd", c.hopper.kd);
    h.get("max_lean", c.hopper.max_lean);
    h.vec2("input_lower", c.box.lower);
    h.vec2("input_upper", c.box.upper);
    h.finish();
  }
  {
    Section f = root.sub("flight");
    f.get("dt", c.flight.dt);
    f.get("event_tolerance", c.flight.event_tolerance);
    f.get("max_horizon", c.flight.max_horizon);
    f.finish();
  }
  {
    Section t = root.sub("trajopt");
    t.get("horizon", c.horizon);
    t.get("max_iter", c.ilqr.max_iter);
    t.get("tolerance", c.ilqr.tolerance);
    t.vec("q_diag", c.q_diag, 8);
    t.vec("r_diag", c.r_diag, 2);
    t.finish();
  }
  {
    Section p = root.sub("policy");
    p.get("hidden", c.hidden);
    p.finish();
  }
  {
    Section r = root.sub("raibert");
    r.get("velocity_gain", c.raibert.velocity_gain);
    r.get("feedback_gain", c.raibert.feedback_gain);
    r.vec2("reference_velocity", c.raibert.reference_velocity);
    r.finish();
  }
  {
    Section p = root.sub("pretrain");
    p.get("steps", c.pretrain.steps);
    p.get("rate", c.pretrain.rate);
    p.get("batch", c.pretrain.batch);
    p.get("target_mse", c.pretrain.target_mse);
    p.get("patience", c.pretrain.patience);
    p.finish();
  }
  {
    Section t = root.sub("train");
    t.get("batch_size", c.batch_size);
    t.get("num_steps", c.num_steps);
    std::string opt = c.optimizer.kind == policy::OptimizerKind::kAdam ? "adam" : "sgd";
    t.get("optimizer", opt);
    if (opt == "adam") c.optimizer.kind = policy::OptimizerKind::kAdam;
    else if (opt == "sgd") c.optimizer.kind = policy::OptimizerKind::kSgd;
    else fail("train.optimizer must be \"adam\" or \"sgd\"");
    t.get("learning_rate", c.optimizer.learning_rate);
    t.get("beta1", c.optimizer.beta1);
    t.get("beta2", c.optimizer.beta2);
    t.get("epsilon", c.optimizer.epsilon);
    t.vec("z_lower", c.z_lower, 4);
    t.vec("z_upper", c.z_upper, 4);
    t.get("checkpoint_every", c.checkpoint_every);
    t.get("checkpoint_dir", c.checkpoint_dir);
    t.finish();
  }
  {
    Section e = root.sub("eval");
    e.get("holdout_samples", c.eval.holdout_samples);
    e.get("holdout_seed", c.eval.holdout_seed);
    e.get("starts", c.eval.starts);
    e.get("start_radius", c.eval.start_radius);
    e.get("hops", c.eval.hops);
    e.get("agreement_radius", c.eval.agreement_radius);
    e.get("agreement_grid", c.eval.agreement_grid);
    e.get("max_decay_lambda", c.eval.max_decay_lambda);
    e.get("max_agreement", c.eval.max_agreement);
    e.get("max_residual_ratio", c.eval.max_residual_ratio);
    e.get("max_cost_ratio", c.eval.max_cost_ratio);
    e.get("disturbance", c.eval.disturbance);
    e.get("recovery_tolerance", c.eval.recovery_tolerance);
    e.get("max_recovery_hops", c.eval.max_recovery_hops);
    e.get("square_side", c.eval.square_side);
    e.get("square_hops", c.eval.square_hops);
    e.get("max_corner_error", c.eval.max_corner_error);
    e.finish();
  }
  root.finish();
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const RunConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["hopper"] = {
      {"mass", c.hopper.mass},
      {"gravity", c.hopper.gravity},
      {"leg_length", c.hopper.leg_length},
      {"apex_height", c.hopper.apex_height},
      {"ground_duration", c.hopper.ground_duration},
      {"body_inertia", vec_json(c.hopper.body_inertia.diagonal())},
      {"flywheel_inertia", c.hopper.flywheel_inertia},
      {"torque_limit", c.hopper.torque_limit},
      {"spindown_gain", c.hopper.spindown_gain},
      {"kp", vec_json(c.hopper.kp.diagonal())},
      {"kd", vec_json(c.hopper.kd.diagonal())},
      {"max_lean", c.hopper.max_lean},
      {"input_lower", vec_json(c.box.lower)},
      {"input_upper", vec_json(c.box.upper)}};
  j["flight"] = {{"dt", c.flight.dt},
                 {"event_tolerance", c.flight.event_tolerance},
                 {"max_horizon", c.flight.max_horizon}};
  j["trajopt"] = {{"horizon", c.horizon},
                  {"max_iter", c.ilqr.max_iter},
                  {"tolerance", c.ilqr.tolerance},
                  {"q_diag", vec_json(c.q_diag)},
                  {"r_diag", vec_json(c.r_diag)}};
  j["policy"] = {{"hidden", c.hidden}};
  j["raibert"] = {{"velocity_gain", c.raibert.velocity_gain},
                  {"feedback_gain", c.raibert.feedback_gain},
                  {"reference_velocity", vec_json(c.raibert.reference_velocity)}};
  j["pretrain"] = {{"steps", c.pretrain.steps},
                   {"rate", c.pretrain.rate},
                   {"batch", c.pretrain.batch},
                   {"target_mse", c.pretrain.target_mse},
                   {"patience", c.pretrain.patience}};
  j["train"] = {{"batch_size", c.batch_size},
                {"num_steps", c.num_steps},
                {"optimizer", c.optimizer.kind == policy::OptimizerKind::kAdam ? "adam" : "sgd"},
                {"learning_rate", c.optimizer.learning_rate},
                {"beta1", c.optimizer.beta1},
                {"beta2", c.optimizer.beta2},
                {"epsilon", c.optimizer.epsilon},
                {"z_lower", vec_json(c.z_lower)},
                {"z_upper", vec_json(c.z_upper)},
                {"checkpoint_every", c.checkpoint_every},
                {"checkpoint_dir", c.checkpoint_dir}};
  j["eval"] = {{"holdout_samples", c.eval.holdout_samples},
               {"holdout_seed", c.eval.holdout_seed},
               {"starts", c.eval.starts},
               {"start_radius", c.eval.start_radius},
               {"hops", c.eval.hops},
               {"agreement_radius", c.eval.agreement_radius},
               {"agreement_grid", c.eval.agreement_grid},
               {"max_decay_lambda", c.eval.max_decay_lambda},
               {"max_agreement", c.eval.max_agreement},
               {"max_residual_ratio", c.eval.max_residual_ratio},
               {"max_cost_ratio", c.eval.max_cost_ratio},
               {"disturbance", c.eval.disturbance},
               {"recovery_tolerance", c.eval.recovery_tolerance},
               {"max_recovery_hops", c.eval.max_recovery_hops},
               {"square_side", c.eval.square_side},
               {"square_hops", c.eval.square_hops},
               {"max_corner_error", c.eval.max_corner_error}};
  return j.dump(2) + "\n";
}

}  // namespace zdp::config
