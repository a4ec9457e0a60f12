#include "zdp/policy.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "zdp/errors.hpp"

namespace zdp::policy {
namespace {

// Forward cache for a batch of inputs stored column-wise.
struct Cache {
  MatrixXd Z;
  MatrixXd H1, A1, H2, A2, Y;
};

Cache forward_raw(const PolicyParams& p, const MatrixXd& Z) {
  Cache c;
  c.Z = Z;
  c.H1 = (p.W1 * Z).colwise() + p.b1;
  c.A1 = c.H1.cwiseMax(0.0);
  c.H2 = (p.W2 * c.A1).colwise() + p.b2;
  c.A2 = c.H2.cwiseMax(0.0);
  c.Y = (p.W3 * c.A2).colwise() + p.b3;
  return c;
}

// Accumulates gradients of sum_j U(:,j)' Y(:,j) into g (scaled by `sign`)
// and returns the input gradients.
MatrixXd backward_raw(const PolicyParams& p, const Cache& c, const MatrixXd& U,
                      PolicyParams& g, double sign) {
  g.W3.noalias() += sign * U * c.A2.transpose();
  g.b3 += sign * U.rowwise().sum();
  const MatrixXd dH2 =
      ((p.W3.transpose() * U).array() * (c.H2.array() > 0.0).cast<double>()).matrix();
  g.W2.noalias() += sign * dH2 * c.A1.transpose();
  g.b2 += sign * dH2.rowwise().sum();
  const MatrixXd dH1 =
      ((p.W2.transpose() * dH2).array() * (c.H1.array() > 0.0).cast<double>()).matrix();
  g.W1.noalias() += sign * dH1 * c.Z.transpose();
  g.b1 += sign * dH1.rowwise().sum();
  return p.W1.transpose() * dH1;
}

double squash(double r, double lo, double hi) {
  if (r >= 0.0) return std::isfinite(hi) ? hi * std::tanh(r / hi) : r;
  return std::isfinite(lo) ? -lo * std::tanh(r / -lo) : r;
}

double squash_slope(double r, double lo, double hi) {
  const double s = r >= 0.0 ? hi : -lo;
  if (!std::isfinite(s)) return 1.0;
  const double t = std::tanh(r / s);
  return 1.0 - t * t;
}

MatrixXd squash(const MatrixXd& R, const OutputBox& box) {
  MatrixXd out(R.rows(), R.cols());
  for (Eigen::Index j = 0; j < R.cols(); ++j)
    for (Eigen::Index i = 0; i < R.rows(); ++i)
      out(i, j) = squash(R(i, j), box.lower(i), box.upper(i));
  return out;
}

MatrixXd squash_slope(const MatrixXd& R, const OutputBox& box) {
  MatrixXd out(R.rows(), R.cols());
  for (Eigen::Index j = 0; j < R.cols(); ++j)
    for (Eigen::Index i = 0; i < R.rows(); ++i)
      out(i, j) = squash_slope(R(i, j), box.lower(i), box.upper(i));
  return out;
}

struct BatchEval {
  Cache cache;
  Cache anchor;
  MatrixXd raw;
  MatrixXd out;
};

BatchEval batch_forward(const PolicyParams& p, const OutputBox& box, const MatrixXd& Z) {
  BatchEval e;
  e.cache = forward_raw(p, Z);
  e.anchor = forward_raw(p, MatrixXd::Zero(Z.rows(), 1));
  e.raw = e.cache.Y.colwise() - e.anchor.Y.col(0);
  e.out = squash(e.raw, box);
  return e;
}

// Gradient of sum_j U(:,j)' psi(Z(:,j)). Returns input gradients column-wise.
MatrixXd batch_backward(const PolicyParams& p, const OutputBox& box,
                        const BatchEval& e, const MatrixXd& U, PolicyParams& g) {
  const MatrixXd Ur = (U.array() * squash_slope(e.raw, box).array()).matrix();
  MatrixXd dz = backward_raw(p, e.cache, Ur, g, 1.0);
  backward_raw(p, e.anchor, Ur.rowwise().sum(), g, -1.0);
  return dz;
}

void check_shapes(const PolicyParams& p, const OutputBox& box) {
  const auto h = p.W1.rows();
  const bool ok = p.b1.size() == h && p.W2.rows() == h && p.W2.cols() == h &&
                  p.b2.size() == h && p.W3.cols() == h &&
                  p.b3.size() == p.W3.rows() && box.lower.size() == p.W3.rows() &&
                  box.upper.size() == p.W3.rows();
  if (!ok) throw Error(ErrorCode::kInvalidArgument, "policy parameter shapes are inconsistent");
}

}  // namespace

// ------------------------------------------------------------ params

PolicyParams PolicyParams::zeros(int z_dim, int hidden, int out_dim) {
  if (z_dim < 1 || hidden < 1 || out_dim < 1) {
    throw Error(ErrorCode::kInvalidArgument, "policy dimensions must be positive");
  }
  PolicyParams p;
  p.W1 = MatrixXd::Zero(hidden, z_dim);
  p.b1 = VectorXd::Zero(hidden);
  p.W2 = MatrixXd::Zero(hidden, hidden);
  p.b2 = VectorXd::Zero(hidden);
  p.W3 = MatrixXd::Zero(out_dim, hidden);
  p.b3 = VectorXd::Zero(out_dim);
  return p;
}

PolicyParams PolicyParams::he_uniform(int z_dim, int hidden, int out_dim,
                                      std::uint64_t seed) {
  PolicyParams p = zeros(z_dim, hidden, out_dim);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](MatrixXd& M, double limit) {
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index j = 0; j < M.cols(); ++j)
      for (Eigen::Index i = 0; i < M.rows(); ++i) M(i, j) = u(rng);
  };
  auto fill_vec = [&rng](VectorXd& v, double limit) {
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = u(rng);
  };
  fill(p.W1, std::sqrt(6.0 / z_dim));
  fill_vec(p.b1, 0.01);
  fill(p.W2, std::sqrt(6.0 / hidden));
  fill_vec(p.b2, 0.01);
  // Last layer scaled down so the untrained policy starts near zero.
  fill(p.W3, 0.1 * std::sqrt(6.0 / hidden));
  return p;
}

Eigen::Index PolicyParams::size() const {
  return W1.size() + b1.size() + W2.size() + b2.size() + W3.size() + b3.size();
}

bool PolicyParams::all_finite() const {
  return W1.allFinite() && b1.allFinite() && W2.allFinite() && b2.allFinite() &&
         W3.allFinite() && b3.allFinite();
}

VectorXd PolicyParams::flatten() const {
  VectorXd out(size());
  Eigen::Index o = 0;
  auto put = [&](const auto& m) {
    out.segment(o, m.size()) = Eigen::Map<const VectorXd>(m.data(), m.size());
    o += m.size();
  };
  put(W1);
  put(b1);
  put(W2);
  put(b2);
  put(W3);
  put(b3);
  return out;
}

void PolicyParams::assign_flat(const VectorXd& flat) {
  if (flat.size() != size()) {
    throw Error(ErrorCode::kInvalidArgument, "flat parameter vector has the wrong length");
  }
  Eigen::Index o = 0;
  auto get = [&](auto& m) {
    Eigen::Map<VectorXd>(m.data(), m.size()) = flat.segment(o, m.size());
    o += m.size();
  };
  get(W1);
  get(b1);
  get(W2);
  get(b2);
  get(W3);
  get(b3);
}

bool PolicyParams::operator==(const PolicyParams& o) const {
  auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
  };
  return same(W1, o.W1) && same(b1, o.b1) && same(W2, o.W2) && same(b2, o.b2) &&
         same(W3, o.W3) && same(b3, o.b3);
}

OutputBox OutputBox::unbounded(int dim) {
  const double inf = std::numeric_limits<double>::infinity();
  return {VectorXd::Constant(dim, -inf), VectorXd::Constant(dim, inf)};
}

OutputBox OutputBox::from(const hopper::InputBox& box) {
  return {box.lower, box.upper};
}

void OutputBox::validate() const {
  if (lower.size() != upper.size() || lower.size() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "output box bounds have mismatched sizes");
  }
  if (!((lower.array() < 0.0).all() && (upper.array() > 0.0).all())) {
    throw Error(ErrorCode::kInvalidArgument, "output box must contain the origin strictly");
  }
}

// ------------------------------------------------------------ forward / backward

VectorXd policy_forward(const PolicyParams& params, const OutputBox& box,
                        const VectorXd& z) {
  check_shapes(params, box);
  return batch_forward(params, box, z).out.col(0);
}

PolicyGradient policy_backward(const PolicyParams& params, const OutputBox& box,
                               const VectorXd& z, const VectorXd& upstream) {
  check_shapes(params, box);
  PolicyGradient g;
  g.params = PolicyParams::zeros(params.z_dim(), params.hidden(), params.out_dim());
  const BatchEval e = batch_forward(params, box, z);
  g.input = batch_backward(params, box, e, upstream, g.params).col(0);
  return g;
}

MatrixXd policy_jacobian(const PolicyParams& params, const OutputBox& box,
                         const VectorXd& z) {
  check_shapes(params, box);
  const Cache c = forward_raw(params, z);
  const Cache a = forward_raw(params, MatrixXd::Zero(z.size(), 1));
  const VectorXd raw = c.Y.col(0) - a.Y.col(0);
  const VectorXd m1 = (c.H1.col(0).array() > 0.0).cast<double>();
  const VectorXd m2 = (c.H2.col(0).array() > 0.0).cast<double>();
  MatrixXd J = params.W3 * m2.asDiagonal() * params.W2 * m1.asDiagonal() * params.W1;
  for (Eigen::Index i = 0; i < J.rows(); ++i)
    J.row(i) *= squash_slope(raw(i), box.lower(i), box.upper(i));
  return J;
}

// ------------------------------------------------------------ Raibert

void RaibertParams::validate() const {
  if (!(velocity_gain >= 0.0) || !(feedback_gain >= 0.0) ||
      !reference_velocity.allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "Raibert gains must be nonnegative");
  }
}

Eigen::Vector2d raibert(const Eigen::Vector4d& z, const RaibertParams& params,
                        const hopper::HopperParams& hopper,
                        const hopper::InputBox& box) {
  const Eigen::Vector2d p = z.head<2>();
  const Eigen::Vector2d pdot = z.tail<2>();
  const Eigen::Vector2d d = pdot * (0.5 * hopper.ground_duration) +
                            params.velocity_gain * (pdot - params.reference_velocity) +
                            params.feedback_gain * p;
  // The foot sits at -L n from the body; a lean theta_y moves it by
  // -L sin(theta_y) along x and theta_x by +L sin(theta_x) along y.
  auto ratio = [&](double v) { return std::clamp(v / hopper.leg_length, -1.0, 1.0); };
  const Eigen::Vector2d lean(std::asin(ratio(d.y())), -std::asin(ratio(d.x())));
  // Box corners poke outside the lean cone, so shrink radially as well.
  Eigen::Vector2d out = box.clamp(lean);
  const double norm = out.norm();
  const double cap = hopper.max_lean * (1.0 - 1e-9);
  if (norm > cap) out *= cap / norm;
  return out;
}

// ------------------------------------------------------------ optimizers

Optimizer::Optimizer(const OptimizerConfig& config, Eigen::Index size)
    : config_(config), m_(VectorXd::Zero(size)), v_(VectorXd::Zero(size)) {
  if (!(config.learning_rate >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "learning rate must be nonnegative");
  }
}

void Optimizer::step(VectorXd& params, const VectorXd& grad) {
  if (config_.kind == OptimizerKind::kSgd) {
    params -= config_.learning_rate * grad;
    return;
  }
  ++t_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  params.array() -= config_.learning_rate * (m_.array() / c1) /
                    ((v_.array() / c2).sqrt() + config_.epsilon);
}

// ------------------------------------------------------------ pretraining

double raibert_mse(const PolicyParams& params, const OutputBox& out_box,
                   const RaibertParams& raibert_params,
                   const hopper::HopperParams& hopper, const hopper::InputBox& box,
                   const std::vector<Eigen::Vector4d>& points, double* max_abs_error) {
  if (points.empty()) throw Error(ErrorCode::kInvalidArgument, "no evaluation points");
  MatrixXd Z(4, static_cast<Eigen::Index>(points.size()));
  MatrixXd T(2, Z.cols());
  for (std::size_t j = 0; j < points.size(); ++j) {
    Z.col(j) = points[j];
    T.col(j) = raibert(points[j], raibert_params, hopper, box);
  }
  const MatrixXd err = batch_forward(params, out_box, Z).out - T;
  if (max_abs_error) *max_abs_error = err.cwiseAbs().maxCoeff();
  return err.squaredNorm() / static_cast<double>(err.size());
}

PolicyParams pretrain(const PolicyParams& params0, const RaibertParams& raibert_params,
                      const hopper::HopperParams& hopper, const hopper::InputBox& box,
                      const SampleBox& sample_box, const PretrainOptions& options) {
  raibert_params.validate();
  if (params0.z_dim() != 4 || params0.out_dim() != 2) {
    throw Error(ErrorCode::kInvalidArgument, "pretraining expects a 4 -> 2 policy");
  }
  if (sample_box.lower.size() != 4 || sample_box.upper.size() != 4 ||
      !(sample_box.lower.array() <= sample_box.upper.array()).all()) {
    throw Error(ErrorCode::kInvalidArgument, "pretraining sample box is invalid");
  }
  if (options.batch < 1 || options.steps < 0) {
    throw Error(ErrorCode::kInvalidArgument, "pretraining batch and steps must be positive");
  }
  const OutputBox out_box = OutputBox::from(box);
  out_box.validate();

  PolicyParams params = params0;
  VectorXd flat = params.flatten();
  Optimizer opt({OptimizerKind::kAdam, options.rate}, flat.size());
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  MatrixXd Z(4, options.batch);
  MatrixXd T(2, options.batch);
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int step = 0; step < options.steps; ++step) {
    for (int j = 0; j < options.batch; ++j) {
      for (int i = 0; i < 4; ++i) {
        Z(i, j) = sample_box.lower(i) +
                  (sample_box.upper(i) - sample_box.lower(i)) * unit(rng);
      }
      T.col(j) = raibert(Z.col(j), raibert_params, hopper, box);
    }
    const BatchEval e = batch_forward(params, out_box, Z);
    const MatrixXd err = e.out - T;
    const double loss = err.squaredNorm() / static_cast<double>(err.size());
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::kNoProgress, "pretraining loss became non-finite");
    }
    if (loss < best) {
      best = loss;
      since_best = 0;
    } else if (++since_best >= options.patience && best > options.target_mse) {
      throw Error(ErrorCode::kNoProgress,
                  "pretraining loss stalled at " + std::to_string(best));
    }
    PolicyParams g = PolicyParams::zeros(4, params.hidden(), 2);
    batch_backward(params, out_box, e, (2.0 / static_cast<double>(err.size())) * err, g);
    opt.step(flat, g.flatten());
    params.assign_flat(flat);
  }
  return params;
}

// ------------------------------------------------------------ persistence

namespace {

using nlohmann::json;

json matrix_json(const MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

MatrixXd matrix_from(const json& j, const char* name, Eigen::Index rows,
                     Eigen::Index cols) {
  if (!j.contains(name)) throw Error(ErrorCode::kCorruptFile, std::string("missing field ") + name);
  const json& m = j.at(name);
  if (m.at("rows").get<Eigen::Index>() != rows || m.at("cols").get<Eigen::Index>() != cols) {
    throw Error(ErrorCode::kSchemaMismatch, std::string("shape mismatch for ") + name);
  }
  const json& data = m.at("data");
  if (!data.is_array() || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw Error(ErrorCode::kCorruptFile, std::string("wrong element count for ") + name);
  }
  MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k) {
      const json& v = data[static_cast<std::size_t>(i * cols + k)];
      if (!v.is_number()) throw Error(ErrorCode::kCorruptFile, std::string("non-numeric entry in ") + name);
      out(i, k) = v.get<double>();
    }
  return out;
}

// JSON has no infinities: unbounded sides are stored as null.
json bound_json(const VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v(i))) a.push_back(v(i));
    else a.push_back(nullptr);
  }
  return a;
}

VectorXd bound_from(const json& a, Eigen::Index n, double missing) {
  if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != n) {
    throw Error(ErrorCode::kSchemaMismatch, "output box has the wrong dimension");
  }
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const json& e = a[static_cast<std::size_t>(i)];
    v(i) = e.is_null() ? missing : e.get<double>();
  }
  return v;
}

}  // namespace

void save_weights(const std::filesystem::path& path, const PolicyParams& params,
                  const OutputBox& box) {
  check_shapes(params, box);
  json j;
  j["format"] = "zdp-policy";
  j["version"] = kWeightFormatVersion;
  j["z_dim"] = params.z_dim();
  j["hidden"] = params.hidden();
  j["out_dim"] = params.out_dim();
  j["output_box"] = {{"lower", bound_json(box.lower)}, {"upper", bound_json(box.upper)}};
  j["W1"] = matrix_json(params.W1);
  j["b1"] = matrix_json(params.b1);
  j["W2"] = matrix_json(params.W2);
  j["b2"] = matrix_json(params.b2);
  j["W3"] = matrix_json(params.W3);
  j["b3"] = matrix_json(params.b3);
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw Error(ErrorCode::kInvalidArgument, "failed writing " + path.string());
}

PolicyFile load_weights(const std::filesystem::path& path, int expected_z_dim,
                        int expected_out_dim) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kCorruptFile, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, path.string() + ": " + e.what());
  }
  try {
    if (!j.is_object() || j.value("format", "") != "zdp-policy") {
      throw Error(ErrorCode::kCorruptFile, path.string() + " is not a policy file");
    }
    if (j.at("version").get<int>() != kWeightFormatVersion) {
      throw Error(ErrorCode::kSchemaMismatch, "unsupported weight format version");
    }
    const int z = j.at("z_dim").get<int>();
    const int h = j.at("hidden").get<int>();
    const int o = j.at("out_dim").get<int>();
    if (z < 1 || h < 1 || o < 1) throw Error(ErrorCode::kCorruptFile, "nonpositive dimensions");
    if ((expected_z_dim >= 0 && z != expected_z_dim) ||
        (expected_out_dim >= 0 && o != expected_out_dim)) {
      throw Error(ErrorCode::kSchemaMismatch,
                  "policy dimensions " + std::to_string(z) + " -> " + std::to_string(o) +
                      " do not match the model");
    }
    PolicyFile f;
    f.params.W1 = matrix_from(j, "W1", h, z);
    f.params.b1 = matrix_from(j, "b1", h, 1);
    f.params.W2 = matrix_from(j, "W2", h, h);
    f.params.b2 = matrix_from(j, "b2", h, 1);
    f.params.W3 = matrix_from(j, "W3", o, h);
    f.params.b3 = matrix_from(j, "b3", o, 1);
    const double inf = std::numeric_limits<double>::infinity();
    f.box.lower = bound_from(j.at("output_box").at("lower"), o, -inf);
    f.box.upper = bound_from(j.at("output_box").at("upper"), o, inf);
    f.box.validate();
    if (!f.params.all_finite()) throw Error(ErrorCode::kCorruptFile, "non-finite weights");
    return f;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, path.string() + ": " + e.what());
  }
}

}  // namespace zdp::policy
