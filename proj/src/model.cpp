#include "zdp/model.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "zdp/errors.hpp"

namespace zdp::model {

trajopt::LqrResult lqr_at_origin(const Model& model) {
  const VectorXd x0 = VectorXd::Zero(model.state_dim());
  const VectorXd v0 = VectorXd::Zero(model.input_dim());
  const trajopt::StepResult lin = model.dynamics()(x0, v0, true);
  return trajopt::lqr_solve(lin.A, lin.B, model.cost().Q, model.cost().R);
}

MatrixXd lqr_manifold_gain(const Model& model) {
  const trajopt::LqrResult lqr = lqr_at_origin(model);
  const Lift lift = model.lift(VectorXd::Zero(model.eta_dim()), VectorXd::Zero(model.z_dim()));
  const MatrixXd Lv = lift.dx_deta * model.embedding();
  const MatrixXd H = model.cost().R + Lv.transpose() * lqr.P * Lv;
  return -H.ldlt().solve(Lv.transpose() * lqr.P * lift.dx_dz);
}

MatrixXd lqr_manifold_subspace(const Model& model) {
  const trajopt::LqrResult lqr = lqr_at_origin(model);
  const int n = model.state_dim();
  const int ne = model.eta_dim();
  const int nz = model.z_dim();
  const VectorXd x0 = VectorXd::Zero(n);
  const trajopt::StepResult lin = model.dynamics()(x0, VectorXd::Zero(model.input_dim()), true);
  const Projection proj = model.project(x0);
  MatrixXd J(n, n);
  J << proj.deta_dx, proj.dz_dx;
  const MatrixXd closed = J * (lin.A - lin.B * lqr.K) * J.inverse();

  Eigen::EigenSolver<MatrixXd> es(closed);
  const Eigen::VectorXcd lambda = es.eigenvalues();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return std::abs(lambda(a)) > std::abs(lambda(b)); });

  // Real basis of the dominant subspace; a complex pair contributes its real
  // and imaginary parts.
  MatrixXd V(n, 0);
  for (int idx : order) {
    if (V.cols() >= nz) break;
    const Eigen::VectorXcd vec = es.eigenvectors().col(idx);
    if (std::abs(lambda(idx).imag()) < 1e-12) {
      V.conservativeResize(n, V.cols() + 1);
      V.col(V.cols() - 1) = vec.real();
    } else if (lambda(idx).imag() > 0.0) {
      V.conservativeResize(n, V.cols() + 2);
      V.col(V.cols() - 2) = vec.real();
      V.col(V.cols() - 1) = vec.imag();
    }
  }
  if (V.cols() != nz) {
    throw Error(ErrorCode::kRankDeficient, "dominant subspace splits a complex pair");
  }
  const MatrixXd Vz = V.bottomRows(nz);
  Eigen::FullPivLU<MatrixXd> lu(Vz);
  if (lu.rank() < nz) {
    throw Error(ErrorCode::kRankDeficient, "dominant subspace is not a graph over z");
  }
  const MatrixXd G_eta = V.topRows(ne) * lu.inverse();
  // Back to input space through the embedding's pseudo-inverse.
  const MatrixXd& E = model.embedding();
  return (E.transpose() * E).ldlt().solve(E.transpose() * G_eta);
}

// ------------------------------------------------------------ hopper

trajopt::QuadCost default_hopper_cost(const hopper::HopperParams& params) {
  Eigen::Matrix<double, 8, 1> q;
  q << 1, 1, 1, 1, 10, 10, 1, 1;
  trajopt::QuadCost cost = trajopt::QuadCost::make(q.asDiagonal(), MatrixXd::Identity(2, 2));
  const hopper::ClosedFormStep lin = hopper::closed_form_return_map(
      hopper::Vec4::Zero(), hopper::Vec4::Zero(), hopper::Vec2::Zero(), params);
  cost.Qf = trajopt::lqr_solve(lin.d_state, lin.d_input, cost.Q, cost.R).P;
  return cost;
}

HopperModel::HopperModel(hopper::HopperParams params, hopper::InputBox box,
                         policy::RaibertParams raibert, trajopt::QuadCost cost)
    : params_(std::move(params)),
      box_(box),
      raibert_(raibert),
      cost_(std::move(cost)),
      bounds_{box.lower, box.upper},
      out_box_(policy::OutputBox::from(box)),
      embedding_(MatrixXd::Zero(4, 2)) {
  params_.validate();
  raibert_.validate();
  out_box_.validate();
  cost_.validate();
  if (cost_.Q.rows() != 8 || cost_.R.rows() != 2 || cost_.Qf.rows() != 8) {
    throw Error(ErrorCode::kInvalidArgument, "hopper cost must be 8x8 / 2x2");
  }
  embedding_.topRows(2).setIdentity();
  const hopper::HopperParams p = params_;
  dynamics_ = [p](const VectorXd& x, const VectorXd& v, bool jac) {
    trajopt::StepResult r;
    r.next.resize(8);
    hopper::ClosedFormStep s;
    try {
      s = hopper::closed_form_return_map(x.head<4>(), x.tail<4>(), hopper::Vec2(v(0), v(1)), p);
    } catch (const Error& e) {
      // A lean outside the cone has no stance impulse. Report it as a
      // non-finite state so rollouts reject it like any other blow-up.
      if (e.code() != ErrorCode::kLegSingular || jac) throw;
      r.next.setConstant(std::numeric_limits<double>::quiet_NaN());
      return r;
    }
    r.next << s.eta_next, s.z_next;
    if (jac) {
      r.A = s.d_state;
      r.B = s.d_input;
    }
    return r;
  };
}

HopperModel::HopperModel(const hopper::HopperParams& params)
    : HopperModel(params, hopper::InputBox{}, policy::RaibertParams{},
                  default_hopper_cost(params)) {}

Lift HopperModel::lift(const VectorXd& eta, const VectorXd& z) const {
  if (eta.size() != 4 || z.size() != 4) {
    throw Error(ErrorCode::kInvalidArgument, "hopper lift expects eta, z in R^4");
  }
  const hopper::FullState full = hopper::recompose({eta, z}, params_);
  Lift out;
  out.x = hopper::to_hop_vector(hopper::decompose(full));
  out.dx_deta = MatrixXd::Zero(8, 4);
  out.dx_deta.topRows(4).setIdentity();
  out.dx_dz = MatrixXd::Zero(8, 4);
  out.dx_dz.bottomRows(4).setIdentity();
  return out;
}

Projection HopperModel::project(const VectorXd& x) const {
  Projection p;
  p.eta = x.head(4);
  p.z = x.tail(4);
  p.deta_dx = MatrixXd::Zero(4, 8);
  p.deta_dx.leftCols(4).setIdentity();
  p.dz_dx = MatrixXd::Zero(4, 8);
  p.dz_dx.rightCols(4).setIdentity();
  return p;
}

std::vector<VectorXd> HopperModel::initial_guess(const VectorXd& x0, int horizon) const {
  std::vector<VectorXd> inputs;
  inputs.reserve(static_cast<std::size_t>(horizon));
  VectorXd x = x0;
  for (int s = 0; s < horizon; ++s) {
    // z' does not depend on v, so the heuristic can look at the next
    // touchdown before choosing the lean for it.
    const VectorXd probe = dynamics_(x, VectorXd::Zero(2), false).next;
    if (!probe.allFinite()) {
      inputs.resize(static_cast<std::size_t>(horizon), VectorXd::Zero(2));
      break;
    }
    const VectorXd v = policy::raibert(probe.tail<4>(), raibert_, params_, box_);
    inputs.push_back(v);
    x = dynamics_(x, v, false).next;
  }
  return inputs;
}

// ------------------------------------------------------------ linear fixture

LinearFixture::LinearFixture(zerodyn::Decomposition decomposition, MatrixXd embedding,
                             MatrixXd A_zz, MatrixXd A_zeta, MatrixXd Q, MatrixXd R)
    : decomp_(std::move(decomposition)), embedding_(std::move(embedding)) {
  const int n = state_dim();
  const int ne = eta_dim();
  const int nz = z_dim();
  if (embedding_.rows() != ne || A_zz.rows() != nz || A_zz.cols() != nz ||
      A_zeta.rows() != nz || A_zeta.cols() != ne || Q.rows() != n ||
      R.rows() != embedding_.cols()) {
    throw Error(ErrorCode::kInvalidArgument, "linear fixture blocks have inconsistent shapes");
  }
  T_ = zerodyn::phi_jacobian({VectorXd::Zero(decomp_.n()), VectorXd::Zero(decomp_.n())}, decomp_);
  T_inv_ = T_.inverse();

  MatrixXd An = MatrixXd::Zero(n, n);
  An.bottomLeftCorner(nz, ne) = A_zeta;
  An.bottomRightCorner(nz, nz) = A_zz;
  MatrixXd Bn = MatrixXd::Zero(n, embedding_.cols());
  Bn.topRows(ne) = embedding_;
  A_ = T_inv_ * An * T_;
  B_ = T_inv_ * Bn;

  cost_ = trajopt::QuadCost::make(std::move(Q), std::move(R));
  cost_.validate();
  cost_.Qf = trajopt::lqr_solve(A_, B_, cost_.Q, cost_.R).P;
  bounds_ = trajopt::InputBounds::unbounded(input_dim());
  out_box_ = policy::OutputBox::unbounded(input_dim());
  dynamics_ = trajopt::linear_dynamics(A_, B_);
}

LinearFixture LinearFixture::make_default() {
  MatrixXd B(2, 1);
  B << 0.0, 1.0;
  MatrixXd D(2, 2);
  D << 2.0, 0.5, 0.5, 1.0;
  MatrixXd E(2, 1);
  E << 1.0, 0.0;
  // z = (position, momentum): a double integrator pushed by the lean eta_1.
  MatrixXd A_zz(2, 2);
  A_zz << 1.0, 0.5, 0.0, 1.0;
  MatrixXd A_zeta(2, 2);
  A_zeta << 0.25, 0.0, 0.5, 0.0;
  return LinearFixture(zerodyn::Decomposition::make_constant(B, D), E, A_zz, A_zeta,
                       MatrixXd::Identity(4, 4), MatrixXd::Identity(1, 1));
}

Lift LinearFixture::lift(const VectorXd& eta, const VectorXd& z) const {
  Lift out;
  out.x = zerodyn::phi_inverse({eta, z}, decomp_).stacked();
  out.dx_deta = T_inv_.leftCols(eta_dim());
  out.dx_dz = T_inv_.rightCols(z_dim());
  return out;
}

Projection LinearFixture::project(const VectorXd& x) const {
  const zerodyn::EtaZ ez = zerodyn::phi(zerodyn::MechanicalState::unstack(x), decomp_);
  Projection p;
  p.eta = ez.eta;
  p.z = ez.z;
  p.deta_dx = T_.topRows(eta_dim());
  p.dz_dx = T_.bottomRows(z_dim());
  return p;
}

std::vector<VectorXd> LinearFixture::initial_guess(const VectorXd&, int horizon) const {
  return std::vector<VectorXd>(static_cast<std::size_t>(horizon), VectorXd::Zero(input_dim()));
}

policy::PolicyParams linear_policy(const MatrixXd& G, int hidden) {
  const int out = static_cast<int>(G.rows());
  const int nz = static_cast<int>(G.cols());
  if (hidden < 2 * nz) {
    throw Error(ErrorCode::kInvalidArgument, "linear policy needs hidden >= 2 z_dim");
  }
  policy::PolicyParams p = policy::PolicyParams::zeros(nz, hidden, out);
  p.W1.topRows(nz).setIdentity();
  p.W1.middleRows(nz, nz) = -MatrixXd::Identity(nz, nz);
  p.W2.topLeftCorner(2 * nz, 2 * nz).setIdentity();
  p.W3.leftCols(nz) = G;
  p.W3.middleCols(nz, nz) = -G;
  return p;
}

}  // namespace zdp::model
