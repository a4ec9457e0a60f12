#include "zdp/zerodyn.hpp"

#include <limits>

#include <Eigen/Dense>

#include "zdp/errors.hpp"

namespace zdp::zerodyn {
namespace {

constexpr double kMaxCondition = 1e12;

double condition_number(const MatrixXd& m) {
  Eigen::JacobiSVD<MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s.minCoeff() <= 0.0) return std::numeric_limits<double>::infinity();
  return s.maxCoeff() / s.minCoeff();
}

VectorXd solve_checked(const MatrixXd& m, const VectorXd& rhs,
                       const char* what) {
  if (condition_number(m) > kMaxCondition) {
    throw Error(ErrorCode::kSingularJacobian, what);
  }
  return m.partialPivLu().solve(rhs);
}

}  // namespace

MatrixXd nullspace_basis(const MatrixXd& B) {
  const int n = static_cast<int>(B.rows());
  const int m = static_cast<int>(B.cols());
  if (m >= n || m == 0) {
    throw Error(ErrorCode::kRankDeficient, "B must have fewer columns than rows");
  }
  Eigen::JacobiSVD<MatrixXd> svd(B.transpose(), Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (s.minCoeff() <= 1e-12 * s.maxCoeff()) {
    throw Error(ErrorCode::kRankDeficient, "B does not have full column rank");
  }
  MatrixXd N = svd.matrixV().rightCols(n - m).transpose();
  for (int i = 0; i < N.rows(); ++i) {
    Eigen::Index j;
    N.row(i).cwiseAbs().maxCoeff(&j);
    if (N(i, j) < 0.0) N.row(i) *= -1.0;
  }
  return N;
}

Decomposition Decomposition::make(MatrixXd B, MassMatrixFn mass_matrix) {
  Decomposition d;
  d.N = nullspace_basis(B);
  d.B = std::move(B);
  d.mass_matrix = std::move(mass_matrix);
  return d;
}

Decomposition Decomposition::make_constant(MatrixXd B, MatrixXd mass) {
  return make(std::move(B), [mass = std::move(mass)](const VectorXd&) { return mass; });
}

VectorXd MechanicalState::stacked() const {
  VectorXd x(q.size() + qdot.size());
  x << q, qdot;
  return x;
}

MechanicalState MechanicalState::unstack(const VectorXd& x) {
  const Eigen::Index n = x.size() / 2;
  return {x.head(n), x.tail(n)};
}

EtaZ phi(const MechanicalState& x, const Decomposition& d) {
  const MatrixXd D = d.mass_matrix(x.q);
  EtaZ out;
  out.eta.resize(d.eta_dim());
  out.eta << d.B.transpose() * x.q, d.B.transpose() * x.qdot;
  out.z.resize(d.z_dim());
  out.z << d.N * x.q, d.N * D * x.qdot;
  return out;
}

MechanicalState phi_inverse(const EtaZ& ez, const Decomposition& d) {
  const int n = d.n();
  const int m = d.m();
  MatrixXd pos(n, n);
  pos << d.B.transpose(), d.N;
  VectorXd rhs_q(n);
  rhs_q << ez.eta.head(m), ez.z.head(n - m);
  MechanicalState x;
  x.q = solve_checked(pos, rhs_q, "configuration map is ill-conditioned");

  MatrixXd vel(n, n);
  vel << d.B.transpose(), d.N * d.mass_matrix(x.q);
  VectorXd rhs_v(n);
  rhs_v << ez.eta.tail(m), ez.z.tail(n - m);
  x.qdot = solve_checked(vel, rhs_v, "velocity map is ill-conditioned");
  return x;
}

MatrixXd phi_jacobian(const MechanicalState& x, const Decomposition& d) {
  const int n = d.n();
  const int m = d.m();
  const MatrixXd Bt = d.B.transpose();
  MatrixXd J = MatrixXd::Zero(2 * n, 2 * n);
  // rows: eta_q (m), eta_v (m), z_q (n-m), z_v (n-m)
  J.block(0, 0, m, n) = Bt;
  J.block(m, n, m, n) = Bt;
  J.block(2 * m, 0, n - m, n) = d.N;
  J.block(2 * m + n - m, n, n - m, n) = d.N * d.mass_matrix(x.q);
  constexpr double h = 1e-6;
  for (int j = 0; j < n; ++j) {
    VectorXd qp = x.q, qm = x.q;
    qp[j] += h;
    qm[j] -= h;
    const MatrixXd dD = (d.mass_matrix(qp) - d.mass_matrix(qm)) / (2.0 * h);
    J.block(2 * m + n - m, j, n - m, 1) = d.N * dD * x.qdot;
  }
  return J;
}

EtaZ on_manifold(const ManifoldMap& psi, const VectorXd& z) {
  return {psi(z), z};
}

VectorXd manifold_error(const VectorXd& eta, const VectorXd& z,
                        const ManifoldMap& psi) {
  return eta - psi(z);
}

}  // namespace zdp::zerodyn
