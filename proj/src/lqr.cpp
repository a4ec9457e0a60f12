#include <cmath>

#include <Eigen/Dense>

#include "zdp/errors.hpp"
#include "zdp/trajopt.hpp"

namespace zdp::trajopt {
namespace {

bool symmetric(const MatrixXd& m) {
  return m.rows() == m.cols() &&
         (m - m.transpose()).cwiseAbs().maxCoeff() <=
             1e-10 * std::max(1.0, m.cwiseAbs().maxCoeff());
}

double min_eigenvalue(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace

QuadCost QuadCost::make(MatrixXd Q, MatrixXd R) {
  QuadCost c;
  c.Qf = Q;
  c.Q = std::move(Q);
  c.R = std::move(R);
  return c;
}

void QuadCost::validate() const {
  if (!symmetric(Q) || min_eigenvalue(Q) <= 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "Q must be symmetric positive definite");
  }
  if (!symmetric(R) || min_eigenvalue(R) <= 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "R must be symmetric positive definite");
  }
  if (Qf.rows() != Q.rows() || !symmetric(Qf) || min_eigenvalue(Qf) < -1e-12) {
    throw Error(ErrorCode::kInvalidArgument, "Qf must be symmetric positive semidefinite");
  }
}

double QuadCost::stage(const VectorXd& x, const VectorXd& v) const {
  return x.dot(Q * x) + v.dot(R * v);
}

double QuadCost::terminal(const VectorXd& x) const { return x.dot(Qf * x); }

double spectral_radius(const MatrixXd& M) {
  Eigen::EigenSolver<MatrixXd> es(M, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

LqrResult lqr_solve(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q,
                    const MatrixXd& R, double tol, int max_iter) {
  const Eigen::Index d = A.rows();
  if (A.cols() != d || B.rows() != d || Q.rows() != d || R.rows() != B.cols()) {
    throw Error(ErrorCode::kInvalidArgument, "lqr_solve: inconsistent dimensions");
  }
  LqrResult out;
  MatrixXd P = Q;
  for (int it = 1; it <= max_iter; ++it) {
    const MatrixXd BtP = B.transpose() * P;
    const MatrixXd S = R + BtP * B;
    const MatrixXd K = S.ldlt().solve(BtP * A);
    MatrixXd next = Q + A.transpose() * P * A - A.transpose() * BtP.transpose() * K;
    next = 0.5 * (next + next.transpose());
    const double residual = (next - P).norm() / std::max(1.0, next.norm());
    P = std::move(next);
    if (!P.allFinite()) break;
    if (residual < tol) {
      out.P = P;
      out.K = (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
      out.iterations = it;
      out.residual = residual;
      if (spectral_radius(A - B * out.K) >= 1.0) {
        throw Error(ErrorCode::kNoConvergence, "closed loop A - BK is not stable");
      }
      return out;
    }
  }
  throw Error(ErrorCode::kNoConvergence,
              "Riccati iteration did not converge; (A, B) may not be stabilizable");
}

}  // namespace zdp::trajopt
