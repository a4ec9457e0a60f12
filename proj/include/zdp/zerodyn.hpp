#pragma once

// Actuated / unactuated coordinate split for mechanical systems
//   D(q) qdd + H(q, qd) = B u,   rank(B) = m < n,
// via eta = (B^T q, B^T qd) and z = (N q, N D(q) qd) with N an orthonormal
// basis of the left null space of B.

#include <functional>

#include <Eigen/Core>

namespace zdp::zerodyn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

using MassMatrixFn = std::function<MatrixXd(const VectorXd& q)>;
/// psi: z -> eta on the zeroing manifold.
using ManifoldMap = std::function<VectorXd(const VectorXd& z)>;

/// Orthonormal rows spanning the left null space of B (N B = 0). Rows are
/// sign-normalized so their largest-magnitude entry is positive.
/// Throws Error(kRankDeficient) when rank(B) < cols(B) or cols(B) >= rows(B).
MatrixXd nullspace_basis(const MatrixXd& B);

struct Decomposition {
  MatrixXd B;
  MatrixXd N;
  MassMatrixFn mass_matrix;

  static Decomposition make(MatrixXd B, MassMatrixFn mass_matrix);
  static Decomposition make_constant(MatrixXd B, MatrixXd mass);

  int n() const { return static_cast<int>(B.rows()); }
  int m() const { return static_cast<int>(B.cols()); }
  int eta_dim() const { return 2 * m(); }
  int z_dim() const { return 2 * (n() - m()); }
};

struct MechanicalState {
  VectorXd q;
  VectorXd qdot;

  VectorXd stacked() const;
  static MechanicalState unstack(const VectorXd& x);
};

struct EtaZ {
  VectorXd eta;
  VectorXd z;
};

EtaZ phi(const MechanicalState& x, const Decomposition& d);

/// Throws Error(kSingularJacobian) if either stacked linear map has condition
/// number above 1e12.
MechanicalState phi_inverse(const EtaZ& ez, const Decomposition& d);

/// d(eta, z)/d(q, qdot). The q-derivative of D(q) is taken by central
/// differences; it vanishes exactly for constant mass matrices.
MatrixXd phi_jacobian(const MechanicalState& x, const Decomposition& d);

/// zeta(z) = (psi(z), z): the manifold point above z.
EtaZ on_manifold(const ManifoldMap& psi, const VectorXd& z);

/// e = eta - psi(z).
VectorXd manifold_error(const VectorXd& eta, const VectorXd& z,
                        const ManifoldMap& psi);

}  // namespace zdp::zerodyn
