#pragma once

// Optimal-control problems in the form the training loop consumes: a state
// x with a coordinate split (eta, z), discrete dynamics whose input enters
// eta' through a fixed embedding (eta' = E v for the actuated part), a
// quadratic cost and input box.

#include <memory>
#include <vector>

#include <Eigen/Core>

#include "zdp/hopper.hpp"
#include "zdp/policy.hpp"
#include "zdp/trajopt.hpp"
#include "zdp/zerodyn.hpp"

namespace zdp::model {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Lift {
  VectorXd x;
  MatrixXd dx_deta;
  MatrixXd dx_dz;
};

struct Projection {
  VectorXd eta;
  VectorXd z;
  MatrixXd deta_dx;
  MatrixXd dz_dx;
};

class Model {
 public:
  virtual ~Model() = default;

  virtual int state_dim() const = 0;
  virtual int eta_dim() const = 0;
  virtual int z_dim() const = 0;
  virtual int input_dim() const = 0;

  /// Maps a policy output (an input-space vector) to a point of eta space.
  virtual const MatrixXd& embedding() const = 0;

  /// x = Phi^-1(eta, z) with Jacobians.
  virtual Lift lift(const VectorXd& eta, const VectorXd& z) const = 0;
  /// (eta, z) = Phi(x) with Jacobians.
  virtual Projection project(const VectorXd& x) const = 0;

  virtual const trajopt::Dynamics& dynamics() const = 0;
  virtual const trajopt::QuadCost& cost() const = 0;
  virtual const trajopt::InputBounds& bounds() const = 0;
  virtual const policy::OutputBox& output_box() const = 0;

  /// First-guess input sequence for iLQR from x0.
  virtual std::vector<VectorXd> initial_guess(const VectorXd& x0, int horizon) const = 0;
};

/// Infinite-horizon LQR at the origin of a model (P, K from the
/// linearization and the model's stage cost).
trajopt::LqrResult lqr_at_origin(const Model& model);

/// Linear map z -> v describing the LQR-invariant manifold in input space,
///   v*(z) = argmin_v v'Rv + V(Phi^-1(E v, z)),   V(x) = x'Px,
/// exact when v enters only through eta' = E v.
MatrixXd lqr_manifold_gain(const Model& model);

/// The same map read off the dominant invariant subspace of the LQR closed
/// loop in (eta, z) coordinates. Throws Error(kRankDeficient) when that
/// subspace is not a graph over z.
MatrixXd lqr_manifold_subspace(const Model& model);

// ------------------------------------------------------------ hopper

/// Q = diag(1,1,1,1, 10,10,1,1) over (eta, z), R = I, terminal weight from
/// the Riccati solution at the origin.
trajopt::QuadCost default_hopper_cost(const hopper::HopperParams& params);

class HopperModel final : public Model {
 public:
  HopperModel(hopper::HopperParams params, hopper::InputBox box,
              policy::RaibertParams raibert, trajopt::QuadCost cost);
  explicit HopperModel(const hopper::HopperParams& params = {});

  int state_dim() const override { return hopper::kHopStateDim; }
  int eta_dim() const override { return hopper::kEtaDim; }
  int z_dim() const override { return hopper::kZDim; }
  int input_dim() const override { return hopper::kInputDim; }
  const MatrixXd& embedding() const override { return embedding_; }
  Lift lift(const VectorXd& eta, const VectorXd& z) const override;
  Projection project(const VectorXd& x) const override;
  const trajopt::Dynamics& dynamics() const override { return dynamics_; }
  const trajopt::QuadCost& cost() const override { return cost_; }
  const trajopt::InputBounds& bounds() const override { return bounds_; }
  const policy::OutputBox& output_box() const override { return out_box_; }
  std::vector<VectorXd> initial_guess(const VectorXd& x0, int horizon) const override;

  const hopper::HopperParams& params() const { return params_; }
  const hopper::InputBox& box() const { return box_; }
  const policy::RaibertParams& raibert() const { return raibert_; }

 private:
  hopper::HopperParams params_;
  hopper::InputBox box_;
  policy::RaibertParams raibert_;
  trajopt::QuadCost cost_;
  trajopt::InputBounds bounds_;
  policy::OutputBox out_box_;
  MatrixXd embedding_;
  trajopt::Dynamics dynamics_;
};

// ------------------------------------------------------------ linear fixture

/// Linear mechanical system given in discrete normal form
///   eta' = E v,   z' = A_zz z + A_zeta eta
/// and expressed in mechanical coordinates x = (q, qdot) through a constant
/// mass-matrix decomposition. Unconstrained, so LQR is its exact optimal
/// controller and the LQR-invariant manifold is linear.
class LinearFixture final : public Model {
 public:
  LinearFixture(zerodyn::Decomposition decomposition, MatrixXd embedding,
                MatrixXd A_zz, MatrixXd A_zeta, MatrixXd Q, MatrixXd R);

  /// n = 2, m = 1 system with a coupled constant mass matrix.
  static LinearFixture make_default();

  int state_dim() const override { return 2 * decomp_.n(); }
  int eta_dim() const override { return decomp_.eta_dim(); }
  int z_dim() const override { return decomp_.z_dim(); }
  int input_dim() const override { return static_cast<int>(embedding_.cols()); }
  const MatrixXd& embedding() const override { return embedding_; }
  Lift lift(const VectorXd& eta, const VectorXd& z) const override;
  Projection project(const VectorXd& x) const override;
  const trajopt::Dynamics& dynamics() const override { return dynamics_; }
  const trajopt::QuadCost& cost() const override { return cost_; }
  const trajopt::InputBounds& bounds() const override { return bounds_; }
  const policy::OutputBox& output_box() const override { return out_box_; }
  std::vector<VectorXd> initial_guess(const VectorXd& x0, int horizon) const override;

  const MatrixXd& A() const { return A_; }
  const MatrixXd& B() const { return B_; }
  /// Constant Jacobian of Phi.
  const MatrixXd& phi_matrix() const { return T_; }
  const zerodyn::Decomposition& decomposition() const { return decomp_; }

 private:
  zerodyn::Decomposition decomp_;
  MatrixXd embedding_;
  MatrixXd T_, T_inv_;
  MatrixXd A_, B_;
  trajopt::QuadCost cost_;
  trajopt::InputBounds bounds_;
  policy::OutputBox out_box_;
  trajopt::Dynamics dynamics_;
};

/// Policy parameters that reproduce v = G z exactly with ReLU units:
/// W1 = [I; -I], W2 = I, W3 = [G, -G] (hidden >= 2 z_dim, extra units dead).
policy::PolicyParams linear_policy(const MatrixXd& G, int hidden);

}  // namespace zdp::model
