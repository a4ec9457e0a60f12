#pragma once

// Discrete-time optimal control: infinite-horizon LQR, the box-constrained QP
// used inside the backward pass, and box-constrained iLQR with line search.

#include <functional>
#include <vector>

#include <Eigen/Core>

namespace zdp::trajopt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Stage cost x'Qx + v'Rv and terminal cost x'Qf x.
struct QuadCost {
  MatrixXd Q;
  MatrixXd R;
  MatrixXd Qf;

  /// Uses Q as the terminal weight.
  static QuadCost make(MatrixXd Q, MatrixXd R);

  /// Throws Error(kInvalidArgument) unless Q, R are symmetric positive
  /// definite and Qf is symmetric positive semidefinite.
  void validate() const;

  double stage(const VectorXd& x, const VectorXd& v) const;
  double terminal(const VectorXd& x) const;
};

struct InputBounds {
  VectorXd lower;
  VectorXd upper;

  static InputBounds unbounded(int dim);
  bool contains(const VectorXd& v, double slack = 0.0) const;
  VectorXd clamp(const VectorXd& v) const;
};

// ---------------------------------------------------------------- LQR

struct LqrResult {
  MatrixXd P;
  MatrixXd K;  // v = -K x
  int iterations = 0;
  double residual = 0.0;
};

/// Riccati fixed-point iteration P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA
/// started from P = Q. Throws Error(kNoConvergence) if the residual does not
/// drop below tol within max_iter sweeps or the closed loop is not stable.
LqrResult lqr_solve(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q,
                    const MatrixXd& R, double tol = 1e-12,
                    int max_iter = 1000000);

double spectral_radius(const MatrixXd& M);

// ---------------------------------------------------------------- boxed QP

struct BoxQpOptions {
  int max_iter = 100;
  double min_grad = 1e-8;
  double min_rel_improve = 1e-12;
  double step_dec = 0.6;
  double min_step = 1e-22;
  double armijo = 0.1;
};

struct BoxQpResult {
  VectorXd argmin;
  std::vector<int> active_set;     // clamped coordinates at the solution
  std::vector<bool> clamped;       // same, as a mask
  MatrixXd free_hessian_inverse;   // (H_ff)^-1 embedded, zero elsewhere
  int iterations = 0;
  bool hessian_ok = true;          // false when H_ff is not positive definite
  bool degraded = false;           // hit max_iter or the step floor
};

/// Projected-Newton solution of min 0.5 v'Hv + g'v s.t. lower <= v <= upper.
BoxQpResult boxed_qp(const MatrixXd& H, const VectorXd& g,
                     const VectorXd& lower, const VectorXd& upper,
                     const VectorXd* warm_start = nullptr,
                     const BoxQpOptions& options = {});

// ---------------------------------------------------------------- iLQR

struct StepResult {
  VectorXd next;
  MatrixXd A;  // d next / d x
  MatrixXd B;  // d next / d v
};

/// Discrete dynamics x' = f(x, v); Jacobians are filled when requested.
using Dynamics =
    std::function<StepResult(const VectorXd& x, const VectorXd& v, bool jacobians)>;

Dynamics linear_dynamics(MatrixXd A, MatrixXd B);

struct IlqrOptions {
  int max_iter = 5;
  double tolerance = 1e-9;
  double mu_min = 1e-6;
  double mu_max = 1e6;
  double mu_factor = 10.0;
  int line_search_steps = 11;  // alpha in {1, 1/2, ..., 2^-10}
};

struct IlqrSolution {
  std::vector<VectorXd> states;        // T + 1
  std::vector<VectorXd> inputs;        // T
  std::vector<MatrixXd> gains_K;       // dv = k - K dx; clamped rows zero
  std::vector<VectorXd> feedforward_k;
  std::vector<MatrixXd> q_vv;
  std::vector<MatrixXd> q_vx;
  std::vector<std::vector<bool>> clamped;
  std::vector<double> cost_history;    // initial cost, then each accepted step
  double total_cost = 0.0;
  int iterations = 0;                  // accepted forward passes
  bool converged = false;
};

/// Gauss-Newton iLQR with boxed-QP backward pass, backtracking line search
/// and Levenberg regularization on Q_vv. Gains are always those of a
/// backward pass taken at the returned trajectory.
///
/// Throws Error(kInfeasibleInit) if v_init leaves the box and
/// Error(kDivergedRollout) if the initial rollout is not finite.
IlqrSolution ilqr_solve(const VectorXd& x0, const std::vector<VectorXd>& v_init,
                        const Dynamics& dynamics, const QuadCost& cost,
                        const InputBounds& bounds,
                        const IlqrOptions& options = {});

/// dv0*/dx0 = -K0 (zero rows for clamped inputs). Throws
/// Error(kNotConverged) unless the solve converged or allow_truncated is set
/// (iteration-capped solves treated as exact).
MatrixXd solution_gradient(const IlqrSolution& sol, bool allow_truncated = false);

/// Cost of rolling out `inputs` from x0.
double rollout_cost(const VectorXd& x0, const std::vector<VectorXd>& inputs,
                    const Dynamics& dynamics, const QuadCost& cost,
                    std::vector<VectorXd>* states = nullptr);

}  // namespace zdp::trajopt
