#include <algorithm>
#include <cmath>

#include "zdp/errors.hpp"
#include "zdp/trajopt.hpp"

namespace zdp::trajopt {
namespace {

struct Trajectory {
  std::vector<VectorXd> x;
  std::vector<VectorXd> v;
  double cost = 0.0;
};

bool finite_trajectory(const Trajectory& t) {
  if (!std::isfinite(t.cost)) return false;
  for (const auto& s : t.x)
    if (!s.allFinite()) return false;
  return true;
}

struct BackwardPass {
  std::vector<MatrixXd> K;
  std::vector<VectorXd> k;
  std::vector<MatrixXd> q_vv;
  std::vector<MatrixXd> q_vx;
  std::vector<std::vector<bool>> clamped;
  // Expected cost change is alpha * dv1 + alpha^2 * dv2.
  double dv1 = 0.0;
  double dv2 = 0.0;
};

// Returns false if a regularized Q_vv failed to factor.
bool backward_pass(const Trajectory& traj, const std::vector<MatrixXd>& A,
                   const std::vector<MatrixXd>& B, const QuadCost& cost,
                   const InputBounds& bounds, double mu, BackwardPass& out) {
  const std::size_t T = traj.v.size();
  out.K.assign(T, MatrixXd());
  out.k.assign(T, VectorXd());
  out.q_vv.assign(T, MatrixXd());
  out.q_vx.assign(T, MatrixXd());
  out.clamped.assign(T, {});
  out.dv1 = out.dv2 = 0.0;

  VectorXd Vx = 2.0 * cost.Qf * traj.x[T];
  MatrixXd Vxx = 2.0 * cost.Qf;
  for (std::size_t s = T; s-- > 0;) {
    const VectorXd& x = traj.x[s];
    const VectorXd& v = traj.v[s];
    const VectorXd Qx = 2.0 * cost.Q * x + A[s].transpose() * Vx;
    const VectorXd Qv = 2.0 * cost.R * v + B[s].transpose() * Vx;
    const MatrixXd Qxx = 2.0 * cost.Q + A[s].transpose() * Vxx * A[s];
    MatrixXd Qvv = 2.0 * cost.R + B[s].transpose() * Vxx * B[s];
    Qvv = 0.5 * (Qvv + Qvv.transpose());
    const MatrixXd Qvx = B[s].transpose() * Vxx * A[s];

    MatrixXd Qvv_reg = Qvv;
    Qvv_reg.diagonal().array() += mu;

    const VectorXd lower = bounds.lower - v;
    const VectorXd upper = bounds.upper - v;
    const VectorXd* warm = (s + 1 < T && out.k[s + 1].size() == v.size())
                               ? &out.k[s + 1]
                               : nullptr;
    const BoxQpResult qp = boxed_qp(Qvv_reg, Qv, lower, upper, warm);
    if (!qp.hessian_ok) return false;

    const VectorXd& k = qp.argmin;
    // Feedback only on free inputs: K = H_ff^-1 Q_vx, clamped rows zero.
    const MatrixXd K = qp.free_hessian_inverse * Qvx;
    const MatrixXd Kt = -K;  // dv = k + Kt dx

    out.dv1 += k.dot(Qv);
    out.dv2 += 0.5 * k.dot(Qvv * k);

    Vx = Qx + Kt.transpose() * Qvv * k + Kt.transpose() * Qv +
         Qvx.transpose() * k;
    Vxx = Qxx + Kt.transpose() * Qvv * Kt + Kt.transpose() * Qvx +
          Qvx.transpose() * Kt;
    Vxx = 0.5 * (Vxx + Vxx.transpose());

    out.K[s] = K;
    out.k[s] = k;
    out.q_vv[s] = Qvv_reg;
    out.q_vx[s] = Qvx;
    out.clamped[s] = qp.clamped;
  }
  return true;
}

Trajectory forward(const VectorXd& x0, const Trajectory& nominal,
                   const BackwardPass& bp, double alpha, const Dynamics& f,
                   const QuadCost& cost, const InputBounds& bounds) {
  const std::size_t T = nominal.v.size();
  Trajectory out;
  out.x.reserve(T + 1);
  out.v.reserve(T);
  out.x.push_back(x0);
  for (std::size_t s = 0; s < T; ++s) {
    const VectorXd dx = out.x[s] - nominal.x[s];
    const VectorXd v =
        bounds.clamp(nominal.v[s] + alpha * bp.k[s] - bp.K[s] * dx);
    out.cost += cost.stage(out.x[s], v);
    out.v.push_back(v);
    out.x.push_back(f(out.x[s], v, false).next);
    if (!out.x.back().allFinite()) {
      out.cost = std::numeric_limits<double>::infinity();
      return out;
    }
  }
  out.cost += cost.terminal(out.x[T]);
  return out;
}

}  // namespace

InputBounds InputBounds::unbounded(int dim) {
  const double inf = std::numeric_limits<double>::infinity();
  return {VectorXd::Constant(dim, -inf), VectorXd::Constant(dim, inf)};
}

bool InputBounds::contains(const VectorXd& v, double slack) const {
  return ((v - lower).array() >= -slack).all() &&
         ((upper - v).array() >= -slack).all();
}

VectorXd InputBounds::clamp(const VectorXd& v) const {
  return v.cwiseMax(lower).cwiseMin(upper);
}

Dynamics linear_dynamics(MatrixXd A, MatrixXd B) {
  return [A = std::move(A), B = std::move(B)](const VectorXd& x,
                                              const VectorXd& v, bool jac) {
    StepResult r;
    r.next = A * x + B * v;
    if (jac) {
      r.A = A;
      r.B = B;
    }
    return r;
  };
}

double rollout_cost(const VectorXd& x0, const std::vector<VectorXd>& inputs,
                    const Dynamics& dynamics, const QuadCost& cost,
                    std::vector<VectorXd>* states) {
  VectorXd x = x0;
  double total = 0.0;
  if (states) {
    states->clear();
    states->push_back(x);
  }
  for (const auto& v : inputs) {
    total += cost.stage(x, v);
    x = dynamics(x, v, false).next;
    if (states) states->push_back(x);
  }
  return total + cost.terminal(x);
}

IlqrSolution ilqr_solve(const VectorXd& x0, const std::vector<VectorXd>& v_init,
                        const Dynamics& dynamics, const QuadCost& cost,
                        const InputBounds& bounds, const IlqrOptions& options) {
  if (v_init.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "ilqr_solve needs a horizon of at least one step");
  }
  for (const auto& v : v_init) {
    if (!bounds.contains(v, 1e-12)) {
      throw Error(ErrorCode::kInfeasibleInit, "initial inputs violate the box");
    }
  }

  Trajectory traj;
  traj.v.reserve(v_init.size());
  for (const auto& v : v_init) traj.v.push_back(bounds.clamp(v));
  traj.cost = rollout_cost(x0, traj.v, dynamics, cost, &traj.x);
  if (!finite_trajectory(traj)) {
    throw Error(ErrorCode::kDivergedRollout, "initial rollout is not finite");
  }

  const std::size_t T = traj.v.size();
  IlqrSolution sol;
  sol.cost_history.push_back(traj.cost);

  std::vector<MatrixXd> A(T), B(T);
  auto linearize = [&] {
    for (std::size_t s = 0; s < T; ++s) {
      StepResult r = dynamics(traj.x[s], traj.v[s], true);
      A[s] = std::move(r.A);
      B[s] = std::move(r.B);
    }
  };

  double mu = 0.0;
  auto increase_mu = [&] {
    mu = std::max(options.mu_min, mu * options.mu_factor);
  };
  auto decrease_mu = [&] {
    mu /= options.mu_factor;
    if (mu < options.mu_min) mu = 0.0;
  };

  BackwardPass bp;
  bool converged = false;
  bool have_gains = false;
  linearize();
  while (true) {
    // Backward pass at the current trajectory, regularizing until Q_vv
    // factors.
    bool ok = backward_pass(traj, A, B, cost, bounds, mu, bp);
    while (!ok) {
      increase_mu();
      if (mu > options.mu_max) break;
      ok = backward_pass(traj, A, B, cost, bounds, mu, bp);
    }
    if (!ok) break;
    have_gains = true;

    if (converged) break;
    if (-(bp.dv1 + bp.dv2) < options.tolerance) {
      converged = true;
      break;
    }
    if (sol.iterations >= options.max_iter) break;

    bool accepted = false;
    double alpha = 1.0;
    for (int ls = 0; ls < options.line_search_steps; ++ls, alpha *= 0.5) {
      Trajectory trial = forward(x0, traj, bp, alpha, dynamics, cost, bounds);
      if (finite_trajectory(trial) && trial.cost < traj.cost) {
        const double decrease = traj.cost - trial.cost;
        traj = std::move(trial);
        accepted = true;
        ++sol.iterations;
        sol.cost_history.push_back(traj.cost);
        if (decrease < options.tolerance) converged = true;
        break;
      }
    }
    if (accepted) {
      decrease_mu();
      linearize();
    } else {
      increase_mu();
      if (mu > options.mu_max) break;
    }
  }

  if (!have_gains) {
    throw Error(ErrorCode::kNoConvergence, "Q_vv could not be regularized to positive definite");
  }
  sol.states = std::move(traj.x);
  sol.inputs = std::move(traj.v);
  sol.total_cost = traj.cost;
  sol.gains_K = std::move(bp.K);
  sol.feedforward_k = std::move(bp.k);
  sol.q_vv = std::move(bp.q_vv);
  sol.q_vx = std::move(bp.q_vx);
  sol.clamped = std::move(bp.clamped);
  sol.converged = converged;
  return sol;
}

MatrixXd solution_gradient(const IlqrSolution& sol, bool allow_truncated) {
  if (!sol.converged && !allow_truncated) {
    throw Error(ErrorCode::kNotConverged, "iLQR solution did not converge");
  }
  return -sol.gains_K.front();
}

}  // namespace zdp::trajopt
