#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>

#include "zdp/trajopt.hpp"

namespace zdp::trajopt {
namespace {

std::vector<bool> clamped_set(const VectorXd& x, const VectorXd& grad,
                              const VectorXd& lower, const VectorXd& upper) {
  std::vector<bool> c(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    c[i] = (x[i] == lower[i] && grad[i] > 0.0) || (x[i] == upper[i] && grad[i] < 0.0);
  }
  return c;
}

std::vector<int> indices(const std::vector<bool>& mask, bool value) {
  std::vector<int> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == value) out.push_back(static_cast<int>(i));
  }
  return out;
}

}  // namespace

BoxQpResult boxed_qp(const MatrixXd& H, const VectorXd& g,
                     const VectorXd& lower, const VectorXd& upper,
                     const VectorXd* warm_start, const BoxQpOptions& options) {
  const Eigen::Index n = g.size();
  BoxQpResult result;
  VectorXd x = warm_start ? *warm_start : VectorXd::Zero(n);
  x = x.cwiseMax(lower).cwiseMin(upper);

  auto value_of = [&](const VectorXd& v) { return 0.5 * v.dot(H * v) + g.dot(v); };
  double value = value_of(x);

  std::vector<bool> clamped(n, false);
  std::vector<int> free_idx;
  Eigen::LLT<MatrixXd> llt;
  bool factored = false;
  bool done = false;

  for (int iter = 0; iter < options.max_iter && !done; ++iter) {
    result.iterations = iter + 1;
    const VectorXd grad = g + H * x;
    const std::vector<bool> new_clamped = clamped_set(x, grad, lower, upper);
    if (std::none_of(new_clamped.begin(), new_clamped.end(),
                     [](bool b) { return !b; })) {
      clamped = new_clamped;
      done = true;
      break;
    }
    if (!factored || new_clamped != clamped) {
      clamped = new_clamped;
      free_idx = indices(clamped, false);
      MatrixXd Hff(free_idx.size(), free_idx.size());
      for (std::size_t i = 0; i < free_idx.size(); ++i)
        for (std::size_t j = 0; j < free_idx.size(); ++j)
          Hff(i, j) = H(free_idx[i], free_idx[j]);
      llt.compute(Hff);
      if (llt.info() != Eigen::Success) {
        result.hessian_ok = false;
        result.argmin = x;
        result.clamped = clamped;
        result.active_set = indices(clamped, true);
        return result;
      }
      factored = true;
    }

    VectorXd grad_free(free_idx.size());
    for (std::size_t i = 0; i < free_idx.size(); ++i) grad_free[i] = grad[free_idx[i]];
    if (grad_free.norm() < options.min_grad) {
      done = true;
      break;
    }

    // Newton step on the free subspace with clamped coordinates held fixed.
    VectorXd search = VectorXd::Zero(n);
    const VectorXd step_free = -llt.solve(grad_free);
    for (std::size_t i = 0; i < free_idx.size(); ++i) search[free_idx[i]] = step_free[i];
    const double sdotg = search.dot(grad);
    if (sdotg >= 0.0) {
      done = true;
      break;
    }

    double step = 1.0;
    VectorXd candidate = (x + step * search).cwiseMax(lower).cwiseMin(upper);
    double candidate_value = value_of(candidate);
    while ((candidate_value - value) / (step * sdotg) < options.armijo) {
      step *= options.step_dec;
      if (step < options.min_step) {
        result.degraded = true;
        done = true;
        break;
      }
      candidate = (x + step * search).cwiseMax(lower).cwiseMin(upper);
      candidate_value = value_of(candidate);
    }
    if (done) break;

    const double improvement = value - candidate_value;
    x = candidate;
    value = candidate_value;
    if (improvement < options.min_rel_improve * std::abs(value)) done = true;
  }
  if (!done) result.degraded = true;

  const VectorXd grad = g + H * x;
  result.clamped = clamped_set(x, grad, lower, upper);
  result.active_set = indices(result.clamped, true);
  result.argmin = x;
  result.free_hessian_inverse = MatrixXd::Zero(n, n);
  const std::vector<int> fi = indices(result.clamped, false);
  if (!fi.empty()) {
    MatrixXd Hff(fi.size(), fi.size());
    for (std::size_t i = 0; i < fi.size(); ++i)
      for (std::size_t j = 0; j < fi.size(); ++j) Hff(i, j) = H(fi[i], fi[j]);
    Eigen::LLT<MatrixXd> final_llt(Hff);
    if (final_llt.info() != Eigen::Success) {
      result.hessian_ok = false;
      return result;
    }
    const MatrixXd inv = final_llt.solve(MatrixXd::Identity(fi.size(), fi.size()));
    for (std::size_t i = 0; i < fi.size(); ++i)
      for (std::size_t j = 0; j < fi.size(); ++j)
        result.free_hessian_inverse(fi[i], fi[j]) = inv(i, j);
  }
  return result;
}

}  // namespace zdp::trajopt
