#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "testutil.hpp"
#include "zdp/errors.hpp"
#include "zdp/zerodyn.hpp"

using namespace zdp;
using namespace zdp::zerodyn;
using testutil::MatrixXd;
using testutil::VectorXd;

namespace {

// Configuration-dependent SPD mass matrix D(q) = D0 + S(q) S(q)^T.
MassMatrixFn varying_mass(const MatrixXd& D0, const MatrixXd& C) {
  return [D0, C](const VectorXd& q) {
    const MatrixXd S = C * q.array().sin().matrix().asDiagonal();
    return MatrixXd(D0 + S * S.transpose());
  };
}

}  // namespace

TEST_CASE("left null space basis") {
  SUBCASE("B = e2 in the plane") {
    const MatrixXd N = nullspace_basis(Eigen::Vector2d(0, 1));
    CHECK((N - Eigen::RowVector2d(1, 0)).norm() < 1e-15);
  }
  SUBCASE("B = e3 in space") {
    const MatrixXd N = nullspace_basis(Eigen::Vector3d(0, 0, 1));
    CHECK(N.rows() == 2);
    CHECK((N * Eigen::Vector3d(0, 0, 1)).norm() < 1e-12);
    CHECK(N.col(2).norm() < 1e-12);
  }
  SUBCASE("random full-rank 6x2") {
    std::mt19937_64 rng(31);
    for (int i = 0; i < 100; ++i) {
      const MatrixXd B = testutil::gaussian(6, 2, rng);
      const MatrixXd N = nullspace_basis(B);
      CHECK((N * B).norm() < 1e-10);
      CHECK((N * N.transpose() - MatrixXd::Identity(4, 4)).norm() < 1e-10);
    }
  }
  SUBCASE("rank deficiency") {
    MatrixXd B(3, 2);
    B << 1, 2, 2, 4, 3, 6;
    try {
      nullspace_basis(B);
      FAIL("expected RankDeficient");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kRankDeficient);
    }
    CHECK_THROWS_AS(nullspace_basis(MatrixXd::Identity(2, 2)), Error);
  }
}

TEST_CASE("phi examples") {
  const Decomposition d = Decomposition::make_constant(Eigen::Vector2d(0, 1), MatrixXd::Identity(2, 2));
  const EtaZ zero = phi({VectorXd::Zero(2), VectorXd::Zero(2)}, d);
  CHECK(zero.eta.norm() == 0.0);
  CHECK(zero.z.norm() == 0.0);

  const EtaZ ez = phi({Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 4)}, d);
  CHECK((ez.eta - Eigen::Vector2d(2, 4)).norm() < 1e-15);
  CHECK((ez.z - Eigen::Vector2d(1, 3)).norm() < 1e-15);

  const MechanicalState back = phi_inverse(ez, d);
  CHECK((back.q - Eigen::Vector2d(1, 2)).norm() < 1e-12);
  CHECK((back.qdot - Eigen::Vector2d(3, 4)).norm() < 1e-12);

  const MechanicalState origin = phi_inverse({VectorXd::Zero(2), VectorXd::Zero(2)}, d);
  CHECK(origin.stacked().norm() == 0.0);
}

TEST_CASE("diffeomorphism over random systems and states") {
  std::mt19937_64 rng(32);
  double worst_forward = 0.0, worst_backward = 0.0;
  for (int sys = 0; sys < 100; ++sys) {
    const int n = 3 + sys % 4;
    const int m = 1 + sys % (n - 1);
    const MatrixXd B = testutil::gaussian(n, m, rng);
    const MatrixXd D0 = testutil::random_spd(n, 0.5, 3.0, rng);
    const MatrixXd C = 0.5 * testutil::gaussian(n, n, rng);
    const Decomposition d = Decomposition::make(B, varying_mass(D0, C));
    for (int s = 0; s < 100; ++s) {
      const MechanicalState x{testutil::uniform(n, -2, 2, rng), testutil::uniform(n, -2, 2, rng)};
      const MechanicalState back = phi_inverse(phi(x, d), d);
      worst_backward = std::max(worst_backward, (back.stacked() - x.stacked()).cwiseAbs().maxCoeff());

      EtaZ ez{testutil::uniform(2 * m, -2, 2, rng), testutil::uniform(2 * (n - m), -2, 2, rng)};
      const EtaZ again = phi(phi_inverse(ez, d), d);
      worst_forward = std::max(worst_forward, std::max((again.eta - ez.eta).cwiseAbs().maxCoeff(),
                                                       (again.z - ez.z).cwiseAbs().maxCoeff()));
    }
  }
  CHECK(worst_backward < 1e-10);
  CHECK(worst_forward < 1e-10);
}

TEST_CASE("phi Jacobian matches finite differences") {
  std::mt19937_64 rng(33);
  const int n = 4, m = 2;
  const MatrixXd B = testutil::gaussian(n, m, rng);
  const Decomposition d =
      Decomposition::make(B, varying_mass(testutil::random_spd(n, 1, 2, rng), testutil::gaussian(n, n, rng)));
  for (int i = 0; i < 20; ++i) {
    const VectorXd x = testutil::uniform(2 * n, -1, 1, rng);
    auto f = [&](const VectorXd& s) {
      const EtaZ ez = phi(MechanicalState::unstack(s), d);
      VectorXd out(2 * n);
      out << ez.eta.head(m), ez.eta.tail(m), ez.z.head(n - m), ez.z.tail(n - m);
      return out;
    };
    const MatrixXd J = phi_jacobian(MechanicalState::unstack(x), d);
    CHECK((J - testutil::fd_jacobian(f, x, 1e-5)).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("ill-conditioned maps are rejected") {
  // D nearly singular along the null direction makes N D degenerate.
  MatrixXd D(2, 2);
  D << 1e-14, 0, 0, 1;
  const Decomposition d = Decomposition::make_constant(Eigen::Vector2d(0, 1), D);
  try {
    phi_inverse({Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 1)}, d);
    FAIL("expected SingularJacobian");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSingularJacobian);
  }
}

TEST_CASE("manifold error") {
  const ManifoldMap psi = [](const VectorXd& z) {
    return VectorXd(Eigen::Vector2d(std::sin(z(0)), z(1) * z(2)));
  };
  const VectorXd z = Eigen::Vector3d(0.3, -1.2, 0.7);
  const EtaZ on = on_manifold(psi, z);
  CHECK(manifold_error(on.eta, on.z, psi).norm() < 1e-12);

  const ManifoldMap zero = [](const VectorXd&) { return VectorXd(VectorXd::Zero(2)); };
  const VectorXd eta = Eigen::Vector2d(1, 0);
  CHECK((manifold_error(eta, z, zero) - eta).norm() == 0.0);
}
