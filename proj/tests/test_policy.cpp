#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "testutil.hpp"
#include "zdp/errors.hpp"
#include "zdp/eval.hpp"
#include "zdp/policy.hpp"

using namespace zdp;
using namespace zdp::policy;
using testutil::MatrixXd;
using testutil::VectorXd;

namespace {

PolicyParams random_params(int z, int h, int out, double scale, std::mt19937_64& rng) {
  PolicyParams p = PolicyParams::zeros(z, h, out);
  p.W1 = scale * testutil::gaussian(h, z, rng);
  p.b1 = scale * testutil::gaussian(h, 1, rng);
  p.W2 = scale * testutil::gaussian(h, h, rng) / std::sqrt(h);
  p.b2 = scale * testutil::gaussian(h, 1, rng);
  p.W3 = scale * testutil::gaussian(out, h, rng) / std::sqrt(h);
  p.b3 = scale * testutil::gaussian(out, 1, rng);
  return p;
}

// Independent scalar-loop evaluation of the network.
VectorXd reference_forward(const PolicyParams& p, const OutputBox& box, const VectorXd& z) {
  auto raw = [&](const VectorXd& in) {
    const int h = p.hidden();
    std::vector<double> a1(h), a2(h);
    for (int i = 0; i < h; ++i) {
      double s = p.b1(i);
      for (int j = 0; j < p.z_dim(); ++j) s += p.W1(i, j) * in(j);
      a1[i] = s > 0 ? s : 0;
    }
    for (int i = 0; i < h; ++i) {
      double s = p.b2(i);
      for (int j = 0; j < h; ++j) s += p.W2(i, j) * a1[j];
      a2[i] = s > 0 ? s : 0;
    }
    VectorXd y(p.out_dim());
    for (int i = 0; i < p.out_dim(); ++i) {
      double s = p.b3(i);
      for (int j = 0; j < h; ++j) s += p.W3(i, j) * a2[j];
      y(i) = s;
    }
    return y;
  };
  const VectorXd r = raw(z) - raw(VectorXd::Zero(z.size()));
  VectorXd out(r.size());
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    const double bound = r(i) >= 0 ? box.upper(i) : -box.lower(i);
    out(i) = std::isinf(bound) ? r(i) : bound * std::tanh(r(i) / bound);
  }
  return out;
}

const OutputBox kBox = OutputBox::from(hopper::InputBox{});

}  // namespace

TEST_CASE("forward pass") {
  SUBCASE("zero parameters give zero output") {
    CHECK(policy_forward(PolicyParams::zeros(4, 16, 2), kBox, VectorXd::Ones(4)).norm() == 0.0);
  }
  SUBCASE("anchored at the origin") {
    std::mt19937_64 rng(51);
    CHECK(policy_forward(random_params(4, 32, 2, 1.0, rng), kBox, VectorXd::Zero(4)).norm() == 0.0);
  }
  SUBCASE("matches an independent implementation") {
    std::mt19937_64 rng(52);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      const PolicyParams p = random_params(4, 24, 2, 0.8, rng);
      const OutputBox box = t % 2 ? kBox : OutputBox::unbounded(2);
      const VectorXd z = testutil::uniform(4, -2, 2, rng);
      worst = std::max(worst, (policy_forward(p, box, z) - reference_forward(p, box, z)).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-12);
  }
  SUBCASE("outputs never leave the box") {
    std::mt19937_64 rng(53);
    for (int t = 0; t < 200; ++t) {
      const PolicyParams p = random_params(4, 16, 2, 30.0, rng);
      const VectorXd out = policy_forward(p, kBox, testutil::uniform(4, -50, 50, rng));
      CHECK((out.array() >= kBox.lower.array()).all());
      CHECK((out.array() <= kBox.upper.array()).all());
    }
  }
  SUBCASE("output box validation") {
    OutputBox bad = kBox;
    bad.lower(0) = 0.1;
    CHECK_THROWS_AS(bad.validate(), Error);
  }
}

TEST_CASE("backward pass") {
  std::mt19937_64 rng(54);
  SUBCASE("zero upstream") {
    const PolicyParams p = random_params(4, 16, 2, 1.0, rng);
    const PolicyGradient g = policy_backward(p, kBox, VectorXd::Ones(4), VectorXd::Zero(2));
    CHECK(g.params.flatten().norm() == 0.0);
    CHECK(g.input.norm() == 0.0);
  }
  SUBCASE("central differences on random probes") {
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      const PolicyParams p = random_params(4, 16, 2, 1.0, rng);
      const VectorXd z = testutil::uniform(4, -1, 1, rng);
      const VectorXd u = testutil::uniform(2, -1, 1, rng);
      const PolicyGradient g = policy_backward(p, kBox, z, u);
      const VectorXd flat = p.flatten();
      const VectorXd gflat = g.params.flatten();
      std::uniform_int_distribution<Eigen::Index> pick(0, flat.size() - 1);
      const Eigen::Index k = pick(rng);
      auto f = [&](double delta) {
        PolicyParams q = p;
        VectorXd fl = flat;
        fl(k) += delta;
        q.assign_flat(fl);
        return u.dot(policy_forward(q, kBox, z));
      };
      const double h = 1e-6;
      const double fd = (f(h) - f(-h)) / (2 * h);
      worst = std::max(worst, std::abs(fd - gflat(k)) / std::max(std::abs(fd), 1e-4));

      const int i = t % 4;
      VectorXd zp = z, zm = z;
      zp(i) += h;
      zm(i) -= h;
      const double fdz = (u.dot(policy_forward(p, kBox, zp)) - u.dot(policy_forward(p, kBox, zm))) / (2 * h);
      worst = std::max(worst, std::abs(fdz - g.input(i)) / std::max(std::abs(fdz), 1e-4));
    }
    CHECK(worst < 1e-5);
  }
  SUBCASE("linear region composes the weight matrices") {
    PolicyParams p = random_params(4, 8, 2, 1.0, rng);
    p.W1 = p.W1.cwiseAbs();
    p.b1 = p.b1.cwiseAbs();
    p.W2 = p.W2.cwiseAbs();
    p.b2 = p.b2.cwiseAbs();
    const VectorXd z = testutil::uniform(4, 0.1, 1, rng);
    const VectorXd u = testutil::uniform(2, -1, 1, rng);
    const VectorXd r = p.W3 * p.W2 * p.W1 * z;  // raw output after anchoring
    VectorXd slope(2);
    for (int i = 0; i < 2; ++i) {
      const double b = r(i) >= 0 ? kBox.upper(i) : -kBox.lower(i);
      const double t = std::tanh(r(i) / b);
      slope(i) = 1 - t * t;
    }
    const VectorXd expected = (p.W3 * p.W2 * p.W1).transpose() * slope.cwiseProduct(u);
    CHECK((policy_backward(p, kBox, z, u).input - expected).norm() < 1e-12);
    CHECK((policy_jacobian(p, kBox, z).transpose() * u - expected).norm() < 1e-12);
  }
  SUBCASE("Jacobian matches finite differences") {
    const PolicyParams p = random_params(4, 16, 2, 1.0, rng);
    const VectorXd z = testutil::uniform(4, -1, 1, rng);
    const MatrixXd fd = testutil::fd_jacobian([&](const VectorXd& a) { return policy_forward(p, kBox, a); }, z, 1e-6);
    CHECK((policy_jacobian(p, kBox, z) - fd).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("parameter vector round trip") {
  std::mt19937_64 rng(55);
  const PolicyParams p = random_params(4, 8, 2, 1.0, rng);
  PolicyParams q = PolicyParams::zeros(4, 8, 2);
  q.assign_flat(p.flatten());
  CHECK(q == p);
  CHECK(p.size() == 8 * 4 + 8 + 64 + 8 + 16 + 2);
  CHECK_THROWS_AS(q.assign_flat(VectorXd::Zero(3)), Error);
}

TEST_CASE("He initialization is seeded") {
  const PolicyParams a = PolicyParams::he_uniform(4, 32, 2, 9);
  const PolicyParams b = PolicyParams::he_uniform(4, 32, 2, 9);
  const PolicyParams c = PolicyParams::he_uniform(4, 32, 2, 10);
  CHECK(a == b);
  CHECK(!(a == c));
  CHECK(a.W1.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 4.0));
  CHECK(a.all_finite());
}

TEST_CASE("optimizers") {
  VectorXd x = VectorXd::Ones(3);
  const VectorXd g(Eigen::Vector3d(1, -2, 0.5));
  Optimizer sgd({OptimizerKind::kSgd, 0.1}, 3);
  sgd.step(x, g);
  CHECK((x - (VectorXd::Ones(3) - 0.1 * g)).norm() < 1e-15);

  // Adam's first step moves each coordinate by ~lr against the gradient sign.
  VectorXd y = VectorXd::Zero(3);
  Optimizer adam({OptimizerKind::kAdam, 0.01}, 3);
  adam.step(y, g);
  CHECK((y + 0.01 * g.cwiseSign()).cwiseAbs().maxCoeff() < 1e-8);

  CHECK_THROWS_AS(Optimizer({OptimizerKind::kSgd, -1.0}, 3), Error);
}

TEST_CASE("Raibert heuristic") {
  const hopper::HopperParams hp;
  const hopper::InputBox box;
  const RaibertParams rp;
  CHECK(raibert(Eigen::Vector4d::Zero(), rp, hp, box).norm() == 0.0);

  SUBCASE("forward speed is braked within one hop") {
    for (const Eigen::Vector2d& v : {Eigen::Vector2d(0.5, 0), Eigen::Vector2d(0, -0.4), Eigen::Vector2d(0.3, 0.3)}) {
      const Eigen::Vector4d z(0, 0, v.x(), v.y());
      const Eigen::Vector2d lean = raibert(z, rp, hp, box);
      const hopper::FullState x = hopper::recompose({Eigen::Vector4d(lean.x(), lean.y(), 0, 0), z}, hp);
      const hopper::PreImpactState next = hopper::decompose(hopper::return_map(x, lean, hp));
      CHECK(next.z.tail<2>().norm() < v.norm());
      // Leaning about y moves the foot along -x, ahead of positive x velocity.
      if (v.x() > 0) CHECK(lean.y() < 0);
    }
  }

  SUBCASE("stays inside box and cone") {
    std::mt19937_64 rng(56);
    for (int t = 0; t < 500; ++t) {
      const Eigen::Vector2d lean = raibert(testutil::uniform(4, -5, 5, rng), rp, hp, box);
      CHECK(box.contains(lean));
      CHECK(lean.norm() < hp.max_lean);
    }
  }

  SUBCASE("closed loop from a 0.5 m offset contracts every hop") {
    // The first hop lands with the pre-impact lean, so contraction starts after it.
    const auto logs = eval::rollout(eval::raibert_policy(rp, hp, box),
                                    eval::pre_impact_state(Eigen::Vector4d(0.5, 0, 0, 0), hp), 20,
                                    eval::default_rollout_config(hp));
    for (std::size_t k = 2; k < logs.size(); ++k) CHECK(logs[k].z.norm() < logs[k - 1].z.norm());
    CHECK(logs.back().z.norm() < 0.02);
  }

  CHECK_THROWS_AS((RaibertParams{-1.0, 0.02, {}}).validate(), Error);
}

TEST_CASE("pretraining") {
  const hopper::HopperParams hp;
  const hopper::InputBox box;
  const RaibertParams rp;
  const SampleBox sb{VectorXd::Constant(4, -0.5), VectorXd::Constant(4, 0.5)};
  const PretrainOptions o;

  const PolicyParams init = PolicyParams::he_uniform(4, 64, 2, 3);
  const PolicyParams p = pretrain(init, rp, hp, box, sb, o);

  std::vector<Eigen::Vector4d> grid;
  for (double a : {-0.45, -0.15, 0.15, 0.45})
    for (double b : {-0.45, -0.15, 0.15, 0.45})
      for (double c : {-0.45, -0.15, 0.15, 0.45})
        for (double d : {-0.45, -0.15, 0.15, 0.45}) grid.emplace_back(a, b, c, d);
  double max_err = 0.0;
  const double mse = raibert_mse(p, kBox, rp, hp, box, grid, &max_err);
  CHECK(mse < 1e-4);
  CHECK(max_err < 0.02);

  SUBCASE("deterministic in the seed") { CHECK(pretrain(init, rp, hp, box, sb, o) == p); }

  SUBCASE("pretraining a converged net keeps the fit") {
    PretrainOptions again = o;
    again.seed = 99;
    again.steps = 0;
    CHECK(pretrain(p, rp, hp, box, sb, again) == p);
    // Adam moves every weight by about the step size regardless of the
    // gradient, so compare fits rather than raw weights.
    again.steps = 500;
    again.rate = 1e-4;
    const PolicyParams q = pretrain(p, rp, hp, box, sb, again);
    double q_max = 0.0;
    CHECK(raibert_mse(q, kBox, rp, hp, box, grid, &q_max) < 1e-4);
    CHECK(q_max < 0.02);
  }

  SUBCASE("pretrained policy stabilizes 0.3 m offsets") {
    const eval::LeanPolicy psi = eval::network_policy(p, kBox);
    for (const Eigen::Vector4d& z0 : {Eigen::Vector4d(0.3, 0, 0, 0), Eigen::Vector4d(0, -0.3, 0, 0),
                                     Eigen::Vector4d(0.21, 0.21, 0, 0)}) {
      const auto logs = eval::rollout(psi, eval::pre_impact_state(z0, hp), 30, eval::default_rollout_config(hp));
      CHECK(logs.back().z.norm() < 0.1 * z0.norm());
    }
  }

  SUBCASE("stalled regression is reported") {
    PretrainOptions stuck = o;
    stuck.rate = 0.0;
    stuck.patience = 20;
    stuck.target_mse = 0.0;
    try {
      pretrain(init, rp, hp, box, sb, stuck);
      FAIL("expected NoProgress");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kNoProgress);
    }
  }
}

TEST_CASE("weight files") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "zdp_test_policy";
  fs::create_directories(dir);
  std::mt19937_64 rng(57);
  const PolicyParams p = random_params(4, 12, 2, 1.0, rng);
  const fs::path path = dir / "w.json";
  save_weights(path, p, kBox);

  const PolicyFile f = load_weights(path, 4, 2);
  CHECK(f.params == p);
  CHECK(f.box.lower == kBox.lower);
  CHECK(f.box.upper == kBox.upper);

  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  CHECK(code_of([&] { load_weights(path, 3, 2); }) == ErrorCode::kSchemaMismatch);
  CHECK(code_of([&] { load_weights(path, 4, 3); }) == ErrorCode::kSchemaMismatch);
  CHECK(code_of([&] { load_weights(dir / "missing.json"); }) == ErrorCode::kCorruptFile);

  {
    std::ofstream(dir / "bad.json") << "{\"format\": \"zdp-policy\", ";
  }
  CHECK(code_of([&] { load_weights(dir / "bad.json"); }) == ErrorCode::kCorruptFile);

  {
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto pos = text.find("\"version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 12, "\"version\": 7");
    std::ofstream(dir / "v7.json") << text;
  }
  CHECK(code_of([&] { load_weights(dir / "v7.json"); }) == ErrorCode::kSchemaMismatch);

  // Unbounded outputs survive the round trip.
  save_weights(dir / "unbounded.json", p, OutputBox::unbounded(2));
  CHECK(std::isinf(load_weights(dir / "unbounded.json").box.upper(0)));
  fs::remove_all(dir);
}
