#include <doctest.h>

#include <cmath>
#include <random>

#include "fiekit/lyapunov.hpp"
#include "support.hpp"

using namespace fiekit;
using namespace fiekit::testing;

namespace {

LinearSystem scalar_plant() {
  LinearSystem s;
  s.A = Matrix::Constant(1, 1, 0.9);
  s.B = Matrix::Ones(1, 1);
  s.C = Matrix::Ones(1, 1);
  s.D = Matrix::Zero(1, 1);
  s.L = Matrix::Ones(1, 1);
  return s;
}

LinearFunctionalObserver full_order(const LinearSystem& sys, const Matrix& J) {
  LinearFunctionalObserver o;
  o.T = Matrix::Identity(sys.n_x(), sys.n_x());
  o.N = sys.A - J * sys.C;
  o.J = J;
  o.P_xi = sys.L;
  o.xi0 = Vector::Zero(sys.n_x());
  return o;
}

LinearSystem chain() {
  LinearSystem s;
  s.A = (Matrix(2, 2) << 0.0, 1.0, 0.0, 0.0).finished();
  s.B = Matrix::Identity(2, 2);
  s.C = (Matrix(1, 2) << 1.0, 0.0).finished();
  s.D = Matrix::Zero(1, 2);
  s.L = (Matrix(1, 2) << 0.0, 1.0).finished();
  return s;
}

}  // namespace

TEST_SUITE("lyapunov") {
  TEST_CASE("full-order structure cancels exactly") {
    std::mt19937_64 rng(1);
    const LinearSystem sys = random_linear_system(rng, 4, 2, 2, 1, 0.9);
    const LinearFunctionalObserver obs = full_order(sys, random_matrix(rng, 4, 2, 0.1));
    const ObserverConditionReport r = verify_observer_conditions(sys, obs, 1e-12);
    CHECK(r.sylvester_residual == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(r.functional_residual == 0.0);
  }

  TEST_CASE("perturbed T fails the conditions") {
    std::mt19937_64 rng(2);
    const LinearSystem sys = random_linear_system(rng, 3, 1, 1, 1, 0.5);
    LinearFunctionalObserver obs = full_order(sys, Matrix::Zero(3, 1));
    CHECK(verify_observer_conditions(sys, obs, 1e-8).passes);
    obs.T(0, 0) += 1e-3;
    CHECK_FALSE(verify_observer_conditions(sys, obs, 1e-8).passes);
  }

  TEST_CASE("open-loop observer passes exactly when A is Schur") {
    std::mt19937_64 rng(3);
    for (double radius : {0.7, 1.3}) {
      const LinearSystem sys = random_linear_system(rng, 3, 1, 1, 1, radius);
      const LinearFunctionalObserver obs = full_order(sys, Matrix::Zero(3, 1));
      const ObserverConditionReport r = verify_observer_conditions(sys, obs, 1e-8);
      CHECK(r.spectral_radius == doctest::Approx(radius));
      CHECK(r.passes == (radius < 1.0));
    }
  }

  TEST_CASE("condition check rejects shape mismatches") {
    const LinearSystem sys = scalar_plant();
    LinearFunctionalObserver obs = full_order(sys, Matrix::Ones(1, 1));
    obs.J = Matrix::Ones(2, 1);
    CHECK_THROWS_AS(verify_observer_conditions(sys, obs, 1e-8), InputError);
  }

  TEST_CASE("discounted Lyapunov closed forms") {
    CHECK(solve_discounted_lyapunov(Matrix::Zero(3, 3), 0.5).isApprox(Matrix::Identity(3, 3)));

    const Matrix p = solve_discounted_lyapunov(Matrix::Constant(1, 1, 0.5), 0.3);
    CHECK(p(0, 0) == doctest::Approx(6.0));
    CHECK(0.25 * p(0, 0) <= 0.3 * p(0, 0));

    const Matrix n = (Matrix(2, 2) << 0.0, 1.0, 0.0, 0.0).finished();
    const Matrix q = solve_discounted_lyapunov(n, 0.5);
    const Matrix expected = (Matrix(2, 2) << 1.0, 0.0, 0.0, 3.0).finished();
    CHECK((q - expected).norm() <= 1e-12);
  }

  TEST_CASE("discounted Lyapunov domain") {
    CHECK_THROWS_AS(solve_discounted_lyapunov(Matrix::Constant(1, 1, 0.5), 1.0), InputError);
    CHECK_THROWS_AS(solve_discounted_lyapunov(Matrix::Constant(1, 1, 0.5), 0.25), InfeasibleError);
    CHECK_THROWS_AS(solve_discounted_lyapunov(Matrix::Zero(2, 3), 0.5), InputError);
  }

  TEST_CASE("discounted Lyapunov solution is symmetric and contracts") {
    std::mt19937_64 rng(4);
    for (int k = 0; k < 10; ++k) {
      Matrix n = random_matrix(rng, 4, 4);
      n *= 0.8 / spectral_radius(n);
      const double rho = 0.7;
      const Matrix p = solve_discounted_lyapunov(n, rho);
      CHECK((p - p.transpose()).norm() <= 1e-12 * p.norm());
      const Eigen::SelfAdjointEigenSolver<Matrix> eig(p);
      CHECK(eig.eigenvalues().minCoeff() > 0.0);
      const Matrix gap = rho * p - n.transpose() * p * n;
      const Eigen::SelfAdjointEigenSolver<Matrix> gap_eig(0.5 * (gap + gap.transpose()));
      CHECK(gap_eig.eigenvalues().minCoeff() >= -1e-10);
    }
  }

  TEST_CASE("zero gains without injection or noise input") {
    std::mt19937_64 rng(5);
    LinearSystem sys = random_linear_system(rng, 3, 2, 1, 1, 0.6);
    sys.B.setZero();
    const LinearFunctionalObserver obs = full_order(sys, Matrix::Zero(3, 1));
    const LyapunovCertificate cert = build_certificate(sys, obs);
    CHECK(cert.sigma_y_gain == 0.0);
    CHECK(cert.sigma_w_gain == 0.0);
    CHECK(cert.eta < 1.0);
    CHECK(verify_decrease_sampled(cert, sys, obs, 2000, 1, 1e-8).violations == 0);
  }

  TEST_CASE("scalar deadbeat observer certificate") {
    const LinearSystem sys = scalar_plant();
    const LinearFunctionalObserver obs = full_order(sys, Matrix::Constant(1, 1, 0.9));
    const LyapunovCertificate cert = build_certificate(sys, obs);
    CHECK(cert.P(0, 0) == doctest::Approx(1.0));
    CHECK(cert.eta == doctest::Approx(0.5 * (1.0 + cert.rho)));
    CHECK(cert.rho < 1e-1);
    CHECK(cert.alpha1_gain == doctest::Approx(1.0));
    CHECK(verify_decrease_sampled(cert, sys, obs, 10000, 3, 1e-8).violations == 0);
  }

  TEST_CASE("designed observers yield sound certificates") {
    std::mt19937_64 rng(6);
    for (int k = 0; k < 5; ++k) {
      const LinearSystem sys = random_linear_system(rng, 3, 2, 2, 1, 1.2);
      const LinearFunctionalObserver obs = design_full_order_observer(
          sys, RiccatiDesign{Matrix::Identity(3, 3), Matrix::Identity(2, 2)});
      const LyapunovCertificate cert = build_certificate(sys, obs);
      CHECK(cert.eta < 1.0);
      const SampledVerificationReport r = verify_decrease_sampled(cert, sys, obs, 10000, k, 1e-8);
      CHECK(r.violations == 0);
    }
  }

  TEST_CASE("a falsified certificate is caught") {
    std::mt19937_64 rng(7);
    const LinearSystem sys = random_linear_system(rng, 3, 2, 2, 1, 1.2);
    const LinearFunctionalObserver obs = design_full_order_observer(
        sys, RiccatiDesign{Matrix::Identity(3, 3), Matrix::Identity(2, 2)});
    LyapunovCertificate cert = build_certificate(sys, obs);
    cert.eta *= 0.5;
    cert.sigma_w_gain = 0.0;
    cert.sigma_y_gain = 0.0;
    CHECK(verify_decrease_sampled(cert, sys, obs, 10000, 9, 1e-8).violations > 0);
  }

  TEST_CASE("margins vanish on identical arguments") {
    std::mt19937_64 rng(8);
    const LinearSystem sys = random_linear_system(rng, 3, 2, 2, 1, 0.9);
    const LinearFunctionalObserver obs = design_full_order_observer(
        sys, RiccatiDesign{Matrix::Identity(3, 3), Matrix::Identity(2, 2)});
    const LyapunovCertificate cert = build_certificate(sys, obs);
    const Vector x = random_vector(rng, 3);
    const Vector w = random_vector(rng, 2);
    const DecreaseMargins m = certificate_margins(cert, sys, x, x, w, w);
    CHECK(m.decrease == 0.0);
    CHECK(m.lower_bound == 0.0);
  }

  TEST_CASE("lower bound holds on random pairs") {
    std::mt19937_64 rng(9);
    const LinearSystem sys = random_linear_system(rng, 4, 2, 2, 2, 1.1);
    const LinearFunctionalObserver obs = design_full_order_observer(
        sys, RiccatiDesign{Matrix::Identity(4, 4), Matrix::Identity(2, 2)});
    const LyapunovCertificate cert = build_certificate(sys, obs);
    for (int k = 0; k < 10000; ++k) {
      const Vector dx = random_vector(rng, 4);
      CHECK((sys.L * dx).squaredNorm() <= cert.alpha1_gain * cert.storage(dx) * (1.0 + 1e-12) + 1e-12);
    }
  }

  TEST_CASE("reduced-order observer storage is only semidefinite") {
    // x1 is measured, x2 follows it; observing z = x2 needs one internal state
    LinearSystem sys;
    sys.A = (Matrix(2, 2) << 0.5, 0.0, 1.0, 0.3).finished();
    sys.B = Matrix::Identity(2, 2);
    sys.C = (Matrix(1, 2) << 1.0, 0.0).finished();
    sys.D = Matrix::Zero(1, 2);
    sys.L = (Matrix(1, 2) << 0.0, 1.0).finished();
    LinearFunctionalObserver obs;
    obs.T = (Matrix(1, 2) << 0.0, 1.0).finished();
    obs.N = Matrix::Constant(1, 1, 0.3);
    obs.J = Matrix::Constant(1, 1, 1.0);
    obs.P_xi = Matrix::Ones(1, 1);
    obs.xi0 = Vector::Zero(1);
    REQUIRE(verify_observer_conditions(sys, obs, 1e-12).passes);
    const LyapunovCertificate cert = build_certificate(sys, obs);
    CHECK(cert.storage((Vector(2) << 1.0, 0.0).finished()) == 0.0);
    CHECK(verify_decrease_sampled(cert, sys, obs, 10000, 2, 1e-8).violations == 0);
  }

  TEST_CASE("certificate with the output term covers feedthrough observers") {
    std::mt19937_64 rng(10);
    const LinearSystem sys = random_linear_system(rng, 3, 2, 2, 1, 0.9);
    LinearFunctionalObserver obs = design_full_order_observer(
        sys, RiccatiDesign{Matrix::Identity(3, 3), Matrix::Identity(2, 2)});
    CertificateOptions opt;
    opt.output_term = true;
    const LyapunovCertificate cert = build_certificate(sys, obs, opt);
    CHECK(cert.output_term);
    CHECK(cert.eta < 1.0);
    CHECK(verify_decrease_sampled(cert, sys, obs, 10000, 4, 1e-8).violations == 0);
  }

  TEST_CASE("certificate rejects failing observers") {
    const LinearSystem sys = scalar_plant();
    LinearFunctionalObserver obs = full_order(sys, Matrix::Zero(1, 1));
    obs.N = Matrix::Constant(1, 1, 1.2);
    obs.J = Matrix::Constant(1, 1, -0.3);
    CHECK_THROWS_AS(build_certificate(sys, obs), InfeasibleError);
    obs = full_order(sys, Matrix::Zero(1, 1));
    obs.P_xi = Matrix::Constant(1, 1, 2.0);
    CHECK_THROWS_AS(build_certificate(sys, obs), InfeasibleError);
  }

  TEST_CASE("scalar Riccati design") {
    LinearSystem sys = scalar_plant();
    sys.A = Matrix::Constant(1, 1, 0.5);
    const LinearFunctionalObserver obs =
        design_full_order_observer(sys, RiccatiDesign{Matrix::Ones(1, 1), Matrix::Ones(1, 1)});
    // fixed point of s = a^2 s + 1 - a^2 s^2 / (s + 1), i.e. s^2 - 0.25 s - 1 = 0
    const double sigma = 0.5 * (0.25 + std::sqrt(0.0625 + 4.0));
    const double j = 0.5 * sigma / (sigma + 1.0);
    CHECK(obs.J(0, 0) == doctest::Approx(j).epsilon(1e-9));
    CHECK(std::abs(obs.N(0, 0)) < 1.0);
  }

  TEST_CASE("deadbeat design is nilpotent") {
    const LinearSystem sys = chain();
    const LinearFunctionalObserver obs = design_full_order_observer(sys, DeadbeatDesign{});
    CHECK(spectral_radius(obs.N) <= 1e-7);
    CHECK((obs.N * obs.N).norm() <= 1e-12);
    CHECK(verify_observer_conditions(sys, obs, 1e-8).passes);
  }

  TEST_CASE("design preconditions") {
    LinearSystem sys;
    sys.A = 2.0 * Matrix::Identity(2, 2);
    sys.B = Matrix::Identity(2, 2);
    sys.C = Matrix::Zero(1, 2);
    sys.D = Matrix::Zero(1, 2);
    sys.L = Matrix::Ones(1, 2);
    CHECK_FALSE(is_detectable(sys.A, sys.C));
    CHECK_THROWS_AS(design_full_order_observer(sys, RiccatiDesign{Matrix::Identity(2, 2),
                                                                  Matrix::Identity(1, 1)}),
                    DesignError);
    CHECK_THROWS_AS(design_full_order_observer(sys, DeadbeatDesign{}), DesignError);

    LinearSystem two = chain();
    two.C = Matrix::Identity(2, 2);
    two.D = Matrix::Zero(2, 2);
    CHECK_THROWS_AS(design_full_order_observer(two, DeadbeatDesign{}), UnsupportedError);
    CHECK(is_observable(chain().A, chain().C));
  }

  TEST_CASE("linear model view") {
    const LinearSystem sys = chain();
    const SystemModel m = linear_model(sys);
    const Vector x = (Vector(2) << 1.0, 2.0).finished();
    CHECK(m.f(x, Vector::Zero(2), 0) == sys.A * x);
    CHECK(m.phi(x)[0] == 2.0);
    CHECK(m.dynamics_jacobian(x, Vector::Zero(2), 0).dx == sys.A);
    LinearSystem bad = sys;
    bad.B = Matrix::Zero(3, 2);
    CHECK_THROWS_AS(linear_model(bad), InputError);
  }
}
