#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <complex>

#include "fgdd/tau.hpp"

using namespace fgdd;

namespace {

const GaussianMoments kTanh = compute_moments(Activation::tanh(), 128);
const GaussianMoments kId = compute_moments(Activation::identity(), 64);

ModelShape rf(double phi, double psi, double gamma, double se = 0.0) {
  ModelShape s;
  s.phi = phi;
  s.psi = psi;
  s.gamma = gamma;
  s.sigma_eps = se;
  return s;
}

ModelShape ntk(double phi, double psi, double gamma, double sw2, int nu = 1) {
  ModelShape s = rf(phi, psi, gamma);
  s.sigma_w2 = sw2;
  s.nu = nu;
  return s;
}

// Independent derivative oracle: implicit-function-theorem solve of the
// differentiated polynomial system.
std::pair<double, double> ift_derivatives(const TauSolution& s, const ModelShape& shape,
                                          const GaussianMoments& m) {
  using detail::cplx;
  cplx j[2][2];
  detail::tau_jacobian(cplx(s.tau1), cplx(s.tau2), cplx(shape.gamma), shape.phi, shape.psi, m,
                       shape.sigma_w2 * shape.sigma_w2, j);
  // dP1/dgamma = zeta psi tau1^2 tau2 ; dP2/dgamma = zeta tau1^2 tau2
  double g1 = m.zeta * shape.psi * s.tau1 * s.tau1 * s.tau2;
  double g2 = m.zeta * s.tau1 * s.tau1 * s.tau2;
  double a = j[0][0].real(), b = j[0][1].real(), c = j[1][0].real(), d = j[1][1].real();
  double det = a * d - b * c;
  return {(-g1 * d + g2 * b) / det, (-g2 * a + g1 * c) / det};
}

}  // namespace

TEST_CASE("rf solutions satisfy the defining system with certified residuals") {
  for (double gamma : {1e-3, 0.1, 1.0, 10.0}) {
    for (auto [phi, psi] : {std::pair{0.25, 0.5}, {2.0, 0.5}, {1.0, 1.0}, {0.03125, 4.0}}) {
      auto s = solve_tau_rf(rf(phi, psi, gamma), kTanh);
      INFO("phi=" << phi << " psi=" << psi << " gamma=" << gamma);
      REQUIRE(s.residual_max < 1e-10);
      REQUIRE(s.tau1 > 0.0);
      REQUIRE(s.tau2 > 0.0);
      REQUIRE(s.dtau1 < 0.0);
      REQUIRE(s.ttau2 == Catch::Approx(s.tau2 / s.tau1 - 1.0).margin(1e-14));
    }
  }
}

TEST_CASE("ridgeless closed form: identity activation reference points") {
  // omega = max(phi, psi) = 0.5 -> ttau2 = -1 (perfect linear recovery)
  REQUIRE(ridgeless_ttau2(0.25, 0.5, kId) == Catch::Approx(-1.0).margin(1e-12));
  // omega = 2 -> ttau2 = (-3 + 1)/4 = -1/2
  REQUIRE(ridgeless_ttau2(2.0, 2.0, kId) == Catch::Approx(-0.5).margin(1e-12));
}

TEST_CASE("ridgeless root zeroes the quartic; non-roots do not") {
  auto m = kTanh;
  for (auto [phi, psi] : {std::pair{0.25, 0.5}, {1.0, 0.25}, {1.0 / 16, 1.0 / 64}}) {
    double tt2 = ridgeless_ttau2(phi, psi, m);
    REQUIRE(std::abs(ridgeless_quartic_residual(tt2, phi, psi, 0.0, m)) < 1e-12);
  }
  // a non-root has a visibly nonzero residual: identity, phi=psi=1, ttau2=0
  REQUIRE(ridgeless_quartic_residual(0.0, 1.0, 1.0, 0.0, kId) == Catch::Approx(1.0));
  // ttau2 = -1 zeroes both factors for the identity at phi=psi=1, any gamma
  REQUIRE(ridgeless_quartic_residual(-1.0, 1.0, 1.0, 3.7, kId) == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("ridgeless consistency: homotopy at gamma=1e-9 matches the closed form") {
  for (auto [phi, psi] : {std::pair{0.25, 0.5}, {1.0, 0.25}, {1.0 / 16, 1.0 / 8}, {2.0, 0.3}}) {
    auto s = solve_tau_rf(rf(phi, psi, 1e-9), kTanh);
    double tt2 = ridgeless_ttau2(phi, psi, kTanh);
    INFO("phi=" << phi << " psi=" << psi);
    REQUIRE(s.tau2 / s.tau1 == Catch::Approx(1.0 + tt2).margin(1e-5));
  }
}

TEST_CASE("ridgeless closed form recovers finite traces on the overparameterized side") {
  auto s = solve_tau_rf(rf(0.25, 0.125, 0.0), kTanh);
  REQUIRE(s.method == TauMethod::ridgeless_closed_form);
  REQUIRE(s.residual_max < 1e-10);
  auto near = solve_tau_rf(rf(0.25, 0.125, 1e-9), kTanh);
  REQUIRE(s.tau1 == Catch::Approx(near.tau1).epsilon(1e-5));
  REQUIRE(s.tau2 == Catch::Approx(near.tau2).epsilon(1e-5));
}

TEST_CASE("ridgeless rank-deficient side reports divergent traces with a valid ratio") {
  auto s = solve_tau_rf(rf(0.25, 0.5, 0.0), kTanh);
  REQUIRE(std::isinf(s.tau1));
  REQUIRE(s.residual_max < 1e-10);
  auto near = solve_tau_rf(rf(0.25, 0.5, 1e-9), kTanh);
  REQUIRE(near.tau2 / near.tau1 == Catch::Approx(1.0 + s.ttau2).margin(1e-5));
}

TEST_CASE("linear activation at the ridgeless threshold is rejected") {
  REQUIRE_THROWS_AS(solve_tau_rf(rf(0.5, 0.5, 0.0), kId), degenerate_error);
}

TEST_CASE("ntk reduces to rf at sigma_w2 = 0") {
  for (double gamma : {1e-3, 0.5, 2.0}) {
    auto a = solve_tau_rf(rf(0.7, 1.3, gamma), kTanh);
    auto b = solve_tau_ntk(rf(0.7, 1.3, gamma), kTanh);
    REQUIRE(a.tau1 == Catch::Approx(b.tau1).epsilon(1e-12));
    REQUIRE(a.tau2 == Catch::Approx(b.tau2).epsilon(1e-12));
  }
}

TEST_CASE("ntk solutions certify residuals, including ridgeless") {
  for (auto shape : {ntk(1.0, 1.0, 1.0, 1.0), ntk(1.0 / 16, 1.0 / 16, 1e-3, 1.0),
                     ntk(0.5, 2.0, 0.0, 1.0), ntk(3.0, 0.4, 0.01, 0.5)}) {
    auto s = solve_tau_ntk(shape, kTanh);
    INFO("gamma=" << shape.gamma << " sw2=" << shape.sigma_w2);
    REQUIRE(s.residual_max < 1e-10);
    REQUIRE(s.tau1 > 0.0);
    REQUIRE(s.tau2 > 0.0);
  }
}

TEST_CASE("closed-form derivatives match central finite differences") {
  for (auto shape : {rf(1.0 / 16, 1.0 / 32, 0.1), rf(0.25, 0.5, 0.5), ntk(1.0, 1.0, 1.0, 1.0),
                     ntk(0.5, 0.25, 0.01, 1.0)}) {
    double h = 1e-4 * std::max(shape.gamma, 1.0);
    auto mid = solve_tau_ntk(shape, kTanh);
    ModelShape up = shape, dn = shape;
    up.gamma += h;
    dn.gamma -= h;
    auto a = solve_tau_ntk(up, kTanh);
    auto b = solve_tau_ntk(dn, kTanh);
    INFO("gamma=" << shape.gamma << " sw2=" << shape.sigma_w2);
    REQUIRE(mid.dtau1 == Catch::Approx((a.tau1 - b.tau1) / (2 * h)).epsilon(1e-6));
    REQUIRE(mid.dtau2 == Catch::Approx((a.tau2 - b.tau2) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("closed-form derivatives match the implicit-function-theorem solve") {
  auto shape = rf(0.25, 0.5, 0.5);
  auto s = solve_tau_rf(shape, kId);
  auto [d1, d2] = ift_derivatives(s, shape, kId);
  REQUIRE(s.dtau1 == Catch::Approx(d1).epsilon(1e-8));
  REQUIRE(s.dtau2 == Catch::Approx(d2).epsilon(1e-8));

  auto nshape = ntk(0.8, 1.7, 0.3, 1.0);
  auto n = solve_tau_ntk(nshape, kTanh);
  auto [e1, e2] = ift_derivatives(n, nshape, kTanh);
  REQUIRE(n.dtau1 == Catch::Approx(e1).epsilon(1e-8));
  REQUIRE(n.dtau2 == Catch::Approx(e2).epsilon(1e-8));
}

TEST_CASE("branch continuity: small gamma moves produce small tau moves") {
  double prev_t1 = 0.0;
  bool first = true;
  for (double gamma = 1.0; gamma > 1e-3; gamma *= 0.9) {
    auto s = solve_tau_rf(rf(0.5, 0.7, gamma), kTanh);
    REQUIRE(s.max_path_jump < 1e-3);
    if (!first) REQUIRE(std::abs(s.tau1 - prev_t1) < 0.2 * std::max(1.0, prev_t1));
    prev_t1 = s.tau1;
    first = false;
  }
}

TEST_CASE("auxiliary variable identities hold as computed") {
  auto shape = ntk(0.6, 1.1, 0.7, 1.0);
  auto s = solve_tau_ntk(shape, kTanh);
  REQUIRE(s.ttau2 == Catch::Approx(-1.0 + s.tau2 / s.tau1).margin(1e-14));
  REQUIRE(s.ttau1 ==
          Catch::Approx(shape.sigma_w2 * shape.sigma_w2 * kTanh.zeta * s.tau2 + shape.phi * s.ttau2)
              .margin(1e-14));
}
