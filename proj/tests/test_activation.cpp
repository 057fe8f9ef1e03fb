#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "fgdd/activation.hpp"

using namespace fgdd;

TEST_CASE("identity moments are exactly one") {
  auto m = compute_moments(Activation::identity(), 64);
  REQUIRE(m.eta == Catch::Approx(1.0).margin(1e-14));
  REQUIRE(m.zeta == Catch::Approx(1.0).margin(1e-14));
  REQUIRE(m.eta_prime == Catch::Approx(1.0).margin(1e-14));
  REQUIRE(m.converged);
}

TEST_CASE("relu moments are (1/2, 1/4, 1/2) to machine precision") {
  auto m = compute_moments(Activation::relu(), 128);
  REQUIRE(std::abs(m.eta - 0.5) < 1e-12);
  REQUIRE(std::abs(m.zeta - 0.25) < 1e-12);
  REQUIRE(std::abs(m.eta_prime - 0.5) < 1e-12);
}

TEST_CASE("tanh moments match the adaptive-quadrature oracle") {
  // frozen from an independent high-precision adaptive integration of
  // tanh(x)^2 phi(x), sech^2(x) phi(x), sech^4(x) phi(x)
  auto m = compute_moments(Activation::tanh(), 128);
  REQUIRE(m.eta == Catch::Approx(0.394294490397652).epsilon(1e-10));
  REQUIRE(m.zeta == Catch::Approx(0.366879164362038).epsilon(1e-10));
  REQUIRE(m.eta_prime == Catch::Approx(0.464402902448387).epsilon(1e-10));
  REQUIRE(m.converged);
}

TEST_CASE("moment ordering invariants hold for all built-ins") {
  for (auto a : {Activation::identity(), Activation::relu(), Activation::tanh()}) {
    auto m = compute_moments(a, 128);
    INFO(a.name);
    REQUIRE(m.eta >= m.zeta - 1e-14);
    REQUIRE(m.eta_prime >= m.zeta - 1e-14);
  }
}

TEST_CASE("compute_moments is deterministic") {
  auto a = compute_moments(Activation::tanh(), 128);
  auto b = compute_moments(Activation::tanh(), 128);
  REQUIRE(a.eta == b.eta);
  REQUIRE(a.zeta == b.zeta);
  REQUIRE(a.eta_prime == b.eta_prime);
}

TEST_CASE("stein check validates the two zeta definitions") {
  REQUIRE(stein_check(Activation::identity(), 128) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(stein_check(Activation::relu(), 128) < 1e-12);
  REQUIRE(stein_check(Activation::tanh(), 128) < 1e-8);
}

TEST_CASE("user activation with finite-difference derivative") {
  auto soft = Activation::user([](double x) { return std::log1p(std::exp(x)); }, {}, "softplus");
  auto m = compute_moments(soft, 128);
  REQUIRE(m.eta > m.zeta);
  REQUIRE(m.eta_prime >= m.zeta - 1e-9);
  // derivative of softplus is the logistic function; check the FD path
  REQUIRE(soft.derivative(0.3) == Catch::Approx(1.0 / (1.0 + std::exp(-0.3))).epsilon(1e-8));
}

TEST_CASE("non-square-integrable activation raises a quadrature error") {
  auto bad = Activation::user([](double x) { return std::exp(x * x); }, {}, "explosive");
  REQUIRE_THROWS_AS(compute_moments(bad, 64), quadrature_error);
}

TEST_CASE("effective SNR of the equivalent linear teacher") {
  TeacherMoments lin{1.0, 1.0};
  REQUIRE(effective_snr(lin, std::sqrt(0.01)) == Catch::Approx(100.0));
  REQUIRE(effective_snr(lin, std::sqrt(0.2)) == Catch::Approx(5.0));
  REQUIRE(effective_snr({2.0, 1.0}, 0.0) == Catch::Approx(1.0));
  REQUIRE_THROWS_AS(effective_snr(lin, 0.0), degenerate_error);
}

TEST_CASE("tanh teacher maps to a finite SNR") {
  auto t = teacher_moments(Activation::tanh(), 128);
  REQUIRE(t.eta_t == Catch::Approx(0.394294490397652).epsilon(1e-9));
  REQUIRE(t.zeta_t == Catch::Approx(0.366879164362038).epsilon(1e-9));
  double snr = effective_snr(t, 0.0);
  REQUIRE(snr == Catch::Approx(t.zeta_t / (t.eta_t - t.zeta_t)).epsilon(1e-12));
}
