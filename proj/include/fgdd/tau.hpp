#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>

#include "fgdd/activation.hpp"
#include "fgdd/errors.hpp"

namespace fgdd {

// Asymptotic shape of the regression problem. phi = n0/m, psi = n0/n1.
// sigma_w2 = 0 selects the plain random-feature kernel; nu = 0 with centering,
// nu = 1 without (only meaningful when sigma_w2 > 0).
struct ModelShape {
  double phi = 1.0;
  double psi = 1.0;
  double gamma = 0.0;
  double sigma_w2 = 0.0;
  double sigma_eps = 0.0;
  int nu = 1;

  void validate() const {
    if (!(phi > 0.0) || !std::isfinite(phi) || !(psi > 0.0) || !std::isfinite(psi))
      throw invalid_argument("ModelShape: phi and psi must be finite and positive");
    if (!(gamma >= 0.0)) throw invalid_argument("ModelShape: gamma must be >= 0");
    if (!(sigma_w2 >= 0.0)) throw invalid_argument("ModelShape: sigma_w2 must be >= 0");
    if (!(sigma_eps >= 0.0)) throw invalid_argument("ModelShape: sigma_eps must be >= 0");
    if (nu != 0 && nu != 1) throw invalid_argument("ModelShape: nu must be 0 or 1");
  }
};

enum class TauMethod { homotopy, ridgeless_closed_form };

// Solution of the self-consistent trace equations, with derivatives in gamma
// and the auxiliary variables ttau2 = tau2/tau1 - 1,
// ttau1 = sigma_w2^2 zeta tau2 + phi ttau2.
//
// In the ridgeless random-feature regime with a rank-deficient kernel
// (psi >= phi, or a linear activation with phi < 1) tau1 and tau2 themselves
// diverge as gamma -> 0; the closed-form method then stores +inf for
// tau1/tau2/dtau1/dtau2 while ttau2 and the certified residual of the
// defining ridgeless polynomial remain valid. All downstream ridgeless
// formulas consume ratios only.
struct TauSolution {
  double tau1 = 0.0;
  double tau2 = 0.0;
  double dtau1 = 0.0;
  double dtau2 = 0.0;
  double ttau1 = 0.0;
  double ttau2 = 0.0;
  double residual_max = 0.0;
  TauMethod method = TauMethod::homotopy;
  double max_path_jump = 0.0;  // homotopy diagnostic: largest step-to-step move
};

namespace detail {

using cplx = std::complex<double>;

struct SystemEval {
  cplx p1, p2;          // polynomial values
  double scale1, scale2;  // largest monomial magnitude of each polynomial
};

// The coupled polynomial system for (tau1, tau2); sigma2 = sigma_w2^2.
// The random-feature system is the special case sigma2 = 0.
template <typename T>
inline void tau_system(T t1, T t2, T gamma, double phi, double psi,
                       const GaussianMoments& m, double sigma2, T& p1, T& p2) {
  const double eta = m.eta, zeta = m.zeta, etap = m.eta_prime;
  p1 = phi * (zeta * t2 * t1 + phi * (t2 - t1)) + zeta * t1 * t2 * psi * (gamma * t1 - 1.0) +
       zeta * t1 * t2 * sigma2 * (zeta * (t2 - t1) * psi + t1 * psi * etap + phi);
  p2 = zeta * t1 * t1 * t2 * (etap - eta) * sigma2 + zeta * t1 * t2 * (gamma * t1 - 1.0) -
       (t2 - t1) * phi * (zeta * (t2 - t1) + eta * t1);
}

inline SystemEval eval_system(cplx t1, cplx t2, cplx gamma, double phi, double psi,
                              const GaussianMoments& m, double sigma2) {
  SystemEval e;
  tau_system(t1, t2, gamma, phi, psi, m, sigma2, e.p1, e.p2);
  const double eta = m.eta, zeta = m.zeta, etap = m.eta_prime;
  const double a1 = std::abs(t1), a2 = std::abs(t2), ag = std::abs(gamma);
  e.scale1 = std::max({phi * zeta * a1 * a2, phi * phi * a2, phi * phi * a1,
                       zeta * psi * ag * a1 * a1 * a2, zeta * psi * a1 * a2,
                       sigma2 * zeta * zeta * psi * a1 * a2 * a2,
                       sigma2 * zeta * zeta * psi * a1 * a1 * a2,
                       sigma2 * zeta * psi * etap * a1 * a1 * a2,
                       sigma2 * zeta * phi * a1 * a2});
  e.scale2 = std::max({sigma2 * zeta * (etap + eta) * a1 * a1 * a2,
                       zeta * ag * a1 * a1 * a2, zeta * a1 * a2, phi * zeta * a2 * a2,
                       2.0 * phi * zeta * a1 * a2, phi * zeta * a1 * a1,
                       phi * eta * a1 * a2, phi * eta * a1 * a1});
  return e;
}

inline double scaled_residual(const SystemEval& e) {
  double r1 = std::abs(e.p1) / std::max(1.0, e.scale1);
  double r2 = std::abs(e.p2) / std::max(1.0, e.scale2);
  return std::max(r1, r2);
}

// Analytic Jacobian of (p1, p2) in (tau1, tau2).
inline void tau_jacobian(cplx t1, cplx t2, cplx gamma, double phi, double psi,
                         const GaussianMoments& m, double sigma2, cplx j[2][2]) {
  const double eta = m.eta, zeta = m.zeta, etap = m.eta_prime;
  const cplx bracket = zeta * (t2 - t1) * psi + t1 * psi * etap + phi;
  j[0][0] = phi * (zeta * t2 - phi) + zeta * t2 * psi * (gamma * t1 - 1.0) +
            zeta * t1 * t2 * psi * gamma + zeta * t2 * sigma2 * bracket +
            zeta * t1 * t2 * sigma2 * (psi * (etap - zeta));
  j[0][1] = phi * (zeta * t1 + phi) + zeta * t1 * psi * (gamma * t1 - 1.0) +
            zeta * t1 * sigma2 * bracket + zeta * t1 * t2 * sigma2 * (zeta * psi);
  j[1][0] = 2.0 * zeta * t1 * t2 * (etap - eta) * sigma2 + zeta * t2 * (gamma * t1 - 1.0) +
            zeta * t1 * t2 * gamma + phi * (zeta * (t2 - t1) + eta * t1) -
            (t2 - t1) * phi * (eta - zeta);
  j[1][1] = zeta * t1 * t1 * (etap - eta) * sigma2 + zeta * t1 * (gamma * t1 - 1.0) -
            phi * (zeta * (t2 - t1) + eta * t1) - (t2 - t1) * phi * zeta;
}

// Newton iteration at fixed gamma. Returns the achieved scaled residual.
inline double newton_polish(cplx& t1, cplx& t2, cplx gamma, double phi, double psi,
                            const GaussianMoments& m, double sigma2, int max_iter = 50) {
  double best = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    SystemEval e = eval_system(t1, t2, gamma, phi, psi, m, sigma2);
    best = scaled_residual(e);
    if (best < 1e-13) break;
    cplx j[2][2];
    tau_jacobian(t1, t2, gamma, phi, psi, m, sigma2, j);
    cplx det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if (std::abs(det) == 0.0) break;
    cplx d1 = (e.p1 * j[1][1] - e.p2 * j[0][1]) / det;
    cplx d2 = (e.p2 * j[0][0] - e.p1 * j[1][0]) / det;
    t1 -= d1;
    t2 -= d2;
    if (std::abs(d1) < 1e-16 * std::abs(t1) && std::abs(d2) < 1e-16 * std::abs(t2)) {
      best = scaled_residual(eval_system(t1, t2, gamma, phi, psi, m, sigma2));
      break;
    }
  }
  return best;
}

// Damped fixed point in resolvent form; used to enter Newton's basin at the
// top of the homotopy path where the map is contractive.
inline void damped_fixed_point(cplx& t1, cplx& t2, cplx gamma, double phi, double psi,
                               const GaussianMoments& m, double sigma2, int iters = 60) {
  const double eta = m.eta, zeta = m.zeta, etap = m.eta_prime;
  const double alpha = 0.5;
  for (int it = 0; it < iters; ++it) {
    cplx u = phi * (t1 - t2) * ((eta - zeta) * t1 + zeta * t2) / (zeta * t1 * t1 * t2);
    cplx t1n = 1.0 / (gamma + sigma2 * (etap - eta) + u);
    cplx den = phi * zeta * t1n + phi * phi + psi * zeta * t1n * (gamma * t1n - 1.0) +
               zeta * sigma2 * t1n * (zeta * psi * (t2 - t1n) + psi * etap * t1n + phi);
    cplx t2n = phi * phi * t1n / den;
    cplx n1 = (1.0 - alpha) * t1 + alpha * t1n;
    cplx n2 = (1.0 - alpha) * t2 + alpha * t2n;
    if (std::abs(n1 - t1) < 1e-14 * std::abs(n1) && std::abs(n2 - t2) < 1e-14 * std::abs(n2)) {
      t1 = n1;
      t2 = n2;
      break;
    }
    t1 = n1;
    t2 = n2;
  }
}

}  // namespace detail

// Ridgeless root of the factored quartic: ttau2 as a function of
// omega = max(phi, psi).
inline double ridgeless_ttau2(double phi, double psi, const GaussianMoments& m) {
  const double eta = m.eta, zeta = m.zeta;
  const double om = std::max(phi, psi);
  const double disc = (zeta + eta * om) * (zeta + eta * om) - 4.0 * zeta * zeta * om;
  if (disc < 0.0)
    throw degenerate_error("ridgeless_ttau2: negative discriminant (moments violate eta >= zeta?)");
  return (-zeta - eta * om + std::sqrt(disc)) / (2.0 * zeta * om);
}

// Residual of the ttau2 quartic obtained by eliminating ttau1 from the
// random-feature system; zero at a valid root.
inline double ridgeless_quartic_residual(double ttau2, double phi, double psi, double gamma,
                                         const GaussianMoments& m) {
  const double eta = m.eta, zeta = m.zeta;
  const double f_psi = ttau2 * (zeta * psi * ttau2 + zeta + eta * psi) + zeta;
  const double f_phi = ttau2 * (zeta * phi * ttau2 + zeta + eta * phi) + zeta;
  return f_psi * f_phi + gamma * zeta * phi * ttau2 * (ttau2 + 1.0);
}

// Closed-form derivatives (shared-denominator expressions in the auxiliary
// variables); valid for both the RF and NTK systems.
inline void tau_derivatives_inplace(TauSolution& s, const ModelShape& shape,
                                    const GaussianMoments& m) {
  const double eta = m.eta, zeta = m.zeta;
  const double phi = shape.phi, psi = shape.psi;
  const double sigma2 = shape.sigma_w2 * shape.sigma_w2;
  const double t1 = s.tau1, t2 = s.tau2;
  const double tt2 = -1.0 + t2 / t1;
  const double tt1 = sigma2 * zeta * t2 + phi * tt2;

  const double dA = psi * tt1 * tt1 *
                    (zeta * zeta * (tt2 + 1.0) * (tt2 + 1.0) +
                     phi * (zeta * tt2 + eta) * (zeta * tt2 * (2.0 * tt2 + 3.0) + eta));
  const double dB = zeta * zeta * phi * phi * (tt2 + 1.0) * (tt2 + 1.0) * (phi * tt2 * tt2 - 1.0);
  const double den = dA + dB;
  const double den_scale = std::max(std::abs(dA), std::abs(dB));
  if (std::abs(den) < 1e-12 * std::max(den_scale, 1e-300))
    throw degenerate_error(
        "tau_derivatives: shared denominator vanishes at phi=" + std::to_string(phi) +
        " psi=" + std::to_string(psi) + " gamma=" + std::to_string(shape.gamma) +
        " sigma_w2=" + std::to_string(shape.sigma_w2));

  s.ttau1 = tt1;
  s.ttau2 = tt2;
  s.dtau1 = -zeta * zeta * t2 * t2 * (psi * tt1 * tt1 - phi * phi) / den;
  s.dtau2 = -zeta * t2 * t2 *
            (psi * tt1 * tt1 * (zeta - eta) - zeta * phi * phi * (tt2 + 1.0) * (tt2 + 1.0)) / den;
}

inline std::pair<double, double> tau_derivatives(const TauSolution& solution,
                                                 const ModelShape& shape,
                                                 const GaussianMoments& m) {
  TauSolution s = solution;
  tau_derivatives_inplace(s, shape, m);
  return {s.dtau1, s.dtau2};
}

namespace detail {

// Path continuation from gamma + i*T down to real gamma. Branch: the complex
// initialization tau = 1/(gamma + iT) has Im tau < 0 for T > 0, matching the
// trace definition; on the real axis this lands on the root with
// tau1, tau2 > 0.
inline TauSolution solve_homotopy(const ModelShape& shape, const GaussianMoments& m,
                                  double sigma2) {
  const double phi = shape.phi, psi = shape.psi, gamma = shape.gamma;
  const double t_start = 100.0 * std::max(1.0, gamma);
  const double t_land = 1e-9 * std::max(1.0, gamma);

  cplx z(gamma, t_start);
  cplx t1 = 1.0 / z, t2 = 1.0 / z;
  damped_fixed_point(t1, t2, z, phi, psi, m, sigma2);
  double res = newton_polish(t1, t2, z, phi, psi, m, sigma2);
  if (!(res < 1e-10))
    throw solver_error("tau solver: failed to converge at the top of the homotopy path", res);

  double max_jump = 0.0;
  double T = t_start;
  double ratio = 0.9;
  while (T > t_land) {
    double t_next = std::max(T * ratio, 0.0);
    if (T - t_next < 1e-6 * std::max(T, 1e-30)) t_next = 0.0;  // final hop to the real axis
    cplx zn(gamma, t_next);
    cplx c1 = t1, c2 = t2;
    double r = newton_polish(c1, c2, zn, phi, psi, m, sigma2);
    double jump = std::max(std::abs(c1 - t1) / std::max(1.0, std::abs(t1)),
                           std::abs(c2 - t2) / std::max(1.0, std::abs(t2)));
    if (!(r < 1e-10) || jump > 0.05) {
      // refine the step; give up below the minimum step size
      double next_ratio = std::sqrt(ratio);
      if (1.0 - next_ratio < 1e-6)
        throw solver_error("tau solver: homotopy step underflow (possible branch point)", r);
      ratio = next_ratio;
      continue;
    }
    max_jump = std::max(max_jump, jump);
    t1 = c1;
    t2 = c2;
    if (t_next == 0.0) {
      T = 0.0;
      break;
    }
    T = t_next;
    ratio = std::max(0.9, ratio * ratio);  // relax back toward the nominal step
  }
  if (T > 0.0) {
    res = newton_polish(t1, t2, cplx(gamma, 0.0), phi, psi, m, sigma2);
    if (!(res < 1e-10)) throw solver_error("tau solver: failed to land on the real axis", res);
  }

  SystemEval e = eval_system(t1, t2, cplx(gamma, 0.0), phi, psi, m, sigma2);
  res = scaled_residual(e);
  if (!(res < 1e-10))
    throw solver_error("tau solver: residual certification failed", res);
  if (!(t1.real() > 0.0) || !(t2.real() > 0.0) ||
      std::abs(t1.imag()) > 1e-8 * std::abs(t1.real()) ||
      std::abs(t2.imag()) > 1e-8 * std::abs(t2.real()))
    throw solver_error("tau solver: landed on a non-physical branch", res);

  TauSolution s;
  s.tau1 = t1.real();
  s.tau2 = t2.real();
  s.residual_max = res;
  s.method = TauMethod::homotopy;
  s.max_path_jump = max_jump;
  tau_derivatives_inplace(s, shape, m);
  return s;
}

// Exact ridgeless evaluation for the random-feature system.
inline TauSolution solve_ridgeless_rf(const ModelShape& shape, const GaussianMoments& m) {
  const double phi = shape.phi, psi = shape.psi;
  const double eta = m.eta, zeta = m.zeta;
  if (std::abs(phi - psi) < 1e-12 && std::abs(eta - zeta) <= 1e-12 * eta)
    throw degenerate_error(
        "tau solver: linear activation at the interpolation threshold (phi == psi, gamma == 0) "
        "is degenerate; add a tiny ridge");

  TauSolution s;
  s.method = TauMethod::ridgeless_closed_form;
  s.ttau2 = ridgeless_ttau2(phi, psi, m);
  const double tt2 = s.ttau2;

  // scaled residual of the defining quartic at the root
  const double q = ridgeless_quartic_residual(tt2, phi, psi, 0.0, m);
  const double at = std::abs(tt2);
  const double fscale = std::max({zeta * psi * at * at, (zeta + eta * psi) * at, zeta}) *
                        std::max({zeta * phi * at * at, (zeta + eta * phi) * at, zeta});
  s.residual_max = std::abs(q) / std::max(1.0, fscale);

  const double denom = zeta * (1.0 + tt2) * (psi - phi);
  if (psi < phi && std::abs(denom) > 1e-300) {
    s.tau1 = phi * phi * tt2 / denom;
    s.tau2 = (1.0 + tt2) * s.tau1;
    tau_derivatives_inplace(s, shape, m);
    SystemEval e = eval_system(cplx(s.tau1), cplx(s.tau2), cplx(0.0), phi, psi, m, 0.0);
    s.residual_max = std::max(s.residual_max, scaled_residual(e));
    if (!(s.tau1 > 0.0) || !(s.tau2 >= 0.0))
      throw solver_error("tau solver: ridgeless recovery produced a non-physical root",
                         s.residual_max);
  } else {
    // rank-deficient kernel: the traces diverge, only ratios are meaningful
    const double inf = std::numeric_limits<double>::infinity();
    s.tau1 = inf;
    s.tau2 = inf;
    s.dtau1 = -inf;
    s.dtau2 = -inf;
    s.ttau1 = phi * tt2;
  }
  if (!(s.residual_max < 1e-10))
    throw solver_error("tau solver: ridgeless root failed residual certification", s.residual_max);
  return s;
}

}  // namespace detail

// Random-feature special case (requires sigma_w2 == 0).
inline TauSolution solve_tau_rf(const ModelShape& shape, const GaussianMoments& m) {
  shape.validate();
  if (shape.sigma_w2 != 0.0)
    throw invalid_argument("solve_tau_rf: sigma_w2 must be 0 (use solve_tau_ntk)");
  if (shape.gamma == 0.0) return detail::solve_ridgeless_rf(shape, m);
  return detail::solve_homotopy(shape, m, 0.0);
}

// Full tangent-kernel system; reduces exactly to solve_tau_rf at sigma_w2 = 0.
inline TauSolution solve_tau_ntk(const ModelShape& shape, const GaussianMoments& m) {
  shape.validate();
  const double sigma2 = shape.sigma_w2 * shape.sigma_w2;
  if (shape.gamma == 0.0 && sigma2 == 0.0) return detail::solve_ridgeless_rf(shape, m);
  return detail::solve_homotopy(shape, m, sigma2);
}

}  // namespace fgdd
