#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fgdd/activation.hpp"
#include "fgdd/errors.hpp"
#include "fgdd/tau.hpp"

namespace fgdd {

// The eight-term bias/variance split plus derived totals. diverged marks the
// ridgeless interpolation threshold (phi == psi, gamma == 0) where V_PX and
// V_PXeps grow without bound; their fields are NaN there.
struct Decomposition {
  double B = 0.0;
  double V_P = 0.0;
  double V_X = 0.0;
  double V_eps = 0.0;
  double V_PX = 0.0;
  double V_Peps = 0.0;
  double V_Xeps = 0.0;
  double V_PXeps = 0.0;
  double total_variance = 0.0;
  double E_test = 0.0;
  bool diverged = false;

  void finalize_totals() {
    total_variance = V_P + V_X + V_eps + V_PX + V_Peps + V_Xeps + V_PXeps;
    E_test = B + total_variance;
  }
};

struct RecombinedViews {
  double B_sc = 0.0, V_sc = 0.0;              // semi-classical
  double V_D_cond = 0.0, V_D_comp = 0.0;      // law of total variance, condition on data
  double V_P_cond = 0.0, V_P_comp = 0.0;      // law of total variance, condition on parameters
  double V_P_bi = 0.0, V_D_bi = 0.0, V_PD = 0.0;  // bivariate symmetric
  double dascoli_bias = 0.0, dascoli_init = 0.0, dascoli_samp = 0.0, dascoli_noise = 0.0;
};

struct TrainingLoss {
  double T1 = 0.0;
  double T2 = 0.0;
  double E_train = 0.0;
};

namespace detail {

// Shared-denominator variance ratio q = phi (tau1-tau2)^2 / (tau1^2 - phi (tau1-tau2)^2),
// written in ttau2 so it stays valid when tau1 itself diverges. V_X = B q and
// V_Xeps = sigma_eps^2 q; the latter is the cancelled form of sigma_eps^2 V_X / B,
// which removes the spurious singularity at B = 0.
inline double variance_ratio_q(double phi, double ttau2) {
  double denom = 1.0 - phi * ttau2 * ttau2;
  if (!(denom > 0.0))
    throw degenerate_error(
        "decomposition: tau1^2 - phi (tau1 - tau2)^2 <= 0 (degenerate linear-recovery regime)");
  return phi * ttau2 * ttau2 / denom;
}

struct TermRatios {
  double r21;   // tau2 / tau1
  double rdd;   // tau2' / tau1'
  double r1p;   // tau1' / tau1^2
  double r2p;   // tau2' / tau1^2
};

// Ridgeless RF limits when the kernel is rank-deficient and tau1, tau2
// themselves diverge like c/gamma. c is the limiting zero-eigenvalue mass
// 1 - rank(K)/m; a nonlinear activation contributes full feature rank n1,
// the linear one only min(n0, n1).
inline TermRatios ridgeless_divergent_ratios(double phi, double psi, double ttau2,
                                             const GaussianMoments& m) {
  const bool nonlinear = (m.eta - m.zeta) > 1e-12 * m.eta;
  const double rank_frac = nonlinear ? phi / psi : std::min({phi, phi / psi, 1.0});
  const double c = 1.0 - rank_frac;
  if (!(c > 0.0))
    throw degenerate_error("decomposition: ridgeless ratio limit at vanishing zero-eigenvalue mass");
  TermRatios r;
  r.r21 = 1.0 + ttau2;
  r.rdd = 1.0 + ttau2;
  r.r1p = -1.0 / c;
  r.r2p = -(1.0 + ttau2) / c;
  return r;
}

inline Decomposition decompose_impl(const ModelShape& shape, const GaussianMoments& m,
                                    const TauSolution& tau) {
  const double se2 = shape.sigma_eps * shape.sigma_eps;
  const double sigma2 = shape.sigma_w2 * shape.sigma_w2;
  const double nu = static_cast<double>(shape.nu);

  Decomposition d;
  if (shape.gamma == 0.0 && std::abs(shape.phi - shape.psi) < 1e-8) {
    // Interpolation threshold: V_PX and V_PXeps diverge (ridgeless RF).
    if (sigma2 == 0.0) {
      d.diverged = true;
      const double r21 = 1.0 + tau.ttau2;
      d.B = r21 * r21;
      const double q = variance_ratio_q(shape.phi, tau.ttau2);
      d.V_X = d.B * q;
      d.V_Xeps = se2 * q;
      d.V_P = r21 - d.B;  // tau2'/tau1' stays finite (= 1 + ttau2) at the threshold
      const double nan = std::numeric_limits<double>::quiet_NaN();
      d.V_PX = nan;
      d.V_PXeps = nan;
      d.total_variance = nan;
      d.E_test = nan;
      return d;
    }
  }

  TermRatios r;
  if (std::isfinite(tau.tau1)) {
    r.r21 = tau.tau2 / tau.tau1;
    r.rdd = tau.dtau2 / tau.dtau1;
    r.r1p = tau.dtau1 / (tau.tau1 * tau.tau1);
    r.r2p = tau.dtau2 / (tau.tau1 * tau.tau1);
  } else {
    r = ridgeless_divergent_ratios(shape.phi, shape.psi, tau.ttau2, m);
  }

  d.B = r.r21 * r.r21;
  const double q = variance_ratio_q(shape.phi, r.r21 - 1.0);
  d.V_X = d.B * q;
  d.V_Xeps = se2 * q;

  // T2 / (gamma tau1)^2 in the algebraically cancelled form (T2 carries an
  // explicit gamma^2); both vanish identically in the RF model.
  double t2_correction = 0.0;   // nu T2 / (gamma tau1)^2
  double t2_over_dtau1 = 0.0;   // nu T2 / tau1'
  if (sigma2 > 0.0 && shape.nu == 1) {
    const double t2_ratio =
        sigma2 *
        (tau.tau1 + (sigma2 * (m.eta_prime - m.zeta) + shape.gamma) * tau.dtau1 +
         sigma2 * m.zeta * tau.dtau2) /
        (tau.tau1 * tau.tau1);
    t2_correction = nu * t2_ratio;
    const double t2 = sigma2 * shape.gamma * shape.gamma *
                      (tau.tau1 + (sigma2 * (m.eta_prime - m.zeta) + shape.gamma) * tau.dtau1 +
                       sigma2 * m.zeta * tau.dtau2);
    t2_over_dtau1 = nu * t2 / tau.dtau1;
  }

  d.V_P = r.rdd - d.B - t2_over_dtau1;
  d.V_PX = -r.r2p - d.B - d.V_P - d.V_X + t2_correction;
  d.V_eps = 0.0;
  d.V_Peps = 0.0;
  d.V_PXeps = se2 * (-r.r1p - 1.0) - d.V_Xeps;
  d.finalize_totals();
  return d;
}

}  // namespace detail

// Random-feature decomposition (closed forms of the eight terms).
inline Decomposition decompose_rf(const ModelShape& shape, const GaussianMoments& m) {
  if (shape.sigma_w2 != 0.0)
    throw invalid_argument("decompose_rf: sigma_w2 must be 0 (use decompose_ntk)");
  return detail::decompose_impl(shape, m, solve_tau_rf(shape, m));
}

// Tangent-kernel decomposition, including the nu-dependent corrections;
// reduces exactly to decompose_rf at sigma_w2 = 0.
inline Decomposition decompose_ntk(const ModelShape& shape, const GaussianMoments& m) {
  return detail::decompose_impl(shape, m, solve_tau_ntk(shape, m));
}

// All recombined views of the same total; every view sums back to E_test.
inline RecombinedViews recombine(const Decomposition& d) {
  if (d.diverged) throw invalid_argument("recombine: decomposition diverged at the threshold");
  RecombinedViews v;
  v.B_sc = d.B + d.V_P + d.V_X + d.V_PX;
  v.V_sc = d.V_eps + d.V_Peps + d.V_Xeps + d.V_PXeps;
  v.V_D_comp = d.V_P + d.V_PX + d.V_Peps + d.V_PXeps;
  v.V_D_cond = d.total_variance - v.V_D_comp;
  v.V_P_comp = d.V_X + d.V_PX + d.V_Xeps + d.V_PXeps;
  v.V_P_cond = d.total_variance - v.V_P_comp;
  v.V_P_bi = d.V_P;
  v.V_D_bi = d.V_X + d.V_eps + d.V_Xeps;
  v.V_PD = d.total_variance - v.V_P_bi - v.V_D_bi;
  v.dascoli_bias = d.B;
  v.dascoli_init = d.V_P + d.V_PX;
  v.dascoli_samp = d.V_X;
  v.dascoli_noise = d.V_PXeps + d.V_Xeps + d.V_Peps + d.V_eps;
  return v;
}

// Asymptotic training loss; both terms carry a gamma^2 prefactor.
inline TrainingLoss training_loss(const ModelShape& shape, const GaussianMoments& m,
                                  const TauSolution& tau) {
  TrainingLoss t;
  if (shape.gamma == 0.0) return t;
  const double g2 = shape.gamma * shape.gamma;
  const double sigma2 = shape.sigma_w2 * shape.sigma_w2;
  const double se2 = shape.sigma_eps * shape.sigma_eps;
  t.T1 = -g2 * (se2 * tau.dtau1 + tau.dtau2);
  if (sigma2 > 0.0)
    t.T2 = sigma2 * g2 *
           (tau.tau1 + (sigma2 * (m.eta_prime - m.zeta) + shape.gamma) * tau.dtau1 +
            sigma2 * m.zeta * tau.dtau2);
  t.E_train = t.T1 + static_cast<double>(shape.nu) * t.T2;
  return t;
}

// Outcome of the ridgeless threshold sweep checks.
struct ThresholdReport {
  bool bias_monotone = true;
  bool interactions_divergent = true;
  bool bounded_terms_ok = true;
  bool scaled_interaction_bounded = true;
  std::vector<std::string> violations;

  bool passed() const {
    return bias_monotone && interactions_divergent && bounded_terms_ok &&
           scaled_interaction_bounded;
  }
};

// Ridgeless RF sweep over psi at fixed phi. Verifies that the bias is
// non-increasing in n1/m, that only the PX interaction terms blow up near
// psi = phi, and that (phi - psi) V_PX stays bounded while doing so.
inline ThresholdReport threshold_diagnostics(const GaussianMoments& m, double phi,
                                             const std::vector<double>& psi_grid,
                                             double sigma_eps) {
  ThresholdReport rep;
  struct Row {
    double psi, width;  // width = n1/m
    Decomposition d;
  };
  std::vector<Row> rows;
  for (double psi : psi_grid) {
    if (std::abs(psi - phi) < 1e-8) continue;  // exact threshold excluded by contract
    ModelShape s;
    s.phi = phi;
    s.psi = psi;
    s.gamma = 0.0;
    s.sigma_eps = sigma_eps;
    rows.push_back({psi, phi / psi, decompose_rf(s, m)});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.width < b.width; });

  for (size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].d.B > rows[i - 1].d.B + 1e-10) {
      rep.bias_monotone = false;
      rep.violations.push_back("B increased at psi=" + std::to_string(rows[i].psi));
    }
  }

  // boundedness of the non-interaction terms: within 10x their mid-sweep values
  auto mid = rows[rows.size() / 2].d;
  const double eps_floor = 1e-6;
  for (const auto& r : rows) {
    struct Named { const char* n; double v, ref; };
    const Named checks[] = {{"B", r.d.B, mid.B},
                            {"V_P", r.d.V_P, mid.V_P},
                            {"V_X", r.d.V_X, mid.V_X},
                            {"V_Xeps", r.d.V_Xeps, mid.V_Xeps}};
    for (const auto& c : checks) {
      if (c.v > 10.0 * std::max(c.ref, eps_floor) + eps_floor) {
        rep.bounded_terms_ok = false;
        rep.violations.push_back(std::string(c.n) + " unbounded at psi=" + std::to_string(r.psi));
      }
    }
  }

  // interaction blow-up close to the threshold, with bounded (phi-psi)-scaled values
  double scaled_min = std::numeric_limits<double>::infinity(), scaled_max = 0.0;
  bool saw_large_vpx = false, saw_large_vpxe = false;
  for (int k = 2; k <= 6; ++k) {
    for (double sign : {-1.0, 1.0}) {
      double psi = phi * (1.0 + sign * std::pow(10.0, -k));
      ModelShape s;
      s.phi = phi;
      s.psi = psi;
      s.gamma = 0.0;
      s.sigma_eps = sigma_eps;
      Decomposition d = decompose_rf(s, m);
      if (d.V_PX > 1e3) saw_large_vpx = true;
      if (sigma_eps > 0.0 && d.V_PXeps > 1e3) saw_large_vpxe = true;
      if (k >= 3) {
        double scaled = std::abs(phi - psi) * d.V_PX;
        scaled_min = std::min(scaled_min, scaled);
        scaled_max = std::max(scaled_max, scaled);
      }
    }
  }
  if (!saw_large_vpx || (sigma_eps > 0.0 && !saw_large_vpxe)) {
    rep.interactions_divergent = false;
    rep.violations.push_back("V_PX/V_PXeps did not exceed 1e3 near psi=phi");
  }
  if (!(scaled_max < 2.0 * scaled_min)) {
    rep.scaled_interaction_bounded = false;
    rep.violations.push_back("(phi-psi) V_PX varied by more than 2x approaching the threshold");
  }
  return rep;
}

}  // namespace fgdd
