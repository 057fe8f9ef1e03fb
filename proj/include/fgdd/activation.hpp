#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fgdd/errors.hpp"

namespace fgdd {

// Scalar activation applied entrywise to pre-activations. Built-in kinds have
// analytic derivatives; user-supplied functions may provide one or fall back
// to a central difference.
struct Activation {
  enum class Kind { identity, relu, tanh_, user };

  Kind kind = Kind::identity;
  std::function<double(double)> fn;
  std::function<double(double)> dfn;  // optional for user activations
  std::string name = "identity";

  static Activation identity() { return {Kind::identity, {}, {}, "identity"}; }
  static Activation relu() { return {Kind::relu, {}, {}, "relu"}; }
  static Activation tanh() { return {Kind::tanh_, {}, {}, "tanh"}; }

  static Activation user(std::function<double(double)> f,
                         std::function<double(double)> df = {},
                         std::string name = "user") {
    return {Kind::user, std::move(f), std::move(df), std::move(name)};
  }

  static Activation from_name(const std::string& s) {
    if (s == "identity") return identity();
    if (s == "relu") return relu();
    if (s == "tanh") return tanh();
    throw invalid_argument("unknown activation '" + s + "' (expected identity, relu or tanh)");
  }

  double operator()(double x) const {
    switch (kind) {
      case Kind::identity: return x;
      case Kind::relu: return x > 0.0 ? x : 0.0;
      case Kind::tanh_: return std::tanh(x);
      case Kind::user: return fn(x);
    }
    return x;
  }

  bool has_derivative() const { return kind != Kind::user || static_cast<bool>(dfn); }

  // Analytic where available, otherwise central difference with
  // h = 1e-5 * max(1, |x|).
  double derivative(double x) const {
    switch (kind) {
      case Kind::identity: return 1.0;
      case Kind::relu: return x > 0.0 ? 1.0 : 0.0;
      case Kind::tanh_: {
        double t = std::tanh(x);
        return 1.0 - t * t;
      }
      case Kind::user:
        if (dfn) return dfn(x);
        break;
    }
    double h = 1e-5 * std::max(1.0, std::abs(x));
    return (fn(x + h) - fn(x - h)) / (2.0 * h);
  }
};

// Activation statistics under g ~ N(0,1):
//   eta       = E[sigma(g)^2]
//   zeta      = (E[sigma'(g)])^2 = (E[g sigma(g)])^2
//   eta_prime = E[sigma'(g)^2]
struct GaussianMoments {
  double eta = 1.0;
  double zeta = 1.0;
  double eta_prime = 1.0;
  int quadrature_nodes = 0;
  bool converged = true;
};

struct TeacherMoments {
  double eta_t = 1.0;
  double zeta_t = 1.0;
};

namespace detail {

// Gauss-Hermite rule for weight e^{-x^2}, by Golub-Welsch on the Jacobi
// matrix of the Hermite recurrence.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite(int n) {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k + 1 < n; ++k) {
    double b = std::sqrt((k + 1) / 2.0);
    j(k, k + 1) = b;
    j(k + 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
  Eigen::VectorXd nodes = es.eigenvalues();
  Eigen::VectorXd weights(n);
  const double mu0 = std::sqrt(M_PI);
  for (int k = 0; k < n; ++k) {
    double v0 = es.eigenvectors()(0, k);
    weights[k] = mu0 * v0 * v0;
  }
  return {nodes, weights};
}

// E[f(g)] for g ~ N(0,1) using an n-node rule (change of variables g = sqrt2 x).
inline double gaussian_expect(const std::function<double(double)>& f, int n) {
  auto [x, w] = gauss_hermite(n);
  const double inv_sqrt_pi = 1.0 / std::sqrt(M_PI);
  double acc = 0.0;
  for (int k = 0; k < n; ++k) acc += w[k] * f(std::sqrt(2.0) * x[k]);
  return acc * inv_sqrt_pi;
}

struct RawMoments {
  double eta, e_gs, e_ds, eta_prime;
};

inline RawMoments raw_moments(const Activation& a, int n) {
  RawMoments m;
  m.eta = gaussian_expect([&](double g) { double s = a(g); return s * s; }, n);
  m.e_gs = gaussian_expect([&](double g) { return g * a(g); }, n);
  m.e_ds = gaussian_expect([&](double g) { return a.derivative(g); }, n);
  m.eta_prime = gaussian_expect([&](double g) { double d = a.derivative(g); return d * d; }, n);
  return m;
}

inline double rel_change(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-30});
}

}  // namespace detail

// Gauss-Hermite moments with a node-doubling convergence check. The returned
// values are the finer (2n-node) estimates.
inline GaussianMoments compute_moments(const Activation& activation, int nodes = 128) {
  if (nodes < 16) throw invalid_argument("compute_moments: need at least 16 quadrature nodes");
  auto coarse = detail::raw_moments(activation, nodes);
  auto fine = detail::raw_moments(activation, 2 * nodes);

  struct Check { const char* name; double c, f; };
  const Check checks[] = {
      {"eta", coarse.eta, fine.eta},
      {"E[g sigma(g)]", coarse.e_gs, fine.e_gs},
      {"eta_prime", coarse.eta_prime, fine.eta_prime},
  };
  bool converged = true;
  for (const auto& c : checks) {
    double r = detail::rel_change(c.c, c.f);
    if (r >= 1e-6)
      throw quadrature_error(std::string("compute_moments: moment ") + c.name +
                             " changed by " + std::to_string(r) +
                             " under node doubling (not square-integrable against the Gaussian?)");
    if (r >= 1e-10) converged = false;
  }

  GaussianMoments m;
  m.eta = fine.eta;
  // Prefer the derivative-based definition when a derivative exists; the two
  // agree by Stein's lemma (see stein_check).
  m.zeta = activation.has_derivative() ? fine.e_ds * fine.e_ds : fine.e_gs * fine.e_gs;
  m.eta_prime = fine.eta_prime;
  m.quadrature_nodes = nodes;
  m.converged = converged;
  return m;
}

// Relative discrepancy between the two equivalent definitions of zeta,
// (E[g sigma(g)])^2 vs (E[sigma'(g)])^2.
inline double stein_check(const Activation& activation, int nodes = 128) {
  auto fine = detail::raw_moments(activation, 2 * nodes);
  double z_gs = fine.e_gs * fine.e_gs;
  double z_ds = fine.e_ds * fine.e_ds;
  return std::abs(z_gs - z_ds) / std::max(std::max(z_gs, z_ds), 1e-30);
}

inline TeacherMoments teacher_moments(const Activation& teacher, int nodes = 128) {
  auto m = compute_moments(teacher, nodes);
  return {m.eta, m.zeta};
}

// SNR of the equivalent linear-teacher-plus-noise model,
// zeta_t / (eta_t - zeta_t + sigma_eps^2).
inline double effective_snr(const TeacherMoments& teacher, double sigma_eps) {
  double denom = teacher.eta_t - teacher.zeta_t + sigma_eps * sigma_eps;
  if (denom <= 0.0)
    throw degenerate_error(
        "effective_snr: infinite SNR (linear teacher with zero noise); pass sigma_eps directly");
  return teacher.zeta_t / denom;
}

// Label-noise std that realizes a target SNR under a linear teacher.
inline double sigma_eps_for_snr(double snr) {
  if (snr <= 0.0) throw invalid_argument("snr must be positive");
  return std::sqrt(1.0 / snr);
}

}  // namespace fgdd
