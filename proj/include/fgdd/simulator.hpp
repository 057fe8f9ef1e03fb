#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "fgdd/activation.hpp"
#include "fgdd/anova.hpp"
#include "fgdd/errors.hpp"
#include "fgdd/rng.hpp"
#include "fgdd/tau.hpp"

namespace fgdd {

enum class ModelKind { rf, ntk };
enum class FeatureMode { exact, gaussian_equivalent };

// Coupling mask layout: bit 0 = parameters P, bit 1 = inputs X, bit 2 = label
// noise eps. A set bit means the masked predictor reuses the BASE draw of that
// variable; a clear bit selects the independent copy.
inline constexpr int kMaskP = 1;
inline constexpr int kMaskX = 2;
inline constexpr int kMaskEps = 4;
inline constexpr int kNumMasks = 8;

struct SimConfig {
  int m = 1024;
  int n0 = 512;
  int n1 = 512;
  Activation activation = Activation::tanh();
  double gamma = 1e-6;
  double sigma_eps = 0.0;
  ModelKind model = ModelKind::rf;
  double sigma_w2 = 0.0;
  bool centering = false;
  FeatureMode feature_mode = FeatureMode::exact;
  int n_test = 512;
  int n_replicates = 64;
  std::uint64_t base_seed = 1;

  void validate() const {
    if (m < 1 || n0 < 1 || n1 < 1 || n_test < 1 || n_replicates < 1)
      throw invalid_argument("SimConfig: m, n0, n1, n_test, n_replicates must all be >= 1");
    if (!(gamma >= 0.0)) throw invalid_argument("SimConfig: gamma must be >= 0");
    if (!(sigma_eps >= 0.0)) throw invalid_argument("SimConfig: sigma_eps must be >= 0");
    if (model == ModelKind::rf && sigma_w2 != 0.0)
      throw invalid_argument("SimConfig: the RF model forces sigma_w2 = 0");
    if (!(sigma_w2 >= 0.0)) throw invalid_argument("SimConfig: sigma_w2 must be >= 0");
  }

  ModelShape shape() const {
    ModelShape s;
    s.phi = static_cast<double>(n0) / m;
    s.psi = static_cast<double>(n0) / n1;
    s.gamma = gamma;
    s.sigma_w2 = model == ModelKind::ntk ? sigma_w2 : 0.0;
    s.sigma_eps = sigma_eps;
    s.nu = centering ? 0 : 1;
    return s;
  }
};

namespace detail {

// Stream ids for the counter-based generator. A stream is keyed by
// (replicate, ensemble member, variable id); experiment-level draws use the
// zero block. Member 0 is the single-learner case, so a (1,1) ensemble
// reproduces the plain estimator bit for bit.
enum StreamId : std::uint64_t {
  kBeta = 1,
  kTestPoints = 2,
  kW1Base = 3,
  kW1Copy = 4,
  kW2Base = 5,
  kW2Copy = 6,
  kXBase = 7,
  kXCopy = 8,
  kEpsBase = 9,
  kEpsCopy = 10,
  kThetaF = 11,  // + 2*p + x for the four (P-draw, X-draw) pairs
  kThetaTest = 15,  // + p
};

inline std::uint64_t replicate_stream(int replicate, int member, std::uint64_t id) {
  return ((static_cast<std::uint64_t>(replicate) + 1) << 32) ^
         ((static_cast<std::uint64_t>(member) + 1) << 16) ^ id;
}

inline void fill_gaussian(Eigen::Ref<Eigen::MatrixXd> out, CounterRng& rng, double scale = 1.0) {
  for (Eigen::Index c = 0; c < out.cols(); ++c)
    for (Eigen::Index r = 0; r < out.rows(); ++r) out(r, c) = scale * rng.next_gaussian();
}

inline double pairwise_sum(const double* data, std::size_t n) {
  if (n <= 8) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += data[i];
    return acc;
  }
  std::size_t half = n / 2;
  return pairwise_sum(data, half) + pairwise_sum(data + half, n - half);
}

inline double mean_of(const Eigen::VectorXd& v) {
  return pairwise_sum(v.data(), static_cast<std::size_t>(v.size())) / static_cast<double>(v.size());
}

// Run fn(i) for i in [0, n) on up to FGDD_THREADS workers (default: hardware
// concurrency). Work items write to disjoint slots, so scheduling order cannot
// affect results.
template <typename Fn>
inline void parallel_for(int n, Fn&& fn) {
  int max_threads = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FGDD_THREADS")) {
    int req = std::atoi(env);
    if (req >= 1) max_threads = req;
  }
  int workers = std::max(1, std::min(max_threads, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        int i = next.fetch_add(1);
        if (i >= n || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failed.load()) std::rethrow_exception(error);
}

}  // namespace detail

// A fixed learning problem: teacher vector and noiseless test set, shared by
// every replicate (the decomposition conditions only on P, X, eps).
struct Experiment {
  SimConfig config;
  Eigen::VectorXd beta;         // n0
  Eigen::MatrixXd test_points;  // n0 x n_test
  Eigen::VectorXd test_labels;  // noiseless beta . x / sqrt(n0)

  static Experiment create(const SimConfig& config) {
    config.validate();
    Experiment e;
    e.config = config;
    CounterRng beta_rng(config.base_seed, detail::kBeta);
    e.beta.resize(config.n0);
    detail::fill_gaussian(e.beta, beta_rng);
    CounterRng test_rng(config.base_seed, detail::kTestPoints);
    e.test_points.resize(config.n0, config.n_test);
    detail::fill_gaussian(e.test_points, test_rng);
    e.test_labels = (e.beta.transpose() * e.test_points).transpose() / std::sqrt(config.n0);
    return e;
  }
};

// One draw of every randomness source a predictor depends on.
struct Draws {
  Eigen::MatrixXd w1;     // n1 x n0
  Eigen::VectorXd w2;     // n1 (NTK only)
  Eigen::MatrixXd x;      // n0 x m
  Eigen::VectorXd eps;    // m
  // gaussian-equivalent surrogate noise (empty in exact mode)
  Eigen::MatrixXd theta_f;      // n1 x m
  Eigen::MatrixXd theta_test;   // n1 x n_test
};

// Linearized surrogate features sqrt(zeta/n0) W1 X + sqrt(eta - zeta) Theta.
inline Eigen::MatrixXd gaussian_equivalent_features(const Eigen::MatrixXd& w1,
                                                    const Eigen::MatrixXd& x,
                                                    const GaussianMoments& m,
                                                    std::uint64_t noise_seed) {
  if (m.eta < m.zeta - 1e-12)
    throw invalid_argument("gaussian_equivalent_features: moments violate eta >= zeta");
  Eigen::MatrixXd f = std::sqrt(m.zeta / x.rows()) * (w1 * x);
  double amp = std::sqrt(std::max(0.0, m.eta - m.zeta));
  if (amp > 0.0) {
    CounterRng rng(noise_seed, detail::kThetaF);
    Eigen::MatrixXd theta(w1.rows(), x.cols());
    detail::fill_gaussian(theta, rng);
    f += amp * theta;
  }
  return f;
}

namespace detail {

struct FactoredKernel {
  Eigen::MatrixXd k;
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::LDLT<Eigen::MatrixXd> ldlt;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
  int path = 0;  // 0 = llt, 1 = ldlt, 2 = least-squares qr

  void factorize() {
    llt.compute(k);
    if (llt.info() == Eigen::Success) {
      path = 0;
      return;
    }
    ldlt.compute(k);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      path = 1;
      return;
    }
    qr.compute(k);
    path = 2;
  }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const {
    switch (path) {
      case 0: return llt.solve(rhs);
      case 1: return ldlt.solve(rhs);
      default: return qr.solve(rhs);
    }
  }
};

struct FeatureSet {
  Eigen::MatrixXd f;        // n1 x m          sigma(W1 X / sqrt(n0)) or surrogate
  Eigen::MatrixXd fp_w2;    // n1 x m          diag(W2) sigma'(W1 X / sqrt(n0)) (exact NTK)
};

inline Eigen::MatrixXd apply_activation(const Activation& a, const Eigen::MatrixXd& z) {
  return z.unaryExpr([&](double v) { return a(v); });
}

inline Eigen::MatrixXd apply_derivative(const Activation& a, const Eigen::MatrixXd& z) {
  return z.unaryExpr([&](double v) { return a.derivative(v); });
}

inline FeatureSet make_features(const SimConfig& c, const GaussianMoments& mom,
                                const Eigen::MatrixXd& w1, const Eigen::VectorXd& w2,
                                const Eigen::MatrixXd& x, const Eigen::MatrixXd* theta) {
  FeatureSet fs;
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.n0));
  if (c.feature_mode == FeatureMode::exact) {
    Eigen::MatrixXd z = scale * (w1 * x);
    fs.f = apply_activation(c.activation, z);
    if (c.model == ModelKind::ntk && c.sigma_w2 > 0.0)
      fs.fp_w2 = w2.asDiagonal() * apply_derivative(c.activation, z);
  } else {
    fs.f = std::sqrt(mom.zeta) * scale * (w1 * x);
    double amp = std::sqrt(std::max(0.0, mom.eta - mom.zeta));
    if (amp > 0.0 && theta != nullptr) fs.f += amp * (*theta);
  }
  return fs;
}

}  // namespace detail

// The ridged kernel matrix K(X, X) + gamma I. The NTK adds the first-layer
// kernel (X^T X / n0) .* (F'^T diag(W2)^2 F' / n1); in gaussian-equivalent
// mode that factor is replaced by its deterministic equivalent
// sigma_w2^2 [(eta' - zeta) I + zeta X^T X / n0].
inline Eigen::MatrixXd build_kernel(const SimConfig& config, const Eigen::MatrixXd& x,
                                    const Eigen::MatrixXd& w1, const Eigen::VectorXd& w2,
                                    const GaussianMoments& moments,
                                    const Eigen::MatrixXd* theta_f = nullptr) {
  config.validate();
  detail::FeatureSet fs = detail::make_features(config, moments, w1, w2, x, theta_f);
  const int m = static_cast<int>(x.cols());
  Eigen::MatrixXd k = fs.f.transpose() * fs.f / config.n1;
  if (config.model == ModelKind::ntk && config.sigma_w2 > 0.0) {
    Eigen::MatrixXd gram_x = x.transpose() * x / config.n0;
    if (config.feature_mode == FeatureMode::exact) {
      k += gram_x.cwiseProduct(fs.fp_w2.transpose() * fs.fp_w2 / config.n1);
    } else {
      double s2 = config.sigma_w2 * config.sigma_w2;
      k += s2 * (moments.eta_prime - moments.zeta) * Eigen::MatrixXd::Identity(m, m) +
           s2 * moments.zeta * gram_x;
    }
  }
  k.diagonal().array() += config.gamma;
  if (!k.allFinite())
    throw solver_error(
        "build_kernel: kernel contains non-finite entries (singular at gamma=0? try gamma=1e-6)",
        0.0);
  return k;
}

// Kernel regression prediction at query points from one set of draws. One
// factorization, two solves, no explicit inverse.
inline Eigen::VectorXd predict(const Experiment& ex, const Draws& d,
                               const Eigen::MatrixXd& queries, const GaussianMoments& moments) {
  const SimConfig& c = ex.config;
  detail::FactoredKernel fk;
  fk.k = build_kernel(c, d.x, d.w1, d.w2, moments, d.theta_f.size() ? &d.theta_f : nullptr);
  fk.factorize();

  detail::FeatureSet ftr = detail::make_features(c, moments, d.w1, d.w2, d.x,
                                                 d.theta_f.size() ? &d.theta_f : nullptr);
  detail::FeatureSet fq = detail::make_features(c, moments, d.w1, d.w2, queries,
                                                d.theta_test.size() ? &d.theta_test : nullptr);

  Eigen::MatrixXd kx = ftr.f.transpose() * fq.f / c.n1;
  if (c.model == ModelKind::ntk && c.sigma_w2 > 0.0) {
    Eigen::MatrixXd cross_x = d.x.transpose() * queries / c.n0;
    if (c.feature_mode == FeatureMode::exact) {
      kx += cross_x.cwiseProduct(ftr.fp_w2.transpose() * fq.fp_w2 / c.n1);
    } else {
      kx += c.sigma_w2 * c.sigma_w2 * moments.zeta * cross_x;
    }
  }

  Eigen::RowVectorXd y = d.eps.transpose();
  y += ex.beta.transpose() * d.x / std::sqrt(c.n0);
  Eigen::RowVectorXd n0_train = Eigen::RowVectorXd::Zero(c.m);
  Eigen::RowVectorXd n0_query = Eigen::RowVectorXd::Zero(queries.cols());
  if (c.model == ModelKind::ntk && c.sigma_w2 > 0.0 && !c.centering) {
    n0_train = d.w2.transpose() * ftr.f / std::sqrt(c.n1);
    n0_query = d.w2.transpose() * fq.f / std::sqrt(c.n1);
  }
  Eigen::VectorXd w = fk.solve((y - n0_train).transpose());
  Eigen::VectorXd out = (n0_query + w.transpose() * kx).transpose();
  if (!out.allFinite())
    throw solver_error("predict: non-finite predictions (singular kernel? try gamma=1e-6)", 0.0);
  return out;
}

// Everything a replicate contributes to the estimators.
struct ReplicateOutput {
  std::array<Eigen::VectorXd, kNumMasks> predictions;  // per coupling mask
  double train_loss = 0.0;                             // base predictor
};

namespace detail {

struct ReplicateDraws {
  Eigen::MatrixXd w1[2];  // [copy, base]
  Eigen::VectorXd w2[2];
  Eigen::MatrixXd x[2];
  Eigen::VectorXd eps[2];
  Eigen::MatrixXd theta_f[2][2];   // [p][x] pair-keyed surrogate noise
  Eigen::MatrixXd theta_test[2];   // [p]
};

inline ReplicateDraws draw_replicate(const Experiment& ex, int replicate) {
  const SimConfig& c = ex.config;
  ReplicateDraws d;
  auto stream = [&](std::uint64_t id) {
    return CounterRng(c.base_seed, replicate_stream(replicate, 0, id));
  };
  const bool want_w2 = c.model == ModelKind::ntk && c.sigma_w2 > 0.0;
  for (int b = 0; b < 2; ++b) {
    CounterRng w1r = stream(b ? kW1Base : kW1Copy);
    d.w1[b].resize(c.n1, c.n0);
    fill_gaussian(d.w1[b], w1r);
    if (want_w2) {
      CounterRng w2r = stream(b ? kW2Base : kW2Copy);
      d.w2[b].resize(c.n1);
      fill_gaussian(d.w2[b], w2r, c.sigma_w2);
    } else {
      d.w2[b] = Eigen::VectorXd::Zero(c.n1);
    }
    CounterRng xr = stream(b ? kXBase : kXCopy);
    d.x[b].resize(c.n0, c.m);
    fill_gaussian(d.x[b], xr);
    CounterRng er = stream(b ? kEpsBase : kEpsCopy);
    d.eps[b].resize(c.m);
    fill_gaussian(d.eps[b], er, c.sigma_eps);
  }
  if (c.feature_mode == FeatureMode::gaussian_equivalent) {
    double amp = 1.0;  // actual amplitude applied in make_features
    (void)amp;
    for (int p = 0; p < 2; ++p) {
      for (int xb = 0; xb < 2; ++xb) {
        CounterRng tr = stream(kThetaF + 2 * p + xb);
        d.theta_f[p][xb].resize(c.n1, c.m);
        fill_gaussian(d.theta_f[p][xb], tr);
      }
      CounterRng tt = stream(kThetaTest + p);
      d.theta_test[p].resize(c.n1, c.n_test);
      fill_gaussian(d.theta_test[p], tt);
    }
  }
  return d;
}

}  // namespace detail

// Build the eight coupled predictors for one replicate and evaluate them at
// the experiment's fixed test points. Masks sharing (P, X) reuse one kernel
// factorization, so eps-only mask pairs are bit-identical when sigma_eps = 0.
inline ReplicateOutput run_replicate(const Experiment& ex, int replicate,
                                     const GaussianMoments& moments) {
  const SimConfig& c = ex.config;
  detail::ReplicateDraws d = detail::draw_replicate(ex, replicate);
  ReplicateOutput out;

  for (int p = 0; p < 2; ++p) {
    const Eigen::MatrixXd* theta_q =
        c.feature_mode == FeatureMode::gaussian_equivalent ? &d.theta_test[p] : nullptr;
    detail::FeatureSet fq =
        detail::make_features(c, moments, d.w1[p], d.w2[p], ex.test_points, theta_q);
    Eigen::RowVectorXd n0_query = Eigen::RowVectorXd::Zero(c.n_test);
    const bool uncentered_ntk = c.model == ModelKind::ntk && c.sigma_w2 > 0.0 && !c.centering;
    if (uncentered_ntk) n0_query = d.w2[p].transpose() * fq.f / std::sqrt(c.n1);

    for (int xb = 0; xb < 2; ++xb) {
      const Eigen::MatrixXd* theta_t = c.feature_mode == FeatureMode::gaussian_equivalent
                                           ? &d.theta_f[p][xb]
                                           : nullptr;
      detail::FeatureSet ftr = detail::make_features(c, moments, d.w1[p], d.w2[p], d.x[xb], theta_t);
      detail::FactoredKernel fk;
      fk.k = build_kernel(c, d.x[xb], d.w1[p], d.w2[p], moments, theta_t);
      fk.factorize();

      Eigen::MatrixXd kx = ftr.f.transpose() * fq.f / c.n1;
      if (c.model == ModelKind::ntk && c.sigma_w2 > 0.0) {
        Eigen::MatrixXd cross_x = d.x[xb].transpose() * ex.test_points / c.n0;
        if (c.feature_mode == FeatureMode::exact)
          kx += cross_x.cwiseProduct(ftr.fp_w2.transpose() * fq.fp_w2 / c.n1);
        else
          kx += c.sigma_w2 * c.sigma_w2 * moments.zeta * cross_x;
      }

      Eigen::RowVectorXd n0_train = Eigen::RowVectorXd::Zero(c.m);
      if (uncentered_ntk) n0_train = d.w2[p].transpose() * ftr.f / std::sqrt(c.n1);
      Eigen::RowVectorXd y_signal = ex.beta.transpose() * d.x[xb] / std::sqrt(c.n0);

      for (int eb = 0; eb < 2; ++eb) {
        int mask = (p ? kMaskP : 0) | (xb ? kMaskX : 0) | (eb ? kMaskEps : 0);
        Eigen::RowVectorXd y = y_signal + d.eps[eb].transpose();
        Eigen::VectorXd w = fk.solve((y - n0_train).transpose());
        out.predictions[mask] = (n0_query + w.transpose() * kx).transpose();
        if (!out.predictions[mask].allFinite())
          throw solver_error("run_replicate: non-finite predictions (try gamma=1e-6)", 0.0);
        if (mask == (kMaskP | kMaskX | kMaskEps))
          out.train_loss = c.gamma * c.gamma * w.squaredNorm() / c.m;
      }
    }
  }
  return out;
}

struct JackknifeStat {
  double value = 0.0;
  double std_error = 0.0;
};

namespace detail {

// Delete-one-replicate jackknife over precomputed leave-one-out values.
inline JackknifeStat jackknife_from_loo(double full, const std::vector<double>& loo) {
  const std::size_t r = loo.size();
  double mean = pairwise_sum(loo.data(), r) / static_cast<double>(r);
  double ss = 0.0;
  for (double v : loo) ss += (v - mean) * (v - mean);
  JackknifeStat s;
  s.value = full;
  s.std_error = std::sqrt(ss * (static_cast<double>(r) - 1.0) / static_cast<double>(r));
  return s;
}

}  // namespace detail

// Full Monte Carlo estimate of the coupling table and the derived statistics.
struct SimEstimates {
  HTable h{3};
  VarDecomp v{3};
  JackknifeStat bias;
  JackknifeStat total_variance;
  JackknifeStat e_test;
  JackknifeStat e_train;
  double plugin_total_variance = 0.0;  // per-point variance of base predictions
  int replicates = 0;
};

namespace detail {

// Shared aggregation for plain and ensemble estimation; consumes per-replicate
// mask predictions.
inline SimEstimates aggregate(const Experiment& ex,
                              const std::vector<ReplicateOutput>& reps) {
  const SimConfig& c = ex.config;
  const int r_count = static_cast<int>(reps.size());
  const int q = c.n_test;
  SimEstimates est;
  est.replicates = r_count;

  // per-replicate, per-mask means over test points of y_base * y_mask
  Eigen::MatrixXd h_rm(r_count, kNumMasks);
  for (int r = 0; r < r_count; ++r) {
    const auto& base = reps[r].predictions[kNumMasks - 1];
    for (int mask = 0; mask < kNumMasks; ++mask)
      h_rm(r, mask) = mean_of(base.cwiseProduct(reps[r].predictions[mask]));
  }

  for (int mask = 0; mask < kNumMasks; ++mask) {
    double full = pairwise_sum(h_rm.col(mask).data(), r_count) / r_count;
    std::vector<double> loo(r_count);
    for (int r = 0; r < r_count; ++r)
      loo[r] = (full * r_count - h_rm(r, mask)) / (r_count - 1);
    auto s = jackknife_from_loo(full, loo);
    est.h.values[mask] = s.value;
    est.h.std_errors[mask] = s.std_error;
  }

  // Moebius terms with exact delete-one jackknife (linear in the H entries)
  est.v = mobius_variance(est.h);
  for (SubsetIndex mask = 1; mask < est.v.size(); ++mask) {
    std::vector<double> loo(r_count);
    for (int r = 0; r < r_count; ++r) {
      double acc = 0.0;
      SubsetIndex j = mask;
      while (true) {
        double sign = ((popcount(mask) - popcount(j)) & 1) ? -1.0 : 1.0;
        double h_loo = (est.h.values[j] * r_count - h_rm(r, j)) / (r_count - 1);
        acc += sign * h_loo;
        if (j == 0) break;
        j = (j - 1) & mask;
      }
      loo[r] = acc;
    }
    est.v.std_errors[mask] = jackknife_from_loo(est.v.terms[mask], loo).std_error;
  }

  // base-prediction statistics per test point
  Eigen::MatrixXd base(r_count, q);
  for (int r = 0; r < r_count; ++r) base.row(r) = reps[r].predictions[kNumMasks - 1].transpose();
  Eigen::RowVectorXd col_sum = base.colwise().sum();
  Eigen::RowVectorXd col_sq = base.array().square().colwise().sum();
  const Eigen::RowVectorXd truth = ex.test_labels.transpose();

  auto bias_statistic = [&](int drop) {
    int n = drop < 0 ? r_count : r_count - 1;
    double acc = 0.0;
    for (int t = 0; t < q; ++t) {
      double s1 = col_sum[t] - (drop < 0 ? 0.0 : base(drop, t));
      double s2 = col_sq[t] - (drop < 0 ? 0.0 : base(drop, t) * base(drop, t));
      double mean = s1 / n;
      double var = (s2 - n * mean * mean) / (n - 1);
      double dev = mean - truth[t];
      acc += dev * dev - var / n;
    }
    return acc / q;
  };
  {
    std::vector<double> loo(r_count);
    for (int r = 0; r < r_count; ++r) loo[r] = bias_statistic(r);
    est.bias = detail::jackknife_from_loo(bias_statistic(-1), loo);
  }

  // total variance as H[111] - H[000]
  {
    std::vector<double> loo(r_count);
    int full_mask = kNumMasks - 1;
    for (int r = 0; r < r_count; ++r) {
      double h_full = (est.h.values[full_mask] * r_count - h_rm(r, full_mask)) / (r_count - 1);
      double h_zero = (est.h.values[0] * r_count - h_rm(r, 0)) / (r_count - 1);
      loo[r] = h_full - h_zero;
    }
    est.total_variance =
        jackknife_from_loo(est.h.values[full_mask] - est.h.values[0], loo);
  }

  // plug-in per-point variance of the base predictor (coupling sanity check)
  {
    double acc = 0.0;
    for (int t = 0; t < q; ++t) {
      double mean = col_sum[t] / r_count;
      acc += (col_sq[t] - r_count * mean * mean) / (r_count - 1);
    }
    est.plugin_total_variance = acc / q;
  }

  // test error against noiseless labels
  {
    std::vector<double> per_rep(r_count);
    for (int r = 0; r < r_count; ++r) {
      Eigen::RowVectorXd diff = base.row(r) - truth;
      per_rep[r] = diff.squaredNorm() / q;
    }
    double full = pairwise_sum(per_rep.data(), r_count) / r_count;
    std::vector<double> loo(r_count);
    for (int r = 0; r < r_count; ++r) loo[r] = (full * r_count - per_rep[r]) / (r_count - 1);
    est.e_test = jackknife_from_loo(full, loo);
  }

  // training loss of the base predictor
  {
    std::vector<double> per_rep(r_count);
    for (int r = 0; r < r_count; ++r) per_rep[r] = reps[r].train_loss;
    double full = pairwise_sum(per_rep.data(), r_count) / r_count;
    std::vector<double> loo(r_count);
    for (int r = 0; r < r_count; ++r) loo[r] = (full * r_count - per_rep[r]) / (r_count - 1);
    est.e_train = jackknife_from_loo(full, loo);
  }

  // unexplained remainder: plug-in total minus the explained total
  est.v.terms[0] = est.plugin_total_variance - (est.h.values[kNumMasks - 1] - est.h.values[0]);
  return est;
}

}  // namespace detail

// Estimate the full decomposition by the coupling construction.
inline SimEstimates estimate_decomposition(const Experiment& ex) {
  const SimConfig& c = ex.config;
  if (c.n_replicates < 8)
    throw invalid_argument("estimate_decomposition: need at least 8 replicates for the jackknife");
  const GaussianMoments moments = compute_moments(c.activation, 128);
  std::vector<ReplicateOutput> reps(c.n_replicates);
  detail::parallel_for(c.n_replicates,
                       [&](int r) { reps[r] = run_replicate(ex, r, moments); });
  return detail::aggregate(ex, reps);
}

}  // namespace fgdd
