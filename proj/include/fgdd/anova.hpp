#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "fgdd/errors.hpp"

namespace fgdd {

// Mask convention: bit j set in a SubsetIndex means variable j is SHARED
// between the base draw and its coupled copy. The all-ones mask couples
// identical copies, all-zeros fully independent ones.
using SubsetIndex = std::uint32_t;

inline std::string mask_to_string(SubsetIndex mask, int k) {
  std::string s(k, '0');
  for (int j = 0; j < k; ++j)
    if (mask >> j & 1u) s[j] = '1';
  return s;
}

inline int popcount(SubsetIndex m) {
  int c = 0;
  for (; m; m &= m - 1) ++c;
  return c;
}

// Estimated coupling expectations H_i = E[h(X) h(X~) | B = i], one entry per
// subset of shared variables, with standard errors.
struct HTable {
  int k = 0;
  std::vector<double> values;      // size 2^k
  std::vector<double> std_errors;  // size 2^k (zeros for exact tables)

  explicit HTable(int k_ = 0)
      : k(k_),
        values(std::size_t(1) << k_, std::numeric_limits<double>::quiet_NaN()),
        std_errors(std::size_t(1) << k_, 0.0) {
    if (k_ < 0 || k_ > 16) throw invalid_argument("HTable: k must be in [0, 16]");
  }

  std::size_t size() const { return values.size(); }
  double& operator[](SubsetIndex m) { return values[m]; }
  double operator[](SubsetIndex m) const { return values[m]; }

  void require_complete() const {
    for (SubsetIndex m = 0; m < size(); ++m)
      if (!std::isfinite(values[m]))
        throw invalid_argument("HTable: missing entry for mask " + mask_to_string(m, k));
  }
};

// The symmetric variance decomposition: one term per nonempty subset, plus the
// unexplained remainder in slot 0 (zero when the table fully explains Y).
struct VarDecomp {
  int k = 0;
  std::vector<double> terms;       // size 2^k; index 0 holds V_empty
  std::vector<double> std_errors;  // size 2^k

  explicit VarDecomp(int k_ = 0)
      : k(k_), terms(std::size_t(1) << k_, 0.0), std_errors(std::size_t(1) << k_, 0.0) {}

  std::size_t size() const { return terms.size(); }
  double explained_total() const {
    double t = 0.0;
    for (SubsetIndex m = 1; m < size(); ++m) t += terms[m];
    return t;
  }
};

// Moebius inversion of the H table: V_i = sum_{j <= i} (-1)^{|i|-|j|} H_j.
// Standard errors use the conservative uncorrelated bound
// se(V_i) = sqrt(sum_{j <= i} se(H_j)^2).
inline VarDecomp mobius_variance(const HTable& h) {
  h.require_complete();
  VarDecomp v(h.k);
  for (SubsetIndex i = 1; i < h.size(); ++i) {
    int ni = popcount(i);
    double acc = 0.0, var = 0.0;
    SubsetIndex j = i;
    while (true) {
      double sign = ((ni - popcount(j)) & 1) ? -1.0 : 1.0;
      acc += sign * h.values[j];
      var += h.std_errors[j] * h.std_errors[j];
      if (j == 0) break;
      j = (j - 1) & i;
    }
    v.terms[i] = acc;
    v.std_errors[i] = std::sqrt(var);
  }
  return v;
}

// Max over S of | sum_{s <= S} V_s - (H_S - H_0) |; the inversion identity
// makes this vanish up to roundoff.
inline double subset_sum_check(const VarDecomp& v, const HTable& h) {
  if (v.k != h.k) throw invalid_argument("subset_sum_check: mismatched k");
  h.require_complete();
  double worst = 0.0;
  for (SubsetIndex s = 0; s < h.size(); ++s) {
    double acc = 0.0;
    SubsetIndex j = s;
    while (true) {
      acc += v.terms[j];
      if (j == 0) break;
      j = (j - 1) & s;
    }
    worst = std::max(worst, std::abs(acc - (h.values[s] - h.values[0])));
  }
  return worst;
}

// Pairs (subset, superset) violating the partial-order monotonicity of H
// beyond 3 combined standard errors.
inline std::vector<std::pair<SubsetIndex, SubsetIndex>> monotonicity_check(const HTable& h) {
  h.require_complete();
  std::vector<std::pair<SubsetIndex, SubsetIndex>> bad;
  for (SubsetIndex sup = 0; sup < h.size(); ++sup) {
    SubsetIndex j = sup;
    while (j != 0) {
      j = (j - 1) & sup;
      double band = 3.0 * std::sqrt(h.std_errors[j] * h.std_errors[j] +
                                    h.std_errors[sup] * h.std_errors[sup]);
      if (h.values[j] > h.values[sup] + band) bad.emplace_back(j, sup);
      if (j == 0) break;
    }
  }
  return bad;
}

// Subsets whose variance term is negative beyond 3 standard errors.
inline std::vector<SubsetIndex> nonnegativity_check(const VarDecomp& v) {
  std::vector<SubsetIndex> bad;
  for (SubsetIndex m = 1; m < v.size(); ++m)
    if (v.terms[m] < -3.0 * v.std_errors[m]) bad.push_back(m);
  return bad;
}

}  // namespace fgdd
