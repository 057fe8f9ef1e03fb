#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "fgdd/anova.hpp"

using namespace fgdd;

namespace {

// Exact H table for Y = X1 + 2 X2 + X1 X2 with iid standard normal inputs
// (third variable unused): cross moments keep only matched shared terms.
HTable analytic_k3_table() {
  HTable h(3);
  for (SubsetIndex m = 0; m < 8; ++m) {
    bool s1 = m & 1, s2 = m & 2;
    h[m] = (s1 ? 1.0 : 0.0) + (s2 ? 4.0 : 0.0) + (s1 && s2 ? 1.0 : 0.0);
  }
  return h;
}

}  // namespace

TEST_CASE("k=2 inversion formula") {
  HTable h(2);
  h[0b00] = 0.3;
  h[0b01] = 1.1;
  h[0b10] = 0.9;
  h[0b11] = 2.5;
  auto v = mobius_variance(h);
  REQUIRE(v.terms[0b01] == Catch::Approx(h[0b01] - h[0b00]));
  REQUIRE(v.terms[0b10] == Catch::Approx(h[0b10] - h[0b00]));
  REQUIRE(v.terms[0b11] == Catch::Approx(h[0b11] - h[0b01] - h[0b10] + h[0b00]));
}

TEST_CASE("additive function has no interaction term") {
  // Y = X1 + X2: H00=0, H10=1, H01=1, H11=2
  HTable h(2);
  h[0b00] = 0.0;
  h[0b01] = 1.0;
  h[0b10] = 1.0;
  h[0b11] = 2.0;
  auto v = mobius_variance(h);
  REQUIRE(v.terms[0b01] == Catch::Approx(1.0));
  REQUIRE(v.terms[0b10] == Catch::Approx(1.0));
  REQUIRE(v.terms[0b11] == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(monotonicity_check(h).empty());
  REQUIRE(nonnegativity_check(v).empty());
}

TEST_CASE("analytic k=3 table inverts to the known variance split") {
  auto h = analytic_k3_table();
  auto v = mobius_variance(h);
  REQUIRE(v.terms[0b001] == Catch::Approx(1.0));   // X1 alone
  REQUIRE(v.terms[0b010] == Catch::Approx(4.0));   // X2 alone
  REQUIRE(v.terms[0b100] == Catch::Approx(0.0));   // X3 unused
  REQUIRE(v.terms[0b011] == Catch::Approx(1.0));   // X1 X2 interaction
  REQUIRE(v.terms[0b101] == Catch::Approx(0.0));
  REQUIRE(v.terms[0b110] == Catch::Approx(0.0));
  REQUIRE(v.terms[0b111] == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(subset_sum_check(v, h) < 1e-12);
}

TEST_CASE("subset-sum reconstruction is an exact inverse of the inversion") {
  std::mt19937_64 gen(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    HTable h(4);
    // random monotone table: cumulative sums along the subset lattice
    std::vector<double> bump(16);
    for (auto& b : bump) b = u(gen);
    for (SubsetIndex m = 0; m < 16; ++m) {
      double acc = 0.0;
      SubsetIndex j = m;
      while (true) {
        acc += bump[j];
        if (j == 0) break;
        j = (j - 1) & m;
      }
      h[m] = acc;
    }
    auto v = mobius_variance(h);
    REQUIRE(subset_sum_check(v, h) < 1e-12);
    REQUIRE(monotonicity_check(h).empty());
  }
}

TEST_CASE("perturbed decomposition fails the subset-sum check") {
  auto h = analytic_k3_table();
  auto v = mobius_variance(h);
  v.terms[0b010] += 0.1;
  REQUIRE(subset_sum_check(v, h) >= 0.1 - 1e-12);
}

TEST_CASE("corrupted table trips the monotonicity check") {
  HTable h(2);
  h[0b00] = 5.0;
  h[0b01] = 0.0;
  h[0b10] = 0.0;
  h[0b11] = 0.0;
  auto bad = monotonicity_check(h);
  REQUIRE(bad.size() == 3);  // 00 above each of 01, 10, 11
}

TEST_CASE("negative variance terms beyond the error band are reported") {
  HTable h(2);
  h[0b00] = 0.0;
  h[0b01] = 1.0;
  h[0b10] = 1.0;
  h[0b11] = 1.2;  // V11 = -0.8
  auto v = mobius_variance(h);
  auto bad = nonnegativity_check(v);
  REQUIRE(bad.size() == 1);
  REQUIRE(bad[0] == 0b11);
  // with generous errors the same table passes
  h.std_errors.assign(4, 0.5);
  auto v2 = mobius_variance(h);
  REQUIRE(nonnegativity_check(v2).empty());
}

TEST_CASE("permutation symmetry: relabeling variables permutes the decomposition") {
  auto h = analytic_k3_table();
  // swap variables 1 and 2 (bits 0 and 1)
  auto swap_bits = [](SubsetIndex m) {
    SubsetIndex b0 = m & 1, b1 = (m >> 1) & 1;
    return (m & ~3u) | (b0 << 1) | b1;
  };
  HTable hp(3);
  for (SubsetIndex m = 0; m < 8; ++m) hp[swap_bits(m)] = h[m];
  auto v = mobius_variance(h);
  auto vp = mobius_variance(hp);
  for (SubsetIndex m = 0; m < 8; ++m)
    REQUIRE(vp.terms[swap_bits(m)] == Catch::Approx(v.terms[m]).margin(1e-14));
}

TEST_CASE("missing entries and oversized tables are rejected") {
  HTable h(2);
  h[0] = h[1] = h[2] = 0.0;  // entry 3 missing
  REQUIRE_THROWS_AS(mobius_variance(h), invalid_argument);
  REQUIRE_THROWS_AS(HTable(17), invalid_argument);
}

TEST_CASE("error propagation is the conservative root-sum-square") {
  HTable h(2);
  h.values = {0.0, 1.0, 1.0, 2.0};
  h.std_errors = {0.1, 0.2, 0.3, 0.4};
  auto v = mobius_variance(h);
  REQUIRE(v.std_errors[0b11] ==
          Catch::Approx(std::sqrt(0.01 + 0.04 + 0.09 + 0.16)).epsilon(1e-12));
}

TEST_CASE("mask rendering places variable 0 first") {
  REQUIRE(mask_to_string(0b001, 3) == "100");
  REQUIRE(mask_to_string(0b110, 3) == "011");
  REQUIRE(mask_to_string(0b111, 3) == "111");
}
