#include <doctest.h>

#include "planfill/patterns.hpp"

using namespace planfill;

TEST_SUITE_BEGIN("patterns");

TEST_CASE("full-MDM count equals nonempty subsets") {
  CHECK(count_masking_patterns(4, 1, MaskScheme::full_mdm) == 15);
  CHECK(enumerate_patterns(4, 1, MaskScheme::full_mdm) == 15);
  CHECK(count_masking_patterns(2, 1, MaskScheme::full_mdm) == 3);
  CHECK(enumerate_patterns(2, 1, MaskScheme::full_mdm) == 3);
}

TEST_CASE("block scheme count") {
  CHECK(count_masking_patterns(6, 3, MaskScheme::block) == 16);
  CHECK(enumerate_patterns(6, 3, MaskScheme::block) == 16);
}

TEST_CASE("slot scheme worked examples") {
  // L/k = 4: 4*1! + 6*2! + 4*3! + 1*4! = 64
  CHECK(count_masking_patterns(8, 2, MaskScheme::slot) == 64);
  CHECK(enumerate_patterns(8, 2, MaskScheme::slot) == 64);
  // single slot, single state
  CHECK(count_masking_patterns(6, 6, MaskScheme::slot) == 1);
  CHECK(enumerate_patterns(6, 6, MaskScheme::slot) == 1);
}

TEST_CASE("formula matches enumeration everywhere admissible") {
  for (int L = 1; L <= 14; ++L) {
    CHECK(count_masking_patterns(L, 1, MaskScheme::full_mdm) ==
          enumerate_patterns(L, 1, MaskScheme::full_mdm));
    for (int k = 1; k <= L; ++k) {
      if (L % k != 0) continue;
      CHECK(count_masking_patterns(L, k, MaskScheme::block) ==
            enumerate_patterns(L, k, MaskScheme::block));
      if (L / k <= 7) {
        CHECK(count_masking_patterns(L, k, MaskScheme::slot) ==
              enumerate_patterns(L, k, MaskScheme::slot));
      }
    }
  }
}

TEST_CASE("floor(n! e) - 1 identity, exact integers") {
  for (int n = 1; n <= 12; ++n) {
    std::uint64_t rhs = 0;
    for (int i = 1; i <= n; ++i) rhs += binomial(n, i) * factorial(i);
    CHECK(floor_n_factorial_e(n) - 1 == rhs);
  }
  // spot values: floor(1!e)=2, floor(2!e)=5, floor(3!e)=16, floor(4!e)=65
  CHECK(floor_n_factorial_e(1) == 2);
  CHECK(floor_n_factorial_e(2) == 5);
  CHECK(floor_n_factorial_e(3) == 16);
  CHECK(floor_n_factorial_e(4) == 65);
}

TEST_CASE("argument errors") {
  CHECK_THROWS_AS(count_masking_patterns(6, 4, MaskScheme::block), std::invalid_argument);
  CHECK_THROWS_AS(count_masking_patterns(6, 0, MaskScheme::slot), std::invalid_argument);
  CHECK_THROWS_AS(enumerate_patterns(16, 2, MaskScheme::slot), std::invalid_argument);
  CHECK_THROWS_AS(enumerate_patterns(15, 1, MaskScheme::full_mdm), std::invalid_argument);
}

TEST_SUITE_END();
