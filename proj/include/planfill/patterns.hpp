#ifndef PLANFILL_PATTERNS_HPP
#define PLANFILL_PATTERNS_HPP

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace planfill {

// Counting of the distinct visible-context configurations each masking scheme
// exposes during training, per generation unit:
//   full_mdm — token-level masking, any nonempty masked subset of L tokens.
//   block    — left-to-right blocks of k tokens; per state: the active block
//              index plus an arbitrary intra-block mask subset.
//   slot     — slots of k tokens; per state: an ordered arrangement of the
//              clean slots (masked slots keep their relative order).
enum class MaskScheme { full_mdm, block, slot };

inline std::uint64_t binomial(int n, int r) {
  if (r < 0 || r > n) return 0;
  r = std::min(r, n - r);
  std::uint64_t acc = 1;
  for (int i = 1; i <= r; ++i) {
    acc = acc * static_cast<std::uint64_t>(n - r + i) / static_cast<std::uint64_t>(i);
  }
  return acc;
}

inline std::uint64_t factorial(int n) {
  std::uint64_t acc = 1;
  for (int i = 2; i <= n; ++i) acc *= static_cast<std::uint64_t>(i);
  return acc;
}

// floor(n! * e) computed exactly: n!*e = sum_{m>=0} n!/m!, and for n >= 1 the
// fractional tail sum_{m>n} n!/m! is strictly below 1.
inline std::uint64_t floor_n_factorial_e(int n) {
  if (n < 1) throw std::invalid_argument("floor_n_factorial_e: n must be >= 1");
  std::uint64_t acc = 0;
  std::uint64_t term = factorial(n);  // n!/0!
  acc += term;
  for (int m = 1; m <= n; ++m) {
    term /= static_cast<std::uint64_t>(m);  // n!/m!, exact at every step
    acc += term;
  }
  return acc;
}

inline void check_divisible(int L, int k) {
  if (k <= 0) throw std::invalid_argument("pattern count: k must be positive");
  if (L <= 0) throw std::invalid_argument("pattern count: L must be positive");
  if (L % k != 0) throw std::invalid_argument("pattern count: k must divide L");
}

inline std::uint64_t count_masking_patterns(int L, int k, MaskScheme scheme) {
  switch (scheme) {
    case MaskScheme::full_mdm: {
      if (L <= 0 || L >= 63) throw std::invalid_argument("pattern count: L out of range");
      std::uint64_t acc = 0;
      for (int l = 1; l <= L; ++l) acc += binomial(L, l);
      return acc;  // == 2^L - 1
    }
    case MaskScheme::block: {
      check_divisible(L, k);
      if (k >= 63) throw std::invalid_argument("pattern count: k out of range");
      return (std::uint64_t{1} << k) * static_cast<std::uint64_t>(L / k);
    }
    case MaskScheme::slot: {
      check_divisible(L, k);
      const int n = L / k;
      if (n > 20) throw std::invalid_argument("pattern count: L/k out of range");
      // sum_{i=1..n} C(n,i) * i!  ==  floor(n! * e) - 1
      std::uint64_t acc = 0;
      for (int i = 1; i <= n; ++i) acc += binomial(n, i) * factorial(i);
      return acc;
    }
  }
  throw std::invalid_argument("pattern count: unknown scheme");
}

// Brute-force oracle for count_masking_patterns, feasible for L <= 14 and
// L/k <= 7. States are enumerated explicitly and counted.
inline std::uint64_t enumerate_patterns(int L, int k, MaskScheme scheme) {
  switch (scheme) {
    case MaskScheme::full_mdm: {
      if (L <= 0 || L > 14) throw std::invalid_argument("enumerate: L out of bounds");
      std::uint64_t count = 0;
      for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << L); ++mask) ++count;
      return count;
    }
    case MaskScheme::block: {
      check_divisible(L, k);
      if (L > 14) throw std::invalid_argument("enumerate: L out of bounds");
      // One state per (active block, intra-block mask subset); earlier blocks
      // are clean, later blocks fully masked.
      std::uint64_t count = 0;
      for (int active = 0; active < L / k; ++active) {
        for (std::uint64_t sub = 0; sub < (std::uint64_t{1} << k); ++sub) ++count;
      }
      return count;
    }
    case MaskScheme::slot: {
      check_divisible(L, k);
      const int n = L / k;
      if (n > 7) throw std::invalid_argument("enumerate: L/k out of bounds");
      // One state per ordered arrangement of a nonempty clean-slot subset; the
      // masked complement keeps its positional order, so it adds no freedom.
      std::uint64_t count = 0;
      for (std::uint64_t subset = 1; subset < (std::uint64_t{1} << n); ++subset) {
        std::vector<int> members;
        for (int i = 0; i < n; ++i) {
          if (subset & (std::uint64_t{1} << i)) members.push_back(i);
        }
        std::sort(members.begin(), members.end());
        do {
          ++count;
        } while (std::next_permutation(members.begin(), members.end()));
      }
      return count;
    }
  }
  throw std::invalid_argument("enumerate: unknown scheme");
}

}  // namespace planfill

#endif  // PLANFILL_PATTERNS_HPP
