#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rbfer/balance.hpp"
#include "rbfer/errors.hpp"
#include "rbfer/rng.hpp"

using namespace rbfer;

namespace {

// Independent oracle: explicit geometric-series sum 1 + beta + ... + beta^(n-1).
double effective_number_series(long n, double beta) {
  double sum = 0.0;
  double term = 1.0;
  for (long k = 0; k < n; ++k) {
    sum += term;
    term *= beta;
  }
  return sum;
}

}  // namespace

TEST_CASE("effective number matches the series oracle") {
  for (double beta : {0.5, 0.9, 0.99, 0.9999}) {
    for (long n = 1; n <= 1000; ++n) {
      const double got = effective_number(n, beta);
      const double want = effective_number_series(n, beta);
      CHECK(std::abs(got - want) <= 1e-10 * std::abs(want));
    }
  }
}

TEST_CASE("effective number basics") {
  CHECK(effective_number(1, 0.5) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(effective_number(1, 0.9999) == doctest::Approx(1.0).epsilon(1e-15));
  // 1 + 0.5 + 0.25
  CHECK(effective_number(3, 0.5) == doctest::Approx(1.75).epsilon(1e-12));
  // saturates at 1/(1-beta)
  CHECK(std::abs(effective_number(200, 0.9) - 10.0) < 1e-8);
  CHECK(effective_number(123, 0.0) == 1.0);
}

TEST_CASE("balance weight examples") {
  SUBCASE("single count of one is exactly 1") {
    const auto w = compute_balance_weights(std::vector<long>{1}, 0.9999);
    CHECK(w.raw[0] == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("count 2 at beta 0.5 gives 2/3") {
    const auto w = compute_balance_weights(std::vector<long>{2}, 0.5);
    CHECK(w.raw[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  }
  SUBCASE("beta 0 gives uniform raw weights") {
    const auto w = compute_balance_weights(std::vector<long>{1, 7, 5000}, 0.0);
    for (double r : w.raw) CHECK(r == 1.0);
  }
  SUBCASE("uniform counts normalize to ones") {
    const auto w =
        compute_balance_weights(std::vector<long>(7, 10), 0.9999);
    for (double v : w.normalized) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("raw weights are reciprocal effective numbers") {
  const std::vector<long> counts = {1, 3, 17, 256, 9999};
  for (double beta : {0.5, 0.9, 0.99, 0.9999}) {
    const auto w = compute_balance_weights(counts, beta);
    for (std::size_t l = 0; l < counts.size(); ++l) {
      CHECK(std::abs(w.raw[l] * effective_number(counts[l], beta) - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("raw weights lie in (1-beta, 1] and decrease with count") {
  // Strictness is only representable while beta^n stays above the double
  // epsilon; for larger n the weight saturates at exactly 1 - beta.
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const double beta = rng.uniform(0.9, 0.9999);
    std::vector<long> counts;
    for (int l = 0; l < 8; ++l) counts.push_back(1 + static_cast<long>(rng.below(300)));
    const auto w = compute_balance_weights(counts, beta);
    for (std::size_t l = 0; l < counts.size(); ++l) {
      CHECK(w.raw[l] > 1.0 - beta);
      CHECK(w.raw[l] <= 1.0);
      for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[l] < counts[k]) CHECK(w.raw[l] > w.raw[k]);
      }
    }
  }
  // Saturated regime keeps the closed bounds.
  const auto w = compute_balance_weights(std::vector<long>{1, 100000, 5000000}, 0.5);
  for (double r : w.raw) {
    CHECK(r >= 0.5);
    CHECK(r <= 1.0);
  }
}

TEST_CASE("normalized weights sum to L") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const int num_classes = 2 + static_cast<int>(rng.below(12));
    std::vector<long> counts;
    for (int l = 0; l < num_classes; ++l) {
      counts.push_back(1 + static_cast<long>(rng.below(100000)));
    }
    const auto w = compute_balance_weights(counts, 0.9999);
    const double sum = std::accumulate(w.normalized.begin(), w.normalized.end(), 0.0);
    CHECK(std::abs(sum - num_classes) <= 1e-9);
  }
}

TEST_CASE("permuting counts permutes weights identically") {
  const std::vector<long> counts = {700, 324, 150, 70, 32, 15, 7};
  std::vector<int> perm(counts.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(3);
  rng.shuffle(perm);

  std::vector<long> permuted(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    permuted[i] = counts[static_cast<std::size_t>(perm[i])];
  }
  const auto w = compute_balance_weights(counts, 0.9999);
  const auto wp = compute_balance_weights(permuted, 0.9999);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    CHECK(wp.raw[i] == w.raw[static_cast<std::size_t>(perm[i])]);
    CHECK(wp.normalized[i] == doctest::Approx(w.normalized[static_cast<std::size_t>(perm[i])])
                                  .epsilon(1e-14));
  }
}

TEST_CASE("numerical stability near beta = 1 with large counts") {
  // naive 1 - pow(beta, n) loses the significand here
  const auto w = compute_balance_weights(std::vector<long>{1000000, 1}, 0.9999);
  const double expect0 = 1e-4 / -std::expm1(1000000.0 * std::log1p(-1e-4));
  CHECK(w.raw[0] == doctest::Approx(expect0).epsilon(1e-12));
  CHECK(w.raw[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("domain errors") {
  CHECK_THROWS_AS(compute_balance_weights(std::vector<long>{3, 4}, 1.0), ConfigError);
  CHECK_THROWS_AS(compute_balance_weights(std::vector<long>{3, 4}, -0.1), ConfigError);
  CHECK_THROWS_AS(compute_balance_weights(std::vector<long>{3, 0}, 0.5), DataError);
  CHECK_THROWS_AS(effective_number(0, 0.5), DataError);
  CHECK_THROWS_AS(effective_number(5, 1.5), ConfigError);
}
