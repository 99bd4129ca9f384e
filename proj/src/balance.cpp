#include "rbfer/balance.hpp"

#include <cmath>
#include <string>

#include "rbfer/errors.hpp"

namespace rbfer {

ClassCounts ClassCounts::from_counts(std::vector<long> counts) {
  ClassCounts cc;
  cc.counts = std::move(counts);
  cc.class_names.reserve(cc.counts.size());
  for (std::size_t l = 0; l < cc.counts.size(); ++l) {
    cc.class_names.push_back("class_" + std::to_string(l));
  }
  return cc;
}

namespace {

void check_beta(double beta) {
  if (!(beta >= 0.0) || beta >= 1.0) {
    throw ConfigError("beta must lie in [0, 1), got " + std::to_string(beta));
  }
}

// 1 - beta^n, evaluated in log space so beta close to 1 with large n does
// not underflow the significand of the naive power.
double one_minus_beta_pow(long n, double beta) {
  if (beta == 0.0) return 1.0;
  return -std::expm1(static_cast<double>(n) * std::log(beta));
}

}  // namespace

double effective_number(long n, double beta) {
  check_beta(beta);
  if (n < 1) {
    throw DataError("effective_number requires n >= 1, got " +
                    std::to_string(n));
  }
  if (beta == 0.0) return 1.0;
  return one_minus_beta_pow(n, beta) / (1.0 - beta);
}

BalanceWeights compute_balance_weights(const std::vector<long>& counts,
                                       double beta) {
  check_beta(beta);
  if (counts.empty()) throw DataError("empty class count vector");

  BalanceWeights w;
  w.beta = beta;
  w.raw.reserve(counts.size());
  double sum = 0.0;
  for (std::size_t l = 0; l < counts.size(); ++l) {
    if (counts[l] < 1) {
      throw DataError("class " + std::to_string(l) +
                      " has no training samples (count " +
                      std::to_string(counts[l]) + ")");
    }
    const double raw = (1.0 - beta) / one_minus_beta_pow(counts[l], beta);
    w.raw.push_back(raw);
    sum += raw;
  }
  const double scale = static_cast<double>(counts.size()) / sum;
  w.normalized.reserve(counts.size());
  for (double raw : w.raw) w.normalized.push_back(raw * scale);
  return w;
}

}  // namespace rbfer
