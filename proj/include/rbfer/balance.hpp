#pragma once

#include <string>
#include <vector>

namespace rbfer {

/// Per-class training sample counts.
struct ClassCounts {
  std::vector<long> counts;
  std::vector<std::string> class_names;

  static ClassCounts from_counts(std::vector<long> counts);
  int num_classes() const { return static_cast<int>(counts.size()); }
};

/// Class-balance weights derived from effective sample numbers.
///
/// raw[l] = (1 - beta) / (1 - beta^n_l); normalized rescales raw so the
/// weights sum to the class count L. Downstream consumers (attention
/// re-balancing and smooth labels) use the normalized form.
struct BalanceWeights {
  double beta = 0.0;
  std::vector<double> raw;
  std::vector<double> normalized;

  int num_classes() const { return static_cast<int>(raw.size()); }
};

/// Effective number of samples: (1 - beta^n) / (1 - beta), i.e. the
/// geometric series 1 + beta + ... + beta^(n-1).
///
/// Throws ConfigError for beta outside [0, 1) and DataError for n < 1.
double effective_number(long n, double beta);

BalanceWeights compute_balance_weights(const std::vector<long>& counts,
                                       double beta);
inline BalanceWeights compute_balance_weights(const ClassCounts& counts,
                                              double beta) {
  return compute_balance_weights(counts.counts, beta);
}

}  // namespace rbfer
