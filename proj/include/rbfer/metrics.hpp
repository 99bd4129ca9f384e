#pragma once

#include <string>
#include <vector>

namespace rbfer {

/// Per-class accuracy, overall (micro) accuracy, mean (macro) accuracy and
/// the confusion matrix. The mean accuracy is the unweighted average of
/// per-class accuracies; classes without evaluation samples are excluded
/// from the mean and listed in excluded_classes.
struct MetricsReport {
  int num_classes = 0;
  std::vector<double> per_class;
  double overall = 0.0;
  double mean = 0.0;
  std::vector<long> confusion;  // L x L row-major, rows = true class
  std::vector<int> excluded_classes;
  int epoch = -1;
  std::string split;

  long confusion_at(int truth, int predicted) const {
    return confusion[static_cast<std::size_t>(truth) * num_classes + predicted];
  }
};

MetricsReport compute_metrics(const std::vector<int>& labels,
                              const std::vector<int>& predictions,
                              int num_classes);

}  // namespace rbfer
