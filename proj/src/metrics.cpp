#include "rbfer/metrics.hpp"

#include <stdexcept>
#include <string>

namespace rbfer {

MetricsReport compute_metrics(const std::vector<int>& labels,
                              const std::vector<int>& predictions,
                              int num_classes) {
  if (labels.size() != predictions.size()) {
    throw std::invalid_argument("labels/predictions length mismatch");
  }
  if (labels.empty()) throw std::invalid_argument("no samples to score");

  MetricsReport r;
  r.num_classes = num_classes;
  r.confusion.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes) {
      throw std::invalid_argument("class index outside [0, L)");
    }
    r.confusion[static_cast<std::size_t>(t) * num_classes + p]++;
  }

  long correct = 0;
  double mean_sum = 0.0;
  int mean_count = 0;
  r.per_class.assign(static_cast<std::size_t>(num_classes), 0.0);
  for (int l = 0; l < num_classes; ++l) {
    long row = 0;
    for (int p = 0; p < num_classes; ++p) row += r.confusion_at(l, p);
    const long diag = r.confusion_at(l, l);
    correct += diag;
    if (row == 0) {
      r.excluded_classes.push_back(l);
      continue;
    }
    r.per_class[static_cast<std::size_t>(l)] =
        static_cast<double>(diag) / static_cast<double>(row);
    mean_sum += r.per_class[static_cast<std::size_t>(l)];
    ++mean_count;
  }
  r.overall = static_cast<double>(correct) / static_cast<double>(labels.size());
  r.mean = mean_count > 0 ? mean_sum / mean_count : 0.0;
  return r;
}

}  // namespace rbfer
