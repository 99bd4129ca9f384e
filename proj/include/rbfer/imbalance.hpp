#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rbfer/balance.hpp"

namespace rbfer {

struct ManifestRecord {
  std::string path;
  int label = 0;
};

/// Ordered list of (sample path or inline id, label). Records are kept
/// sorted by (path, label) so every derived artifact is deterministic.
struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> class_names;
  std::string split;  // "train" or "test"

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::vector<long> class_counts() const;
  ClassCounts counts() const;
  void sort_records();
  void validate() const;
};

/// Exponential-decay subsampling recipe. Classes are processed in
/// descending original-count order (ties by class index); order-index l
/// keeps floor(n_l * mu^l) samples.
struct ImbalanceSpec {
  double imbalance_factor = 1.0;  // largest kept count / smallest kept count
  double mu = 1.0;                // decay base in (0, 1)
  std::vector<int> class_order;   // classes by descending original count
  std::uint64_t seed = 0;
};

/// Decay base for a requested imbalance factor:
/// mu = (n_0 / (n_{L-1} * IF))^(1/(L-1)) over descending ordered counts.
/// Rejects targets at or below the existing max/min ratio.
double solve_mu(const std::vector<long>& original_counts, double target_if);

ImbalanceSpec make_imbalance_spec(const DatasetManifest& manifest,
                                  double target_if, std::uint64_t seed);

/// Keeps a seeded uniform subset of each class; kept counts follow the
/// exponential decay with a floor of one sample per class (clamping emits a
/// warning on stderr). Output record order matches the input order.
DatasetManifest subsample_exponential(const DatasetManifest& manifest,
                                      const ImbalanceSpec& spec);

/// Grayscale images packed row-major, one byte per pixel.
struct PixelStore {
  int channels = 1;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  int count() const {
    const std::size_t per = static_cast<std::size_t>(channels) * height * width;
    return per == 0 ? 0 : static_cast<int>(pixels.size() / per);
  }
  const std::uint8_t* image(int index) const {
    return pixels.data() +
           static_cast<std::size_t>(index) * channels * height * width;
  }
};

struct Dataset {
  DatasetManifest manifest;
  PixelStore images;
};

/// Recipe for the synthetic desk-scale dataset. Each class has a localized
/// template pattern at a class-specific region; feature_overlap(a,b) > 0
/// adds class b's pattern to class a's samples at reduced contrast.
struct SyntheticSpec {
  int num_classes = 7;
  int image_size = 32;
  int per_class_base = 300;           // train samples per class before subsampling
  std::vector<double> feature_overlap;  // L x L row-major; empty = default pairs
  double noise_std = 0.3;
  std::uint64_t seed = 0;

  /// Diagonal ones plus the default shared pairs (3,4) and (5,6) at 0.5.
  static std::vector<double> default_overlap(int num_classes);
  int test_per_class() const;  // balanced test split size per class
  void validate() const;
};

/// Deterministically generates (train, test) datasets. The train split has
/// per_class_base samples per class; the test split is class-balanced.
std::pair<Dataset, Dataset> generate_synthetic(const SyntheticSpec& spec);

}  // namespace rbfer
