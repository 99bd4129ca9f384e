#include "rbfer/imbalance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <set>
#include <string>

#include "rbfer/errors.hpp"
#include "rbfer/rng.hpp"

namespace rbfer {

std::vector<long> DatasetManifest::class_counts() const {
  std::vector<long> counts(class_names.size(), 0);
  for (const auto& r : records) counts[static_cast<std::size_t>(r.label)]++;
  return counts;
}

ClassCounts DatasetManifest::counts() const {
  ClassCounts cc;
  cc.counts = class_counts();
  cc.class_names = class_names;
  return cc;
}

void DatasetManifest::sort_records() {
  std::sort(records.begin(), records.end(),
            [](const ManifestRecord& a, const ManifestRecord& b) {
              if (a.path != b.path) return a.path < b.path;
              return a.label < b.label;
            });
}

void DatasetManifest::validate() const {
  if (class_names.size() < 2) {
    throw DataError("manifest needs at least 2 classes");
  }
  if (records.empty()) throw DataError("manifest has no samples");
  const int l = num_classes();
  std::set<std::string> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.label < 0 || r.label >= l) {
      throw DataError("record " + std::to_string(i) + " ('" + r.path +
                      "') has label " + std::to_string(r.label) +
                      " outside [0, " + std::to_string(l) + ")");
    }
    if (!seen.insert(r.path).second) {
      throw DataError("duplicate path '" + r.path + "'");
    }
  }
}

namespace {

// Class indices by descending count, ties broken by class index.
std::vector<int> descending_order(const std::vector<long>& counts) {
  std::vector<int> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return counts[static_cast<std::size_t>(a)] >
           counts[static_cast<std::size_t>(b)];
  });
  return order;
}

}  // namespace

double solve_mu(const std::vector<long>& original_counts, double target_if) {
  const std::size_t l = original_counts.size();
  if (l < 2) throw DataError("solve_mu requires at least 2 classes");
  for (long c : original_counts) {
    if (c < 1) throw DataError("solve_mu: every class needs >= 1 sample");
  }
  const auto order = descending_order(original_counts);
  const double n_first =
      static_cast<double>(original_counts[static_cast<std::size_t>(order.front())]);
  const double n_last =
      static_cast<double>(original_counts[static_cast<std::size_t>(order.back())]);
  const double existing = n_first / n_last;
  if (!(target_if > existing)) {
    throw ConfigError(
        "imbalance factor " + std::to_string(target_if) +
        " does not exceed the existing max/min ratio " +
        std::to_string(existing) + "; mu would not lie in (0, 1)");
  }
  const double mu = std::pow(n_first / (n_last * target_if),
                             1.0 / static_cast<double>(l - 1));
  return mu;
}

ImbalanceSpec make_imbalance_spec(const DatasetManifest& manifest,
                                  double target_if, std::uint64_t seed) {
  manifest.validate();
  const auto counts = manifest.class_counts();
  ImbalanceSpec spec;
  spec.imbalance_factor = target_if;
  spec.mu = solve_mu(counts, target_if);
  spec.class_order = descending_order(counts);
  spec.seed = seed;
  return spec;
}

DatasetManifest subsample_exponential(const DatasetManifest& manifest,
                                      const ImbalanceSpec& spec) {
  manifest.validate();
  const auto counts = manifest.class_counts();
  const int l = manifest.num_classes();
  if (static_cast<int>(spec.class_order.size()) != l) {
    throw ConfigError("imbalance spec order does not match manifest classes");
  }
  {
    std::vector<bool> seen(static_cast<std::size_t>(l), false);
    for (int c : spec.class_order) {
      if (c < 0 || c >= l || seen[static_cast<std::size_t>(c)]) {
        throw ConfigError("imbalance spec class_order is not a permutation");
      }
      seen[static_cast<std::size_t>(c)] = true;
    }
  }
  if (!(spec.mu > 0.0 && spec.mu < 1.0)) {
    throw ConfigError("imbalance spec mu must lie in (0, 1)");
  }

  // Per-class record indices in manifest order.
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(l));
  for (int i = 0; i < static_cast<int>(manifest.records.size()); ++i) {
    by_class[static_cast<std::size_t>(manifest.records[static_cast<std::size_t>(i)].label)]
        .push_back(i);
  }

  std::vector<bool> keep(manifest.records.size(), false);
  for (int rank = 0; rank < l; ++rank) {
    const int cls = spec.class_order[static_cast<std::size_t>(rank)];
    const long original = counts[static_cast<std::size_t>(cls)];
    const double target = static_cast<double>(original) *
                          std::pow(spec.mu, static_cast<double>(rank));
    long kept = static_cast<long>(std::floor(target));
    if (kept < 1) {
      std::cerr << "warning: class " << manifest.class_names[static_cast<std::size_t>(cls)]
                << " would fall to " << kept << " samples; clamping to 1\n";
      kept = 1;
    }
    auto& pool = by_class[static_cast<std::size_t>(cls)];
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(cls)));
    rng.shuffle(pool);
    std::sort(pool.begin(), pool.begin() + kept);
    for (long k = 0; k < kept; ++k) keep[static_cast<std::size_t>(pool[static_cast<std::size_t>(k)])] = true;
  }

  DatasetManifest out;
  out.class_names = manifest.class_names;
  out.split = manifest.split;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (keep[i]) out.records.push_back(manifest.records[i]);
  }
  return out;
}

std::vector<double> SyntheticSpec::default_overlap(int num_classes) {
  std::vector<double> m(static_cast<std::size_t>(num_classes) * num_classes, 0.0);
  for (int i = 0; i < num_classes; ++i)
    m[static_cast<std::size_t>(i) * num_classes + i] = 1.0;
  auto pair = [&](int a, int b, double v) {
    if (a < num_classes && b < num_classes) {
      m[static_cast<std::size_t>(a) * num_classes + b] = v;
      m[static_cast<std::size_t>(b) * num_classes + a] = v;
    }
  };
  pair(3, 4, 0.5);
  pair(5, 6, 0.5);
  return m;
}

int SyntheticSpec::test_per_class() const {
  return std::max(20, per_class_base / 4);
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic spec needs >= 2 classes");
  if (image_size < 16) {
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " too small to place templates (minimum 16)");
  }
  if (per_class_base < 1) throw ConfigError("per_class_base must be >= 1");
  if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
  if (!feature_overlap.empty()) {
    const std::size_t expect =
        static_cast<std::size_t>(num_classes) * num_classes;
    if (feature_overlap.size() != expect) {
      throw ConfigError("feature_overlap must be L x L");
    }
    for (int a = 0; a < num_classes; ++a) {
      for (int b = 0; b < num_classes; ++b) {
        const double v =
            feature_overlap[static_cast<std::size_t>(a) * num_classes + b];
        if (a == b && v != 1.0) {
          throw ConfigError("feature_overlap diagonal must be 1");
        }
        if (a != b && !(v >= 0.0 && v < 1.0)) {
          throw ConfigError("feature_overlap off-diagonal must lie in [0, 1)");
        }
      }
    }
  }
}

namespace {

struct TemplateLayout {
  int grid = 0;        // anchors on a grid x grid lattice
  int cell = 0;        // lattice cell size in pixels
  int stamp = 0;       // stamp side length (odd)
  int jitter = 0;      // max absolute placement jitter
};

TemplateLayout make_layout(int num_classes, int image_size) {
  TemplateLayout lay;
  lay.grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(num_classes))));
  lay.cell = image_size / lay.grid;
  lay.stamp = std::max(3, (lay.cell / 2) | 1);
  lay.jitter = std::max(1, std::min((lay.cell - lay.stamp) / 2, image_size / 16));
  if (lay.stamp + 2 * lay.jitter > lay.cell) {
    lay.jitter = std::max(0, (lay.cell - lay.stamp) / 2);
  }
  return lay;
}

// Normalized stamp value at (r, c); the pattern family cycles by class.
double stamp_value(int kind, int r, int c, int side) {
  const double ctr = (side - 1) / 2.0;
  const double nr = ctr > 0 ? (r - ctr) / ctr : 0.0;
  const double nc = ctr > 0 ? (c - ctr) / ctr : 0.0;
  switch (kind % 7) {
    case 0:
      return std::exp(-2.5 * (nr * nr + nc * nc));
    case 1:
      return std::abs(nr) <= 0.34 ? 1.0 : 0.0;
    case 2:
      return std::abs(nc) <= 0.34 ? 1.0 : 0.0;
    case 3:
      return (std::abs(nr) <= 0.34 || std::abs(nc) <= 0.34) ? 1.0 : 0.0;
    case 4:
      return std::abs(nr - nc) <= 0.4 ? 1.0 : 0.0;
    case 5: {
      const double rad = std::sqrt(nr * nr + nc * nc);
      return (rad >= 0.45 && rad <= 0.95) ? 1.0 : 0.0;
    }
    default: {
      const int block = std::max(1, side / 3);
      return ((r / block + c / block) % 2 == 0) ? 1.0 : 0.0;
    }
  }
}

void add_stamp(std::vector<double>& canvas, int image_size, int kind,
               int anchor_row, int anchor_col, int side, double amplitude) {
  const int half = side / 2;
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const int y = anchor_row - half + r;
      const int x = anchor_col - half + c;
      if (y < 0 || y >= image_size || x < 0 || x >= image_size) continue;
      canvas[static_cast<std::size_t>(y) * image_size + x] +=
          amplitude * stamp_value(kind, r, c, side);
    }
  }
}

void render_sample(const SyntheticSpec& spec, const std::vector<double>& overlap,
                   const TemplateLayout& lay, int cls, Rng& rng,
                   std::uint8_t* out) {
  const int s = spec.image_size;
  std::vector<double> canvas(static_cast<std::size_t>(s) * s, 0.1);

  auto place = [&](int stamp_class, double amplitude) {
    const int gx = stamp_class % lay.grid;
    const int gy = stamp_class / lay.grid;
    const int jr = static_cast<int>(rng.below(2 * lay.jitter + 1)) - lay.jitter;
    const int jc = static_cast<int>(rng.below(2 * lay.jitter + 1)) - lay.jitter;
    const int row = gy * lay.cell + lay.cell / 2 + jr;
    const int col = gx * lay.cell + lay.cell / 2 + jc;
    add_stamp(canvas, s, stamp_class, row, col, lay.stamp, amplitude);
  };

  place(cls, rng.uniform(0.55, 0.95));
  for (int b = 0; b < spec.num_classes; ++b) {
    if (b == cls) continue;
    const double ov = overlap[static_cast<std::size_t>(cls) * spec.num_classes + b];
    if (ov > 0.0) place(b, ov * rng.uniform(0.55, 0.95));
  }
  if (spec.noise_std > 0.0) {
    for (double& v : canvas) v += rng.normal(0.0, spec.noise_std);
  }
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, canvas[i]));
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
}

Dataset generate_split(const SyntheticSpec& spec,
                       const std::vector<double>& overlap,
                       const TemplateLayout& lay, const std::string& split,
                       int per_class, std::uint64_t split_tag) {
  Dataset ds;
  ds.manifest.split = split;
  for (int l = 0; l < spec.num_classes; ++l) {
    ds.manifest.class_names.push_back("class_" + std::to_string(l));
  }
  ds.images.channels = 1;
  ds.images.height = spec.image_size;
  ds.images.width = spec.image_size;
  const std::size_t per_image =
      static_cast<std::size_t>(spec.image_size) * spec.image_size;
  ds.images.pixels.resize(per_image * static_cast<std::size_t>(spec.num_classes) *
                          per_class);

  int index = 0;
  char id[32];
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    for (int k = 0; k < per_class; ++k, ++index) {
      const std::uint64_t stream = (split_tag << 40) |
                                   (static_cast<std::uint64_t>(cls) << 24) |
                                   static_cast<std::uint64_t>(k);
      Rng rng(mix_seed(spec.seed, stream));
      render_sample(spec, overlap, lay, cls, rng,
                    ds.images.pixels.data() + per_image * static_cast<std::size_t>(index));
      std::snprintf(id, sizeof(id), "pack:%06d", index);
      ds.manifest.records.push_back({id, cls});
    }
  }
  ds.manifest.sort_records();
  return ds;
}

}  // namespace

std::pair<Dataset, Dataset> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::vector<double> overlap =
      spec.feature_overlap.empty() ? SyntheticSpec::default_overlap(spec.num_classes)
                                   : spec.feature_overlap;
  const TemplateLayout lay = make_layout(spec.num_classes, spec.image_size);

  Dataset train = generate_split(spec, overlap, lay, "train",
                                 spec.per_class_base, 1);
  Dataset test = generate_split(spec, overlap, lay, "test",
                                spec.test_per_class(), 2);
  return {std::move(train), std::move(test)};
}

}  // namespace rbfer
