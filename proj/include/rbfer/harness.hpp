#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "rbfer/attention.hpp"
#include "rbfer/checkpoint.hpp"
#include "rbfer/imbalance.hpp"
#include "rbfer/losses.hpp"
#include "rbfer/metrics.hpp"
#include "rbfer/model.hpp"
#include "rbfer/transforms.hpp"

namespace rbfer {

struct TrainConfig {
  double lambda = 2.0;
  double alpha = 0.1;
  double beta = 0.9999;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double lr_decay_per_epoch = 0.9;
  int max_epochs = 30;  // desk-scale default; the reference schedule is 60
  int batch_size = 64;
  std::uint64_t seed = 0;
  bool enable_rac = true;
  bool enable_rsl = true;
  TransformKind transform = TransformKind::kFlip;
  ConsistencyDistance consistency_distance = ConsistencyDistance::kSquared;
  BackboneConfig backbone;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochLoss {
  double cls = 0.0;
  double cons = 0.0;
  double total = 0.0;
};

struct TrainResult {
  std::unique_ptr<Model> model;
  CheckpointMeta meta;
  std::vector<MetricsReport> epoch_reports;
  MetricsReport final_report;  // last epoch (primary), best kept alongside
  MetricsReport best_report;
  int best_epoch = -1;
  std::vector<EpochLoss> loss_trace;
};

/// Total objective on one batch: dual-view classification loss (smooth
/// labels when enable_rsl) plus lambda times the re-balanced attention
/// consistency loss when enable_rac (lambda forced to 0 otherwise). With
/// accumulate_grads, backpropagates into the model's parameter gradients.
LossBreakdown compute_objective(Model& model, const TrainConfig& config,
                                const BalanceWeights& balance,
                                const Tensor& images,
                                const std::vector<int>& labels,
                                const ViewTransform& view_transform,
                                bool training, bool accumulate_grads);

/// Full training run: balance weights from the training-split counts,
/// per-epoch exponential learning-rate decay, evaluation after every epoch,
/// last-epoch report as primary with the best-epoch report recorded.
/// Throws DivergenceError if the total loss turns non-finite.
TrainResult train(const TrainConfig& config, const Dataset& train_ds,
                  const Dataset& eval_ds);

/// Deterministic single-view evaluation (no augmentation, argmax logits).
MetricsReport evaluate(Model& model, const CheckpointMeta& meta,
                       const Dataset& ds);

struct AblationArm {
  std::string name;
  bool rac = false;
  bool rsl = false;
  std::vector<MetricsReport> finals;  // one per seed
  double mean_of_mean = 0.0;
  std::vector<double> per_class_mean;
};

struct AblationResult {
  std::vector<AblationArm> arms;  // baseline, rac_only, rsl_only, both
  std::vector<std::uint64_t> seeds;
  bool ordering_evaluated = false;
  nlohmann::json summary;
};

/// Four-arm grid (baseline / RAC-only / RSL-only / both) over the given
/// seeds. Arms differ only in the enable flags; data order per seed is
/// identical across arms. Arms run on a small thread pool.
AblationResult run_ablation(const TrainConfig& base,
                            const std::vector<std::uint64_t>& seeds,
                            const Dataset& train_ds, const Dataset& eval_ds,
                            int num_threads = 0);

struct SweepPoint {
  double value = 0.0;
  double mean_acc = 0.0;
  double overall_acc = 0.0;
};

/// Sweeps lambda or alpha over `values`, averaging final accuracies over
/// seeds.
std::vector<SweepPoint> run_sweep(const TrainConfig& base,
                                  const std::string& param,
                                  const std::vector<double>& values,
                                  const std::vector<std::uint64_t>& seeds,
                                  const Dataset& train_ds,
                                  const Dataset& eval_ds, int num_threads = 0);

nlohmann::json metrics_to_json(const MetricsReport& report,
                               const std::vector<std::string>& class_names);

/// {config, seed, epochs: [...], final, best} for one training run.
nlohmann::json run_report(const TrainConfig& config, const TrainResult& result);

void emit_report_json(const nlohmann::json& report, const std::string& path);

/// One row per report: label, per-class accuracies, Overall, Mean.
void emit_report_csv(const std::vector<MetricsReport>& reports,
                     const std::vector<std::string>& class_names,
                     const std::vector<std::string>& row_labels,
                     const std::string& path);

void emit_training_plots(const TrainResult& result, const std::string& dir);
void emit_sweep_plot(const std::string& param,
                     const std::vector<SweepPoint>& points,
                     const std::string& path);

/// Runs selected samples through the model and writes their attention maps
/// (rebalanced by the checkpoint's stored weights unless raw) as RBAM1.
void dump_attention_maps(Model& model, const CheckpointMeta& meta,
                         const Dataset& ds, const std::vector<int>& indices,
                         bool rebalanced, const std::string& path);

/// Normalizes a batch in place with the stored per-channel statistics.
void normalize_images(Tensor* batch, const CheckpointMeta& meta);

}  // namespace rbfer
