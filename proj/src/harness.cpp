#include "rbfer/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "rbfer/dataset_io.hpp"
#include "rbfer/errors.hpp"
#include "rbfer/svg_plot.hpp"

namespace rbfer {

namespace {

constexpr std::uint64_t kInitStream = 0x1717;
constexpr std::uint64_t kDataStream = 0xDA7A;
constexpr std::uint64_t kAugStream = 0xA006;

std::string format_acc(double v) {
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must lie in [0, 1)");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (!(lr_decay_per_epoch > 0.0 && lr_decay_per_epoch <= 1.0)) {
    throw ConfigError("lr_decay_per_epoch must lie in (0, 1]");
  }
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{
      {"lambda", lambda},
      {"alpha", alpha},
      {"beta", beta},
      {"learning_rate", learning_rate},
      {"weight_decay", weight_decay},
      {"lr_decay_per_epoch", lr_decay_per_epoch},
      {"max_epochs", max_epochs},
      {"batch_size", batch_size},
      {"seed", seed},
      {"enable_rac", enable_rac},
      {"enable_rsl", enable_rsl},
      {"transform", to_string(transform)},
      {"consistency_distance", to_string(consistency_distance)},
      {"backbone",
       {{"input_size", backbone.input_size},
        {"in_channels", backbone.in_channels},
        {"channels", backbone.channels}}}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lambda = j.value("lambda", c.lambda);
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.lr_decay_per_epoch = j.value("lr_decay_per_epoch", c.lr_decay_per_epoch);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.enable_rac = j.value("enable_rac", c.enable_rac);
  c.enable_rsl = j.value("enable_rsl", c.enable_rsl);
  if (j.contains("transform")) {
    c.transform = transform_from_string(j["transform"].get<std::string>());
  }
  if (j.contains("consistency_distance")) {
    c.consistency_distance =
        consistency_distance_from_string(j["consistency_distance"].get<std::string>());
  }
  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    c.backbone.input_size = b.value("input_size", c.backbone.input_size);
    c.backbone.in_channels = b.value("in_channels", c.backbone.in_channels);
    if (b.contains("channels")) {
      c.backbone.channels = b["channels"].get<std::vector<int>>();
    }
  }
  return c;
}

void normalize_images(Tensor* batch, const CheckpointMeta& meta) {
  const int n = batch->shape(0), c = batch->shape(1);
  const int hw = batch->shape(2) * batch->shape(3);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double mean = meta.input_mean[static_cast<std::size_t>(ch)];
      const double inv = 1.0 / meta.input_std[static_cast<std::size_t>(ch)];
      double* p = batch->data() + (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int k = 0; k < hw; ++k) p[k] = (p[k] - mean) * inv;
    }
  }
}

LossBreakdown compute_objective(Model& model, const TrainConfig& config,
                                const BalanceWeights& balance,
                                const Tensor& images,
                                const std::vector<int>& labels,
                                const ViewTransform& view_transform,
                                bool training, bool accumulate_grads) {
  const int n = images.shape(0);
  const int num_classes = model.config().num_classes;

  const Tensor view2 = transform_images(images, view_transform);
  const Tensor stacked = batch_concat(images, view2);
  const Tensor features = model.forward_features(stacked, training);
  const Tensor logits_all = model.forward_logits(features);
  const Tensor logits1 = batch_slice(logits_all, 0, n);
  const Tensor logits2 = batch_slice(logits_all, n, 2 * n);

  double cls;
  Tensor grad_logits_all({2 * n, num_classes});
  Tensor grad1({n, num_classes}), grad2({n, num_classes});
  if (config.enable_rsl) {
    const SmoothLabels targets =
        make_smooth_labels(labels, balance, config.alpha, num_classes);
    cls = smooth_ce(logits1, targets) + smooth_ce(logits2, targets);
    if (accumulate_grads) {
      smooth_ce_backward(logits1, targets, 1.0, &grad1);
      smooth_ce_backward(logits2, targets, 1.0, &grad2);
    }
  } else {
    cls = dual_view_ce(logits1, logits2, labels);
    if (accumulate_grads) {
      nll_loss_backward(logits1, labels, 1.0, &grad1);
      nll_loss_backward(logits2, labels, 1.0, &grad2);
    }
  }

  double cons = 0.0;
  const double lambda_eff = config.enable_rac ? config.lambda : 0.0;
  Tensor grad_features_extra;
  bool has_extra = false;

  if (config.enable_rac) {
    const Tensor f1 = batch_slice(features, 0, n);
    const Tensor f2 = batch_slice(features, n, 2 * n);
    const AttentionMaps m1 =
        rebalance_attention(compute_cam(f1, model.fc().weight), balance);
    const AttentionMaps m2 =
        rebalance_attention(compute_cam(f2, model.fc().weight), balance);
    const AttentionMaps m2_aligned{align_attention(m2.values, view_transform),
                                   true};
    cons = consistency_loss(m1, m2_aligned, config.consistency_distance);

    if (accumulate_grads && lambda_eff != 0.0) {
      Tensor gm1 = Tensor::zeros_like(m1.values);
      Tensor gm2_aligned = Tensor::zeros_like(m2_aligned.values);
      consistency_loss_backward(m1, m2_aligned, config.consistency_distance,
                                lambda_eff, &gm1, &gm2_aligned);
      Tensor gm2 = align_attention_adjoint(gm2_aligned, view_transform);

      // Chain through the per-class re-balancing.
      const int hw = gm1.shape(2) * gm1.shape(3);
      for (Tensor* g : {&gm1, &gm2}) {
        for (int i = 0; i < n; ++i) {
          for (int l = 0; l < num_classes; ++l) {
            double* plane =
                g->data() + (static_cast<std::size_t>(i) * num_classes + l) * hw;
            const double b = balance.normalized[static_cast<std::size_t>(l)];
            for (int k = 0; k < hw; ++k) plane[k] *= b;
          }
        }
      }

      Tensor gf1 = Tensor::zeros_like(f1);
      Tensor gf2 = Tensor::zeros_like(f2);
      compute_cam_backward(f1, model.fc().weight, gm1, &gf1,
                           &model.fc().grad_weight);
      compute_cam_backward(f2, model.fc().weight, gm2, &gf2,
                           &model.fc().grad_weight);
      grad_features_extra = batch_concat(gf1, gf2);
      has_extra = true;
    }
  }

  const LossBreakdown breakdown = total_loss(cls, cons, lambda_eff);

  if (accumulate_grads) {
    std::memcpy(grad_logits_all.data(), grad1.data(), sizeof(double) * grad1.size());
    std::memcpy(grad_logits_all.data() + grad1.size(), grad2.data(),
                sizeof(double) * grad2.size());
    model.backward(grad_logits_all, has_extra ? &grad_features_extra : nullptr);
  }
  return breakdown;
}

namespace {

CheckpointMeta make_meta(const TrainConfig& config, const Dataset& train_ds,
                         const BalanceWeights& balance) {
  CheckpointMeta meta;
  meta.class_names = train_ds.manifest.class_names;
  meta.balance = balance;
  meta.seed = config.seed;

  const int channels = train_ds.images.channels;
  const std::size_t per = static_cast<std::size_t>(train_ds.images.height) *
                          train_ds.images.width;
  const std::size_t count = train_ds.manifest.records.size();
  meta.input_mean.assign(static_cast<std::size_t>(channels), 0.0);
  meta.input_std.assign(static_cast<std::size_t>(channels), 1.0);
  for (int ch = 0; ch < channels; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint8_t* img = train_ds.images.image(static_cast<int>(i));
      const std::uint8_t* p = img + static_cast<std::size_t>(ch) * per;
      for (std::size_t k = 0; k < per; ++k) {
        const double v = static_cast<double>(p[k]) / 255.0;
        sum += v;
        sq += v * v;
      }
    }
    const double m = sum / (static_cast<double>(count) * per);
    const double var = std::max(0.0, sq / (static_cast<double>(count) * per) - m * m);
    meta.input_mean[static_cast<std::size_t>(ch)] = m;
    meta.input_std[static_cast<std::size_t>(ch)] = std::max(1e-8, std::sqrt(var));
  }
  return meta;
}

void check_dataset_model_match(const Dataset& ds, const TrainConfig& config) {
  if (ds.images.height != config.backbone.input_size ||
      ds.images.width != config.backbone.input_size) {
    throw ConfigError("backbone input size " +
                      std::to_string(config.backbone.input_size) +
                      " does not match image size " +
                      std::to_string(ds.images.height) + "x" +
                      std::to_string(ds.images.width));
  }
  if (ds.images.channels != config.backbone.in_channels) {
    throw ConfigError("backbone expects " +
                      std::to_string(config.backbone.in_channels) +
                      " channels, images have " +
                      std::to_string(ds.images.channels));
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& train_ds,
                  const Dataset& eval_ds) {
  config.validate();
  train_ds.manifest.validate();
  eval_ds.manifest.validate();
  if (train_ds.manifest.class_names != eval_ds.manifest.class_names) {
    throw DataError("train and eval splits disagree on class names");
  }
  check_dataset_model_match(train_ds, config);
  check_dataset_model_match(eval_ds, config);

  const int num_classes = train_ds.manifest.num_classes();
  const BalanceWeights balance =
      compute_balance_weights(train_ds.manifest.class_counts(), config.beta);

  TrainResult result;
  result.meta = make_meta(config, train_ds, balance);

  ModelConfig mc;
  mc.backbone = config.backbone;
  mc.num_classes = num_classes;
  result.model = std::make_unique<Model>(mc);
  result.model->init_params(mix_seed(config.seed, kInitStream));

  AdamW optimizer(result.model->params(), config.learning_rate,
                  config.weight_decay);
  Rng rng_data(mix_seed(config.seed, kDataStream));
  Rng rng_aug(mix_seed(config.seed, kAugStream));

  std::vector<int> labels;
  labels.reserve(train_ds.manifest.records.size());
  for (const auto& r : train_ds.manifest.records) labels.push_back(r.label);

  std::vector<int> indices(train_ds.manifest.records.size());
  std::iota(indices.begin(), indices.end(), 0);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    optimizer.set_lr(config.learning_rate *
                     std::pow(config.lr_decay_per_epoch, epoch));
    rng_data.shuffle(indices);

    EpochLoss sums;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < indices.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(indices.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::vector<int> batch_idx(indices.begin() + static_cast<long>(start),
                                       indices.begin() + static_cast<long>(end));
      std::vector<int> batch_labels;
      batch_labels.reserve(batch_idx.size());
      for (int idx : batch_idx) batch_labels.push_back(labels[static_cast<std::size_t>(idx)]);

      Tensor x = to_image_batch(train_ds, batch_idx);
      normalize_images(&x, result.meta);

      const ViewTransform vt = config.transform == TransformKind::kFlip
                                   ? ViewTransform{TransformKind::kFlip, 1.0}
                                   : draw_view_transform(config.transform, rng_aug);

      result.model->zero_grads();
      const LossBreakdown lb =
          compute_objective(*result.model, config, balance, x, batch_labels, vt,
                            /*training=*/true, /*accumulate_grads=*/true);
      if (!std::isfinite(lb.total)) {
        throw DivergenceError("total loss is non-finite at epoch " +
                              std::to_string(epoch));
      }
      optimizer.step();

      const double bs = static_cast<double>(batch_idx.size());
      sums.cls += lb.cls * bs;
      sums.cons += lb.cons * bs;
      sums.total += lb.total * bs;
      seen += batch_idx.size();
    }
    const double inv = 1.0 / static_cast<double>(seen);
    result.loss_trace.push_back({sums.cls * inv, sums.cons * inv, sums.total * inv});

    MetricsReport report = evaluate(*result.model, result.meta, eval_ds);
    report.epoch = epoch;
    result.epoch_reports.push_back(report);
    if (result.best_epoch < 0 || report.mean > result.best_report.mean) {
      result.best_report = report;
      result.best_epoch = epoch;
    }
  }

  result.final_report = result.epoch_reports.back();
  return result;
}

MetricsReport evaluate(Model& model, const CheckpointMeta& meta,
                       const Dataset& ds) {
  ds.manifest.validate();
  if (ds.manifest.num_classes() != model.config().num_classes) {
    throw DataError("class count mismatch: model has " +
                    std::to_string(model.config().num_classes) +
                    " classes, manifest has " +
                    std::to_string(ds.manifest.num_classes()));
  }
  const int total = static_cast<int>(ds.manifest.records.size());
  std::vector<int> labels, preds;
  labels.reserve(static_cast<std::size_t>(total));
  preds.reserve(static_cast<std::size_t>(total));

  const int chunk = 256;
  for (int start = 0; start < total; start += chunk) {
    const int end = std::min(total, start + chunk);
    std::vector<int> idx(static_cast<std::size_t>(end - start));
    std::iota(idx.begin(), idx.end(), start);
    Tensor x = to_image_batch(ds, idx);
    normalize_images(&x, meta);
    const Tensor features = model.forward_features(x, /*training=*/false);
    const Tensor logits = model.forward_logits(features);
    const int l = logits.shape(1);
    for (int i = 0; i < end - start; ++i) {
      int arg = 0;
      for (int j = 1; j < l; ++j) {
        if (logits.at(i, j) > logits.at(i, arg)) arg = j;
      }
      preds.push_back(arg);
      labels.push_back(ds.manifest.records[static_cast<std::size_t>(start + i)].label);
    }
  }
  MetricsReport r = compute_metrics(labels, preds, model.config().num_classes);
  r.split = ds.manifest.split;
  return r;
}

namespace {

struct Job {
  int arm = 0;
  int seed_index = 0;
};

}  // namespace

AblationResult run_ablation(const TrainConfig& base,
                            const std::vector<std::uint64_t>& seeds,
                            const Dataset& train_ds, const Dataset& eval_ds,
                            int num_threads) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");

  AblationResult result;
  result.seeds = seeds;
  result.arms = {{"baseline", false, false, {}, 0.0, {}},
                 {"rac_only", true, false, {}, 0.0, {}},
                 {"rsl_only", false, true, {}, 0.0, {}},
                 {"both", true, true, {}, 0.0, {}}};

  std::vector<Job> jobs;
  for (int a = 0; a < 4; ++a) {
    for (int s = 0; s < static_cast<int>(seeds.size()); ++s) {
      jobs.push_back({a, s});
    }
  }
  std::vector<std::vector<MetricsReport>> finals(
      4, std::vector<MetricsReport>(seeds.size()));

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto worker = [&]() {
    while (true) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (first_error) return;
      }
      try {
        TrainConfig cfg = base;
        cfg.enable_rac = result.arms[static_cast<std::size_t>(jobs[j].arm)].rac;
        cfg.enable_rsl = result.arms[static_cast<std::size_t>(jobs[j].arm)].rsl;
        cfg.seed = seeds[static_cast<std::size_t>(jobs[j].seed_index)];
        TrainResult r = train(cfg, train_ds, eval_ds);
        finals[static_cast<std::size_t>(jobs[j].arm)]
              [static_cast<std::size_t>(jobs[j].seed_index)] = r.final_report;
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  int threads = num_threads > 0
                    ? num_threads
                    : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  const int num_classes = train_ds.manifest.num_classes();
  nlohmann::json arms_json = nlohmann::json::array();
  for (int a = 0; a < 4; ++a) {
    auto& arm = result.arms[static_cast<std::size_t>(a)];
    arm.finals = finals[static_cast<std::size_t>(a)];
    double sum = 0.0;
    arm.per_class_mean.assign(static_cast<std::size_t>(num_classes), 0.0);
    for (const auto& rep : arm.finals) {
      sum += rep.mean;
      for (int l = 0; l < num_classes; ++l) {
        arm.per_class_mean[static_cast<std::size_t>(l)] +=
            rep.per_class[static_cast<std::size_t>(l)] / static_cast<double>(seeds.size());
      }
    }
    arm.mean_of_mean = sum / static_cast<double>(seeds.size());

    nlohmann::json aj;
    aj["name"] = arm.name;
    aj["enable_rac"] = arm.rac;
    aj["enable_rsl"] = arm.rsl;
    aj["mean_accuracy_per_seed"] = nlohmann::json::array();
    aj["overall_accuracy_per_seed"] = nlohmann::json::array();
    for (const auto& rep : arm.finals) {
      aj["mean_accuracy_per_seed"].push_back(rep.mean);
      aj["overall_accuracy_per_seed"].push_back(rep.overall);
    }
    aj["mean_of_mean_accuracy"] = arm.mean_of_mean;
    nlohmann::json pc;
    for (int l = 0; l < num_classes; ++l) {
      pc[train_ds.manifest.class_names[static_cast<std::size_t>(l)]] =
          arm.per_class_mean[static_cast<std::size_t>(l)];
    }
    aj["per_class_mean_accuracy"] = pc;
    arms_json.push_back(aj);
  }

  result.summary["arms"] = arms_json;
  result.summary["seeds"] = seeds;
  if (seeds.size() < 3) {
    result.summary["ordering"] = "insufficient seeds";
    result.ordering_evaluated = false;
  } else {
    const double base_acc = result.arms[0].mean_of_mean;
    const double rac_acc = result.arms[1].mean_of_mean;
    const double rsl_acc = result.arms[2].mean_of_mean;
    const double both_acc = result.arms[3].mean_of_mean;
    nlohmann::json ord;
    ord["both_minus_baseline_pp"] = 100.0 * (both_acc - base_acc);
    ord["rac_gt_baseline"] = rac_acc > base_acc;
    ord["rsl_ge_baseline"] = rsl_acc >= base_acc;
    ord["both_ge_rac"] = both_acc >= rac_acc;
    ord["both_ge_rsl"] = both_acc >= rsl_acc;
    result.summary["ordering"] = ord;
    result.ordering_evaluated = true;
  }
  return result;
}

std::vector<SweepPoint> run_sweep(const TrainConfig& base,
                                  const std::string& param,
                                  const std::vector<double>& values,
                                  const std::vector<std::uint64_t>& seeds,
                                  const Dataset& train_ds,
                                  const Dataset& eval_ds, int num_threads) {
  if (param != "lambda" && param != "alpha") {
    throw ConfigError("sweep param must be lambda or alpha, got '" + param + "'");
  }
  if (values.empty() || seeds.empty()) {
    throw ConfigError("sweep needs at least one value and one seed");
  }

  struct SweepJob {
    int value_index;
    int seed_index;
  };
  std::vector<SweepJob> jobs;
  for (int v = 0; v < static_cast<int>(values.size()); ++v)
    for (int s = 0; s < static_cast<int>(seeds.size()); ++s) jobs.push_back({v, s});

  std::vector<std::vector<MetricsReport>> finals(
      values.size(), std::vector<MetricsReport>(seeds.size()));
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto worker = [&]() {
    while (true) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (first_error) return;
      }
      try {
        TrainConfig cfg = base;
        if (param == "lambda") {
          cfg.lambda = values[static_cast<std::size_t>(jobs[j].value_index)];
        } else {
          cfg.alpha = values[static_cast<std::size_t>(jobs[j].value_index)];
        }
        cfg.seed = seeds[static_cast<std::size_t>(jobs[j].seed_index)];
        TrainResult r = train(cfg, train_ds, eval_ds);
        finals[static_cast<std::size_t>(jobs[j].value_index)]
              [static_cast<std::size_t>(jobs[j].seed_index)] = r.final_report;
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  int threads = num_threads > 0
                    ? num_threads
                    : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  std::vector<SweepPoint> points;
  for (std::size_t v = 0; v < values.size(); ++v) {
    SweepPoint p;
    p.value = values[v];
    for (const auto& rep : finals[v]) {
      p.mean_acc += rep.mean / static_cast<double>(seeds.size());
      p.overall_acc += rep.overall / static_cast<double>(seeds.size());
    }
    points.push_back(p);
  }
  return points;
}

nlohmann::json metrics_to_json(const MetricsReport& report,
                               const std::vector<std::string>& class_names) {
  nlohmann::json pc;
  for (int l = 0; l < report.num_classes; ++l) {
    pc[class_names[static_cast<std::size_t>(l)]] =
        report.per_class[static_cast<std::size_t>(l)];
  }
  nlohmann::json confusion = nlohmann::json::array();
  for (int t = 0; t < report.num_classes; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int p = 0; p < report.num_classes; ++p) row.push_back(report.confusion_at(t, p));
    confusion.push_back(row);
  }
  nlohmann::json excluded = nlohmann::json::array();
  for (int l : report.excluded_classes) {
    excluded.push_back(class_names[static_cast<std::size_t>(l)]);
  }
  return nlohmann::json{{"epoch", report.epoch},
                        {"split", report.split},
                        {"per_class", pc},
                        {"overall", report.overall},
                        {"mean", report.mean},
                        {"confusion", confusion},
                        {"excluded_classes", excluded}};
}

nlohmann::json run_report(const TrainConfig& config, const TrainResult& result) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& rep : result.epoch_reports) {
    epochs.push_back(metrics_to_json(rep, result.meta.class_names));
  }
  return nlohmann::json{
      {"config", config.to_json()},
      {"seed", config.seed},
      {"epochs", epochs},
      {"final", metrics_to_json(result.final_report, result.meta.class_names)},
      {"best", metrics_to_json(result.best_report, result.meta.class_names)}};
}

void emit_report_json(const nlohmann::json& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write report '" + path + "'");
  out << report.dump(2) << '\n';
  if (!out) throw DataError("error writing report '" + path + "'");
}

void emit_report_csv(const std::vector<MetricsReport>& reports,
                     const std::vector<std::string>& class_names,
                     const std::vector<std::string>& row_labels,
                     const std::string& path) {
  if (reports.empty()) throw ConfigError("no reports to emit");
  if (row_labels.size() != reports.size()) {
    throw ConfigError("row label count does not match report count");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write CSV '" + path + "'");
  out << "label";
  for (const auto& name : class_names) out << ',' << name;
  out << ",overall,mean\n";
  for (std::size_t r = 0; r < reports.size(); ++r) {
    out << row_labels[r];
    for (int l = 0; l < reports[r].num_classes; ++l) {
      out << ',' << format_acc(reports[r].per_class[static_cast<std::size_t>(l)]);
    }
    out << ',' << format_acc(reports[r].overall) << ','
        << format_acc(reports[r].mean) << '\n';
  }
  if (!out) throw DataError("error writing CSV '" + path + "'");
}

void emit_training_plots(const TrainResult& result, const std::string& dir) {
  std::filesystem::create_directories(dir);
  PlotSeries overall{"overall", {}, {}};
  PlotSeries mean{"mean", {}, {}};
  for (const auto& rep : result.epoch_reports) {
    overall.x.push_back(rep.epoch);
    overall.y.push_back(rep.overall);
    mean.x.push_back(rep.epoch);
    mean.y.push_back(rep.mean);
  }
  write_line_plot_svg((std::filesystem::path(dir) / "accuracy_vs_epoch.svg").string(),
                      "Accuracy vs epoch", "epoch", "accuracy", {overall, mean});
}

void emit_sweep_plot(const std::string& param,
                     const std::vector<SweepPoint>& points,
                     const std::string& path) {
  PlotSeries overall{"overall", {}, {}};
  PlotSeries mean{"mean", {}, {}};
  for (const auto& p : points) {
    overall.x.push_back(p.value);
    overall.y.push_back(p.overall_acc);
    mean.x.push_back(p.value);
    mean.y.push_back(p.mean_acc);
  }
  write_line_plot_svg(path, "Accuracy vs " + param, param, "accuracy",
                      {overall, mean});
}

void dump_attention_maps(Model& model, const CheckpointMeta& meta,
                         const Dataset& ds, const std::vector<int>& indices,
                         bool rebalanced, const std::string& path) {
  if (indices.empty()) throw ConfigError("no samples selected for attention dump");
  Tensor x = to_image_batch(ds, indices);
  normalize_images(&x, meta);
  const Tensor features = model.forward_features(x, /*training=*/false);
  AttentionMaps maps = compute_cam(features, model.fc().weight);
  if (rebalanced) maps = rebalance_attention(maps, meta.balance);
  write_rbam(maps.values, path);
}

}  // namespace rbfer
