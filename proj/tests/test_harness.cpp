#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "rbfer/dataset_io.hpp"
#include "rbfer/errors.hpp"
#include "rbfer/harness.hpp"
#include "test_util.hpp"

using namespace rbfer;
using rbfer_test::central_difference;
using rbfer_test::random_tensor;
using rbfer_test::rel_error;

namespace {

std::filesystem::path tmp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "rbfer_harness_test";
  std::filesystem::create_directories(dir);
  return dir;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.backbone.input_size = 16;
  cfg.backbone.channels = {4, 8};
  cfg.max_epochs = 1;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-3;
  return cfg;
}

SyntheticSpec tiny_spec(int per_class = 4, int num_classes = 3) {
  SyntheticSpec spec;
  spec.num_classes = num_classes;
  spec.image_size = 16;
  spec.per_class_base = per_class;
  spec.noise_std = 0.2;
  spec.seed = 9;
  spec.feature_overlap.assign(
      static_cast<std::size_t>(num_classes) * num_classes, 0.0);
  for (int l = 0; l < num_classes; ++l) {
    spec.feature_overlap[static_cast<std::size_t>(l) * num_classes + l] = 1.0;
  }
  return spec;
}

}  // namespace

TEST_CASE("metrics identities") {
  SUBCASE("perfect predictions") {
    const std::vector<int> y = {0, 1, 2, 0, 1, 2};
    const MetricsReport r = compute_metrics(y, y, 3);
    CHECK(r.overall == 1.0);
    CHECK(r.mean == 1.0);
    for (int l = 0; l < 3; ++l) {
      CHECK(r.confusion_at(l, l) == 2);
      CHECK(r.per_class[static_cast<std::size_t>(l)] == 1.0);
    }
  }
  SUBCASE("constant predictor on a balanced 7-class set") {
    std::vector<int> labels, preds;
    for (int l = 0; l < 7; ++l) {
      for (int k = 0; k < 10; ++k) {
        labels.push_back(l);
        preds.push_back(0);
      }
    }
    const MetricsReport r = compute_metrics(labels, preds, 7);
    CHECK(r.overall == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
    CHECK(r.mean == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  }
  SUBCASE("overall-vs-mean gap on an imbalanced set") {
    // class 0 is 90% of samples; predictor is right only on class 0
    std::vector<int> labels, preds;
    for (int k = 0; k < 540; ++k) {
      labels.push_back(0);
      preds.push_back(0);
    }
    for (int l = 1; l < 7; ++l) {
      for (int k = 0; k < 10; ++k) {
        labels.push_back(l);
        preds.push_back(0);
      }
    }
    const MetricsReport r = compute_metrics(labels, preds, 7);
    CHECK(r.overall == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(r.mean == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  }
  SUBCASE("identities recomputed from the confusion matrix") {
    Rng rng(1);
    std::vector<int> labels, preds;
    for (int i = 0; i < 400; ++i) {
      labels.push_back(static_cast<int>(rng.below(5)));
      preds.push_back(static_cast<int>(rng.below(5)));
    }
    const MetricsReport r = compute_metrics(labels, preds, 5);
    long trace = 0, total = 0;
    double mean_sum = 0.0;
    for (int l = 0; l < 5; ++l) {
      long row = 0;
      for (int p = 0; p < 5; ++p) {
        row += r.confusion_at(l, p);
        total += r.confusion_at(l, p);
      }
      trace += r.confusion_at(l, l);
      mean_sum += static_cast<double>(r.confusion_at(l, l)) / row;
    }
    CHECK(std::abs(r.overall - static_cast<double>(trace) / total) <= 1e-12);
    CHECK(std::abs(r.mean - mean_sum / 5.0) <= 1e-12);
  }
  SUBCASE("zero-sample classes are excluded and flagged") {
    const std::vector<int> labels = {0, 0, 2};
    const std::vector<int> preds = {0, 2, 2};
    const MetricsReport r = compute_metrics(labels, preds, 3);
    CHECK(r.excluded_classes == std::vector<int>{1});
    CHECK(r.mean == doctest::Approx((0.5 + 1.0) / 2.0).epsilon(1e-12));
  }
  SUBCASE("balanced split: overall equals mean") {
    Rng rng(2);
    std::vector<int> labels, preds;
    for (int l = 0; l < 6; ++l) {
      for (int k = 0; k < 25; ++k) {
        labels.push_back(l);
        preds.push_back(static_cast<int>(rng.below(6)));
      }
    }
    const MetricsReport r = compute_metrics(labels, preds, 6);
    CHECK(std::abs(r.overall - r.mean) <= 1e-9);
  }
}

TEST_CASE("transform examples") {
  Rng rng(3);
  const Tensor images = random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);

  SUBCASE("flip twice is the identity") {
    const auto once = apply_transform(images, TransformKind::kFlip, 1.0);
    const auto twice = apply_transform(once.images, TransformKind::kFlip, 1.0);
    for (std::size_t i = 0; i < images.size(); ++i) {
      CHECK(twice.images[i] == images[i]);
    }
  }
  SUBCASE("scaling by 1 is the identity") {
    const auto out = apply_transform(images, TransformKind::kScaling, 1.0);
    for (std::size_t i = 0; i < images.size(); ++i) {
      CHECK(std::abs(out.images[i] - images[i]) <= 1e-6);
    }
  }
  SUBCASE("intensity gain 1 is exact") {
    const auto out = apply_transform(images, TransformKind::kIntensity, 1.0);
    for (std::size_t i = 0; i < images.size(); ++i) {
      CHECK(out.images[i] == images[i]);
    }
  }
  SUBCASE("bad arguments") {
    CHECK_THROWS_AS(transform_from_string("warp"), ConfigError);
    CHECK_THROWS_AS(apply_transform(images, TransformKind::kScaling, 0.1),
                    ConfigError);  // 8 * 0.1 -> dims < 2
  }
}

TEST_CASE("attention alignment and its adjoint agree") {
  Rng rng(4);
  for (double s : {0.8, 1.0, 1.2}) {
    const ViewTransform vt{TransformKind::kScaling, s};
    const Tensor m = random_tensor({2, 3, 4, 4}, rng);
    const Tensor probe = random_tensor({2, 3, 4, 4}, rng);
    const Tensor aligned = align_attention(m, vt);
    const Tensor back = align_attention_adjoint(probe, vt);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      lhs += aligned[i] * probe[i];
      rhs += m[i] * back[i];
    }
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
  const ViewTransform flip{TransformKind::kFlip, 1.0};
  const Tensor m = random_tensor({1, 2, 3, 4}, rng);
  const Tensor round = align_attention(align_attention(m, flip), flip);
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(round[i] == m[i]);
}

TEST_CASE("full objective gradient check on the shrunk model") {
  TrainConfig cfg;
  cfg.backbone.input_size = 8;
  cfg.backbone.channels = {4, 8};
  cfg.lambda = 2.0;
  cfg.alpha = 0.1;
  cfg.beta = 0.9999;
  cfg.enable_rac = true;
  cfg.enable_rsl = true;

  ModelConfig mc;
  mc.backbone = cfg.backbone;
  mc.num_classes = 3;
  Model model(mc);
  model.init_params(97);

  const auto balance = compute_balance_weights(std::vector<long>{5, 2, 1}, cfg.beta);
  Rng rng(98);
  Tensor images = random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
  const std::vector<int> labels = {0, 2};
  const ViewTransform vt{TransformKind::kFlip, 1.0};

  auto objective = [&]() {
    return compute_objective(model, cfg, balance, images, labels, vt,
                             /*training=*/true, /*accumulate_grads=*/false)
        .total;
  };

  model.zero_grads();
  const LossBreakdown lb = compute_objective(model, cfg, balance, images, labels,
                                             vt, true, true);
  CHECK(std::isfinite(lb.total));
  CHECK(std::abs(lb.total - (lb.cls + lb.lambda * lb.cons)) <= 1e-12);

  auto params = model.params();
  long total_params = 0, checked = 0;
  double worst = 0.0;
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      ++total_params;
      const double num = central_difference(objective, &(*p.value)[i], 1e-5);
      const double err = rel_error((*p.grad)[i], num, 1e-6);
      worst = std::max(worst, err);
      if (err < 1e-4) ++checked;
    }
  }
  CHECK(total_params == 375);
  CHECK(checked == total_params);
  MESSAGE("worst relative error: ", worst);
}

TEST_CASE("objective gradient check for scaling and intensity variants") {
  TrainConfig cfg;
  cfg.backbone.input_size = 8;
  cfg.backbone.channels = {4, 8};

  ModelConfig mc;
  mc.backbone = cfg.backbone;
  mc.num_classes = 3;

  const auto balance = compute_balance_weights(std::vector<long>{6, 3, 1}, cfg.beta);
  Rng rng(99);
  const std::vector<int> labels = {1, 2};

  for (const ViewTransform vt : {ViewTransform{TransformKind::kScaling, 1.15},
                                 ViewTransform{TransformKind::kIntensity, 0.85}}) {
    Model model(mc);
    model.init_params(101);
    Tensor images = random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);

    auto objective = [&]() {
      return compute_objective(model, cfg, balance, images, labels, vt, true, false)
          .total;
    };
    model.zero_grads();
    compute_objective(model, cfg, balance, images, labels, vt, true, true);

    auto params = model.params();
    for (auto& p : params) {
      for (std::size_t i = 0; i < p.value->size(); i += 3) {
        const double num = central_difference(objective, &(*p.value)[i], 1e-5);
        CHECK(rel_error((*p.grad)[i], num, 1e-6) < 1e-4);
      }
    }
  }
}

TEST_CASE("training smoke test emits reports") {
  const auto spec = tiny_spec();
  const auto [train_ds, test_ds] = generate_synthetic(spec);
  TrainConfig cfg = tiny_config();

  const TrainResult result = train(cfg, train_ds, test_ds);
  CHECK(result.epoch_reports.size() == 1);
  CHECK(result.final_report.num_classes == 3);
  CHECK(result.final_report.split == "test");
  CHECK(result.loss_trace.size() == 1);
  CHECK(std::isfinite(result.loss_trace[0].total));
  CHECK(result.best_epoch == 0);
}

TEST_CASE("training is deterministic: identical reports for identical seeds") {
  const auto spec = tiny_spec(6);
  const auto [train_ds, test_ds] = generate_synthetic(spec);
  TrainConfig cfg = tiny_config();
  cfg.max_epochs = 2;
  cfg.seed = 123;

  const TrainResult a = train(cfg, train_ds, test_ds);
  const TrainResult b = train(cfg, train_ds, test_ds);
  const std::string ja = run_report(cfg, a).dump();
  const std::string jb = run_report(cfg, b).dump();
  CHECK(ja == jb);
  CHECK(a.loss_trace[0].total == b.loss_trace[0].total);

  TrainConfig other = cfg;
  other.seed = 124;
  const TrainResult c = train(other, train_ds, test_ds);
  CHECK(run_report(other, c).dump() != ja);
}

TEST_CASE("flags fully gate the modules") {
  const auto spec = tiny_spec(6);
  const auto [train_ds, test_ds] = generate_synthetic(spec);
  TrainConfig base = tiny_config();
  base.max_epochs = 2;
  base.enable_rac = false;
  base.enable_rsl = false;

  const TrainResult r0 = train(base, train_ds, test_ds);

  // lambda is ignored while RAC is off
  TrainConfig lam = base;
  lam.lambda = 17.0;
  const TrainResult r1 = train(lam, train_ds, test_ds);
  // alpha is ignored while RSL is off
  TrainConfig alp = base;
  alp.alpha = 0.9;
  const TrainResult r2 = train(alp, train_ds, test_ds);

  for (std::size_t e = 0; e < r0.loss_trace.size(); ++e) {
    CHECK(r0.loss_trace[e].total == r1.loss_trace[e].total);
    CHECK(r0.loss_trace[e].total == r2.loss_trace[e].total);
  }
  CHECK(r0.final_report.overall == r1.final_report.overall);
  CHECK(r0.final_report.overall == r2.final_report.overall);

  // RSL at alpha = 0 reproduces the one-hot loss
  TrainConfig rsl0 = base;
  rsl0.enable_rsl = true;
  rsl0.alpha = 0.0;
  const TrainResult r3 = train(rsl0, train_ds, test_ds);
  for (std::size_t e = 0; e < r0.loss_trace.size(); ++e) {
    CHECK(std::abs(r0.loss_trace[e].total - r3.loss_trace[e].total) <= 1e-12);
  }
}

TEST_CASE("divergence guard raises DivergenceError") {
  const auto spec = tiny_spec(6);
  const auto [train_ds, test_ds] = generate_synthetic(spec);
  TrainConfig cfg = tiny_config();
  cfg.learning_rate = 1e18;  // drives parameters to overflow
  cfg.max_epochs = 8;
  CHECK_THROWS_AS(train(cfg, train_ds, test_ds), DivergenceError);
}

TEST_CASE("evaluate validates the class count") {
  const auto spec = tiny_spec();
  const auto [train_ds, test_ds] = generate_synthetic(spec);
  TrainConfig cfg = tiny_config();
  const TrainResult result = train(cfg, train_ds, test_ds);

  const auto other_spec = tiny_spec(4, 4);
  const auto [otrain, otest] = generate_synthetic(other_spec);
  CHECK_THROWS_AS(evaluate(*result.model, result.meta, otest), DataError);
}

TEST_CASE("report json carries the required schema") {
  const auto spec = tiny_spec();
  const auto [train_ds, test_ds] = generate_synthetic(spec);
  TrainConfig cfg = tiny_config();
  const TrainResult result = train(cfg, train_ds, test_ds);
  const nlohmann::json j = run_report(cfg, result);

  CHECK(j.contains("config"));
  CHECK(j.contains("seed"));
  CHECK(j.contains("epochs"));
  CHECK(j.contains("final"));
  CHECK(j.contains("best"));
  CHECK(j["epochs"].is_array());
  const auto& e0 = j["epochs"][0];
  for (const char* key : {"epoch", "split", "per_class", "overall", "mean", "confusion"}) {
    CHECK(e0.contains(key));
  }
  CHECK(e0["per_class"].size() == 3);
  const TrainConfig round = TrainConfig::from_json(j["config"]);
  CHECK(round.lambda == cfg.lambda);
  CHECK(round.backbone.channels == cfg.backbone.channels);
}

TEST_CASE("csv report has one row per report and L+2 numeric columns") {
  const auto dir = tmp_dir();
  const std::vector<int> y = {0, 1, 2, 0, 1, 2};
  const MetricsReport r = compute_metrics(y, y, 3);
  const std::string path = (dir / "report.csv").string();
  emit_report_csv({r}, {"a", "b", "c"}, {"final"}, path);

  std::ifstream in(path);
  std::string header, row, extra;
  std::getline(in, header);
  std::getline(in, row);
  const bool has_extra = static_cast<bool>(std::getline(in, extra));
  CHECK(header == "label,a,b,c,overall,mean");
  CHECK(row == "final,1,1,1,1,1");
  CHECK_FALSE(has_extra);

  CHECK_THROWS_AS(emit_report_csv({}, {"a"}, {}, path), ConfigError);
}

TEST_CASE("rbam attention dumps round-trip bit-exactly") {
  const auto dir = tmp_dir();
  Rng rng(7);
  Tensor maps({2, 3, 4, 4});
  for (std::size_t i = 0; i < maps.size(); ++i) {
    // values representable in f32 so the round trip is bit-exact
    maps[i] = static_cast<double>(static_cast<float>(rng.uniform(-4.0, 4.0)));
  }
  const std::string path = (dir / "maps.rbam").string();
  write_rbam(maps, path);
  const Tensor back = read_rbam(path);
  CHECK(back.shape() == maps.shape());
  for (std::size_t i = 0; i < maps.size(); ++i) CHECK(back[i] == maps[i]);
}

TEST_CASE("dump_attention writes readable rebalanced maps") {
  const auto dir = tmp_dir();
  const auto spec = tiny_spec();
  const auto [train_ds, test_ds] = generate_synthetic(spec);
  TrainConfig cfg = tiny_config();
  TrainResult result = train(cfg, train_ds, test_ds);

  const std::string path = (dir / "attn.rbam").string();
  dump_attention_maps(*result.model, result.meta, test_ds, {0, 1, 2}, true, path);
  const Tensor maps = read_rbam(path);
  CHECK(maps.shape(0) == 3);
  CHECK(maps.shape(1) == 3);
  CHECK(maps.shape(2) == result.model->backbone().feature_size());
}

TEST_CASE("single-seed ablation reports insufficient seeds") {
  const auto spec = tiny_spec();
  const auto [train_ds, test_ds] = generate_synthetic(spec);
  TrainConfig cfg = tiny_config();
  const AblationResult grid = run_ablation(cfg, {0}, train_ds, test_ds, 2);
  CHECK(grid.arms.size() == 4);
  CHECK_FALSE(grid.ordering_evaluated);
  CHECK(grid.summary["ordering"] == "insufficient seeds");
  for (const auto& arm : grid.arms) CHECK(arm.finals.size() == 1);
}

TEST_CASE("sweep runs over lambda values") {
  const auto spec = tiny_spec();
  const auto [train_ds, test_ds] = generate_synthetic(spec);
  TrainConfig cfg = tiny_config();
  const auto points = run_sweep(cfg, "lambda", {0.1, 2.0}, {0}, train_ds, test_ds, 2);
  CHECK(points.size() == 2);
  CHECK(points[0].value == 0.1);
  CHECK(points[1].value == 2.0);
  for (const auto& p : points) {
    CHECK(p.mean_acc >= 0.0);
    CHECK(p.mean_acc <= 1.0);
  }
  CHECK_THROWS_AS(run_sweep(cfg, "gamma", {0.1}, {0}, train_ds, test_ds, 1),
                  ConfigError);
}

TEST_CASE("plots are emitted as svg files") {
  const auto dir = tmp_dir();
  const auto spec = tiny_spec();
  const auto [train_ds, test_ds] = generate_synthetic(spec);
  TrainConfig cfg = tiny_config();
  cfg.max_epochs = 2;
  const TrainResult result = train(cfg, train_ds, test_ds);
  emit_training_plots(result, (dir / "plots").string());
  CHECK(std::filesystem::exists(dir / "plots" / "accuracy_vs_epoch.svg"));

  std::vector<SweepPoint> pts = {{0.05, 0.5, 0.6}, {2.0, 0.7, 0.8}, {4.0, 0.65, 0.7}};
  emit_sweep_plot("lambda", pts, (dir / "sweep.svg").string());
  CHECK(std::filesystem::exists(dir / "sweep.svg"));
}

TEST_CASE("checkpoint save/load preserves evaluation behaviour") {
  const auto dir = tmp_dir();
  const auto spec = tiny_spec(6);
  const auto [train_ds, test_ds] = generate_synthetic(spec);
  TrainConfig cfg = tiny_config();
  TrainResult result = train(cfg, train_ds, test_ds);

  const std::string path = (dir / "run.rbck").string();
  save_checkpoint(path, *result.model, result.meta);
  CheckpointMeta meta;
  auto model = load_checkpoint(path, &meta);
  const MetricsReport a = evaluate(*result.model, result.meta, test_ds);
  const MetricsReport b = evaluate(*model, meta, test_ds);
  CHECK(a.overall == b.overall);
  CHECK(a.confusion == b.confusion);
}
