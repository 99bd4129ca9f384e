#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "rbfer/checkpoint.hpp"
#include "rbfer/errors.hpp"
#include "rbfer/model.hpp"
#include "test_util.hpp"

using namespace rbfer;
using rbfer_test::central_difference;
using rbfer_test::random_tensor;
using rbfer_test::rel_error;

namespace {

ModelConfig small_config() {
  ModelConfig mc;
  mc.backbone.input_size = 8;
  mc.backbone.in_channels = 1;
  mc.backbone.channels = {4, 8};
  mc.num_classes = 3;
  return mc;
}

}  // namespace

TEST_CASE("gap examples") {
  Tensor constant({2, 3, 4, 4});
  constant.fill(0.7);
  const Tensor pooled = gap(constant);
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    CHECK(pooled[i] == doctest::Approx(0.7).epsilon(1e-12));
  }

  Tensor quad({1, 1, 2, 2});
  quad.at(0, 0, 0, 0) = 1;
  quad.at(0, 0, 0, 1) = 2;
  quad.at(0, 0, 1, 0) = 3;
  quad.at(0, 0, 1, 1) = 4;
  CHECK(gap(quad).at(0, 0) == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("gap matches spatial mean to 1e-10 on random input") {
  Rng rng(1);
  const Tensor f = random_tensor({3, 5, 4, 6}, rng);
  const Tensor pooled = gap(f);
  for (int i = 0; i < 3; ++i) {
    for (int c = 0; c < 5; ++c) {
      double sum = 0;
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 6; ++x) sum += f.at(i, c, y, x);
      CHECK(std::abs(pooled.at(i, c) - sum / 24.0) <= 1e-10);
    }
  }
}

TEST_CASE("backbone validates input sizes") {
  BackboneConfig cfg;
  cfg.input_size = 8;  // 3 blocks -> 1x1 features, too small
  CHECK_THROWS_AS(ReferenceBackbone{cfg}, ConfigError);
  cfg.input_size = 20;  // 20 -> 10 -> 5, odd before the last block
  CHECK_THROWS_AS(ReferenceBackbone{cfg}, ConfigError);
  cfg.input_size = 32;
  CHECK_NOTHROW(ReferenceBackbone{cfg});
  cfg.input_size = 64;
  CHECK_NOTHROW(ReferenceBackbone{cfg});
}

TEST_CASE("default backbone geometry and parameter count") {
  ModelConfig mc;  // defaults: 32x32, 1 channel, {16,32,64}, 7 classes
  Model model(mc);
  CHECK(model.backbone().feature_channels() == 64);
  CHECK(model.backbone().feature_size() == 4);
  // conv 144+4608+18432, bn 32+64+128, fc 448+7
  CHECK(model.param_count() == 23863);

  Rng rng(3);
  const Tensor images = random_tensor({2, 1, 32, 32}, rng);
  model.init_params(11);
  const Tensor f = model.forward_features(images, true);
  CHECK(f.shape() == std::vector<int>{2, 64, 4, 4});
}

TEST_CASE("zero head on zero features gives uniform softmax") {
  ModelConfig mc = small_config();
  Model model(mc);
  model.init_params(5);
  // zero the final conv: features become zero, so logits collapse to bias
  for (auto& p : model.params()) {
    if (p.name == "block1.conv.weight") p.value->zero();
  }
  Rng rng(4);
  const Tensor images = random_tensor({2, 1, 8, 8}, rng);
  const Tensor features = model.forward_features(images, true);
  for (std::size_t i = 0; i < features.size(); ++i) CHECK(features[i] == 0.0);
  const Tensor logits = model.forward_logits(features);
  for (int i = 0; i < 2; ++i)
    for (int l = 0; l < 3; ++l)
      CHECK(logits.at(i, l) == logits.at(i, 0));
}

TEST_CASE("fixed seed and input give bit-identical outputs") {
  ModelConfig mc = small_config();
  Model a(mc), b(mc);
  a.init_params(123);
  b.init_params(123);
  Rng rng(5);
  const Tensor images = random_tensor({3, 1, 8, 8}, rng);
  const Tensor fa = a.forward_features(images, true);
  const Tensor fb = b.forward_features(images, true);
  for (std::size_t i = 0; i < fa.size(); ++i) CHECK(fa[i] == fb[i]);
  const Tensor la = a.forward_logits(fa);
  const Tensor lb = b.forward_logits(fb);
  for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i] == lb[i]);

  Model c(mc);
  c.init_params(124);  // different seed, different parameters
  const Tensor fc_ = c.forward_features(images, true);
  bool differs = false;
  for (std::size_t i = 0; i < fa.size() && !differs; ++i) differs = fa[i] != fc_[i];
  CHECK(differs);
}

TEST_CASE("width-symmetric input makes the two views identical") {
  ModelConfig mc = small_config();
  Model model(mc);
  model.init_params(7);
  Rng rng(8);
  Tensor images({2, 1, 8, 8});
  for (int i = 0; i < 2; ++i)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 4; ++x) {
        const double v = rng.uniform(-1, 1);
        images.at(i, 0, y, x) = v;
        images.at(i, 0, y, 7 - x) = v;
      }
  const DualViewOutputs out = forward_dual(model, images, true);
  for (std::size_t i = 0; i < out.logits.size(); ++i) {
    CHECK(out.logits[i] == out.logits_flipped[i]);
  }
  for (std::size_t i = 0; i < out.maps.values.size(); ++i) {
    CHECK(out.maps.values[i] == out.maps_flipped.values[i]);
  }
}

TEST_CASE("dual views in eval mode match independent forwards exactly") {
  ModelConfig mc = small_config();
  Model model(mc);
  model.init_params(9);
  Rng rng(10);
  const Tensor images = random_tensor({2, 1, 8, 8}, rng);
  // advance running statistics a little first
  (void)model.forward_features(images, true);

  const DualViewOutputs out = forward_dual(model, images, false);
  const Tensor f2 = model.forward_features(flip_w(images), false);
  for (std::size_t i = 0; i < f2.size(); ++i) {
    CHECK(out.features_flipped[i] == f2[i]);
  }
  const Tensor f1 = model.forward_features(images, false);
  for (std::size_t i = 0; i < f1.size(); ++i) {
    CHECK(out.features[i] == f1[i]);
  }
}

TEST_CASE("dual view consistency smoke on random input") {
  ModelConfig mc = small_config();
  Model model(mc);
  model.init_params(20);
  Rng rng(21);
  const Tensor images = random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
  const DualViewOutputs out = forward_dual(model, images, true);
  const auto w = compute_balance_weights(std::vector<long>{5, 2, 1}, 0.9999);
  const AttentionMaps m = rebalance_attention(out.maps, w);
  const AttentionMaps mt = rebalance_attention(out.maps_flipped, w);
  const double loss =
      consistency_loss(m, flip_w(mt), ConsistencyDistance::kSquared);
  CHECK(std::isfinite(loss));
  CHECK(loss >= 0.0);
}

TEST_CASE("fc weight is shared between logits and attention maps") {
  ModelConfig mc = small_config();
  Model model(mc);
  model.init_params(30);
  Rng rng(31);
  const Tensor images = random_tensor({2, 1, 8, 8}, rng);
  const Tensor features = model.forward_features(images, true);
  const Tensor logits0 = model.forward_logits(features);
  const AttentionMaps maps0 = compute_cam(features, model.fc().weight);

  const int target_class = 1, target_channel = 3;
  model.fc().weight.at(target_class, target_channel) += 0.25;
  const Tensor logits1 = model.forward_logits(features);
  const AttentionMaps maps1 = compute_cam(features, model.fc().weight);

  // the touched class row moves in both paths, the others do not
  for (int i = 0; i < 2; ++i) {
    for (int l = 0; l < 3; ++l) {
      if (l == target_class) {
        CHECK(logits1.at(i, l) != logits0.at(i, l));
      } else {
        CHECK(logits1.at(i, l) == logits0.at(i, l));
      }
    }
  }
  for (int i = 0; i < 2; ++i) {
    for (int l = 0; l < 3; ++l) {
      bool plane_changed = false;
      for (int y = 0; y < 2 && !plane_changed; ++y)
        for (int x = 0; x < 2 && !plane_changed; ++x)
          plane_changed =
              maps1.values.at(i, l, y, x) != maps0.values.at(i, l, y, x);
      CHECK(plane_changed == (l == target_class));
    }
  }
}

TEST_CASE("backbone backward matches finite differences") {
  BackboneConfig cfg;
  cfg.input_size = 8;
  cfg.in_channels = 1;
  cfg.channels = {3, 5};
  ReferenceBackbone backbone(cfg);
  Rng rng(40);
  backbone.init(rng);

  Tensor images = random_tensor({2, 1, 8, 8}, rng);
  const Tensor probe = random_tensor({2, 5, 2, 2}, rng);

  auto objective = [&]() {
    // fresh forward so batch statistics follow the perturbed value
    const Tensor f = backbone.forward(images, true);
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s += probe[i] * f[i];
    return s;
  };

  (void)objective();
  const Tensor grad_in = backbone.backward(probe);

  std::vector<Param> params;
  backbone.collect_state(&params, nullptr);
  for (auto& p : params) p.grad->zero();
  (void)objective();
  backbone.backward(probe);

  int checked = 0;
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value->size(); i += 5) {
      const double num = central_difference(objective, &(*p.value)[i], 1e-5);
      CHECK(rel_error((*p.grad)[i], num, 1e-6) < 2e-4);
      ++checked;
    }
  }
  CHECK(checked > 30);

  for (std::size_t i = 0; i < images.size(); i += 17) {
    const double num = central_difference(objective, &images[i], 1e-5);
    CHECK(rel_error(grad_in[i], num, 1e-6) < 2e-4);
  }
}

TEST_CASE("adamw converges on a quadratic") {
  Tensor x({2});
  x[0] = 5.0;
  x[1] = -3.0;
  Tensor g({2});
  AdamW opt({{"x", &x, &g}}, 0.1, 0.0);
  for (int it = 0; it < 500; ++it) {
    g[0] = 2.0 * (x[0] - 1.0);
    g[1] = 2.0 * (x[1] + 2.0);
    opt.step();
  }
  CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(x[1] == doctest::Approx(-2.0).epsilon(1e-3));
}

TEST_CASE("checkpoint round-trips parameters, buffers and metadata") {
  const auto dir = std::filesystem::temp_directory_path() / "rbfer_model_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.rbck").string();

  ModelConfig mc = small_config();
  Model model(mc);
  model.init_params(50);
  Rng rng(51);
  const Tensor images = random_tensor({4, 1, 8, 8}, rng);
  (void)model.forward_features(images, true);  // move running stats off init

  CheckpointMeta meta;
  meta.class_names = {"a", "b", "c"};
  meta.input_mean = {0.41};
  meta.input_std = {0.17};
  meta.balance = compute_balance_weights(std::vector<long>{9, 3, 1}, 0.9999);
  meta.seed = 777;
  save_checkpoint(path, model, meta);

  CheckpointMeta back_meta;
  auto back = load_checkpoint(path, &back_meta);
  CHECK(back_meta.class_names == meta.class_names);
  CHECK(back_meta.input_mean == meta.input_mean);
  CHECK(back_meta.input_std == meta.input_std);
  CHECK(back_meta.seed == meta.seed);
  CHECK(back_meta.balance.normalized == meta.balance.normalized);
  CHECK(back->config().num_classes == 3);

  const Tensor fa = model.forward_features(images, false);
  const Tensor fb = back->forward_features(images, false);
  for (std::size_t i = 0; i < fa.size(); ++i) CHECK(fa[i] == fb[i]);
  const Tensor la = model.forward_logits(fa);
  const Tensor lb = back->forward_logits(fb);
  for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i] == lb[i]);
}
