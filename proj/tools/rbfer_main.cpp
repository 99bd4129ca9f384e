// Command-line front end: dataset generation, imbalancing, training,
// evaluation, ablation grids, hyperparameter sweeps, attention dumps and
// report re-emission.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rbfer/checkpoint.hpp"
#include "rbfer/dataset_io.hpp"
#include "rbfer/errors.hpp"
#include "rbfer/harness.hpp"
#include "rbfer/imbalance.hpp"
#include "rbfer/svg_plot.hpp"

namespace fs = std::filesystem;
using namespace rbfer;

namespace {

struct TrainCliOpts {
  TrainConfig config;
  std::string transform = "flip";
  std::string distance = "squared";
  std::vector<int> channels;

  TrainConfig resolve() const {
    TrainConfig c = config;
    c.transform = transform_from_string(transform);
    c.consistency_distance = consistency_distance_from_string(distance);
    if (!channels.empty()) c.backbone.channels = channels;
    c.validate();
    return c;
  }
};

void add_train_options(CLI::App* cmd, TrainCliOpts* opts) {
  cmd->add_option("--lambda", opts->config.lambda, "consistency loss weight");
  cmd->add_option("--alpha", opts->config.alpha, "label smoothing strength");
  cmd->add_option("--beta", opts->config.beta, "effective-number base");
  cmd->add_option("--lr", opts->config.learning_rate, "learning rate");
  cmd->add_option("--weight-decay", opts->config.weight_decay, "AdamW weight decay");
  cmd->add_option("--lr-decay", opts->config.lr_decay_per_epoch,
                  "exponential LR decay per epoch");
  cmd->add_option("--epochs", opts->config.max_epochs, "training epochs");
  cmd->add_option("--batch", opts->config.batch_size, "batch size");
  cmd->add_option("--seed", opts->config.seed, "run seed");
  cmd->add_flag("--rac,!--no-rac", opts->config.enable_rac,
                "re-balanced attention consistency");
  cmd->add_flag("--rsl,!--no-rsl", opts->config.enable_rsl,
                "re-balanced smooth labels");
  cmd->add_option("--transform", opts->transform, "flip | scaling | intensity");
  cmd->add_option("--distance", opts->distance,
                  "consistency distance: abs | squared");
  cmd->add_option("--input-size", opts->config.backbone.input_size,
                  "backbone input size");
  cmd->add_option("--channels", opts->channels,
                  "backbone channel plan, e.g. --channels 16 32 64");
  cmd->set_config("--config", "", "key=value config file; flags override");
}

void write_config_json(const nlohmann::json& j, const fs::path& path) {
  emit_report_json(j, path.string());
}

std::vector<std::string> epoch_row_labels(const TrainResult& result) {
  std::vector<std::string> labels;
  for (const auto& rep : result.epoch_reports) {
    labels.push_back("epoch_" + std::to_string(rep.epoch));
  }
  return labels;
}

std::vector<double> parse_overlap(const std::string& text, int num_classes) {
  // "3:4:0.5,5:6:0.5" -> symmetric L x L matrix with unit diagonal
  std::vector<double> m = SyntheticSpec::default_overlap(num_classes);
  if (text.empty()) return m;
  for (double& v : m) v = 0.0;
  for (int l = 0; l < num_classes; ++l) {
    m[static_cast<std::size_t>(l) * num_classes + l] = 1.0;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int a, b;
    double v;
    char c1, c2;
    std::stringstream is(item);
    if (!(is >> a >> c1 >> b >> c2 >> v) || c1 != ':' || c2 != ':') {
      throw ConfigError("bad overlap entry '" + item + "' (want a:b:value)");
    }
    if (a < 0 || a >= num_classes || b < 0 || b >= num_classes || a == b) {
      throw ConfigError("overlap pair (" + std::to_string(a) + "," +
                        std::to_string(b) + ") out of range");
    }
    m[static_cast<std::size_t>(a) * num_classes + b] = v;
    m[static_cast<std::size_t>(b) * num_classes + a] = v;
  }
  return m;
}

MetricsReport metrics_from_json(const nlohmann::json& j,
                                const std::vector<std::string>& class_names) {
  MetricsReport r;
  r.num_classes = static_cast<int>(class_names.size());
  r.epoch = j.value("epoch", -1);
  r.split = j.value("split", "");
  r.overall = j["overall"].get<double>();
  r.mean = j["mean"].get<double>();
  for (const auto& row : j["confusion"]) {
    for (const auto& v : row) r.confusion.push_back(v.get<long>());
  }
  r.per_class.assign(static_cast<std::size_t>(r.num_classes), 0.0);
  for (int l = 0; l < r.num_classes; ++l) {
    const auto& name = class_names[static_cast<std::size_t>(l)];
    if (j["per_class"].contains(name)) {
      r.per_class[static_cast<std::size_t>(l)] = j["per_class"][name].get<double>();
    }
  }
  return r;
}

int run_gen_synth(const SyntheticSpec& spec, const std::string& overlap_text,
                  const std::string& out_dir) {
  SyntheticSpec resolved = spec;
  resolved.feature_overlap = parse_overlap(overlap_text, spec.num_classes);
  fs::create_directories(out_dir);
  const auto [train, test] = generate_synthetic(resolved);

  write_manifest_csv(train.manifest, (fs::path(out_dir) / "train.csv").string());
  write_rbim(train.images, (fs::path(out_dir) / "train.rbim").string());
  write_manifest_csv(test.manifest, (fs::path(out_dir) / "test.csv").string());
  write_rbim(test.images, (fs::path(out_dir) / "test.rbim").string());

  nlohmann::json j;
  j["command"] = "gen-synth";
  j["num_classes"] = resolved.num_classes;
  j["image_size"] = resolved.image_size;
  j["per_class_base"] = resolved.per_class_base;
  j["test_per_class"] = resolved.test_per_class();
  j["noise_std"] = resolved.noise_std;
  j["seed"] = resolved.seed;
  j["feature_overlap"] = resolved.feature_overlap;
  write_config_json(j, fs::path(out_dir) / "config.json");
  std::cout << "wrote " << train.manifest.records.size() << " train and "
            << test.manifest.records.size() << " test samples to " << out_dir
            << "\n";
  return 0;
}

int run_make_imbalanced(const std::string& manifest_path, double factor,
                        std::uint64_t seed, const std::string& out_path) {
  const DatasetManifest manifest = ingest_manifest(manifest_path);
  const ImbalanceSpec spec = make_imbalance_spec(manifest, factor, seed);
  const DatasetManifest out = subsample_exponential(manifest, spec);
  write_manifest_csv(out, out_path);

  nlohmann::json j;
  j["command"] = "make-imbalanced";
  j["input_manifest"] = manifest_path;
  j["imbalance_factor"] = spec.imbalance_factor;
  j["mu"] = spec.mu;
  j["class_order"] = spec.class_order;
  j["seed"] = spec.seed;
  j["kept_counts"] = out.class_counts();
  write_config_json(j, out_path + ".config.json");
  std::cout << "kept " << out.records.size() << " of " << manifest.records.size()
            << " samples\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"re-balanced training toolkit for imbalanced image classification"};
  app.require_subcommand(1);

  // ---- gen-synth
  SyntheticSpec synth;
  std::string synth_overlap, synth_out = "data";
  auto* gen = app.add_subcommand("gen-synth", "generate the synthetic dataset");
  gen->add_option("--classes", synth.num_classes, "class count");
  gen->add_option("--image-size", synth.image_size, "square image size");
  gen->add_option("--per-class", synth.per_class_base, "train samples per class");
  gen->add_option("--noise-std", synth.noise_std, "pixel noise level");
  gen->add_option("--seed", synth.seed, "generation seed");
  gen->add_option("--overlap", synth_overlap,
                  "shared-feature pairs, e.g. 3:4:0.5,5:6:0.5");
  gen->add_option("--out", synth_out, "output directory");

  // ---- make-imbalanced
  std::string imb_manifest, imb_out = "train_imbalanced.csv";
  double imb_factor = 100.0;
  std::uint64_t imb_seed = 0;
  auto* imb = app.add_subcommand("make-imbalanced",
                                 "exponentially subsample a train manifest");
  imb->add_option("--manifest", imb_manifest, "input manifest CSV")->required();
  imb->add_option("--if", imb_factor, "imbalance factor (e.g. 50, 100, 150)");
  imb->add_option("--seed", imb_seed, "selection seed");
  imb->add_option("--out", imb_out, "output manifest CSV");

  // ---- train
  TrainCliOpts train_opts;
  std::string train_manifest, train_images, eval_manifest, eval_images;
  std::string train_out = "run";
  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--train-manifest", train_manifest, "train manifest CSV")->required();
  tr->add_option("--train-images", train_images, "train pixel store (.rbim)")->required();
  tr->add_option("--eval-manifest", eval_manifest, "eval manifest CSV")->required();
  tr->add_option("--eval-images", eval_images, "eval pixel store (.rbim)")->required();
  tr->add_option("--out", train_out, "output directory");
  bool train_verbose = false;
  tr->add_flag("--verbose", train_verbose, "print per-epoch losses and accuracy");
  add_train_options(tr, &train_opts);

  // ---- eval
  std::string eval_ckpt, eval_m, eval_i, eval_out = "eval";
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", eval_ckpt, "RBCK1 checkpoint")->required();
  ev->add_option("--manifest", eval_m, "manifest CSV")->required();
  ev->add_option("--images", eval_i, "pixel store (.rbim)")->required();
  ev->add_option("--out", eval_out, "output directory");

  // ---- ablate
  TrainCliOpts abl_opts;
  std::string abl_train_manifest, abl_train_images, abl_eval_manifest, abl_eval_images;
  std::string abl_out = "ablation";
  std::vector<std::uint64_t> abl_seeds = {0, 1, 2, 3, 4};
  int abl_threads = 0;
  auto* ab = app.add_subcommand("ablate", "run the four-arm RAC/RSL grid");
  ab->add_option("--train-manifest", abl_train_manifest)->required();
  ab->add_option("--train-images", abl_train_images)->required();
  ab->add_option("--eval-manifest", abl_eval_manifest)->required();
  ab->add_option("--eval-images", abl_eval_images)->required();
  ab->add_option("--seeds", abl_seeds, "run seeds");
  ab->add_option("--threads", abl_threads, "worker threads (0 = hardware)");
  ab->add_option("--out", abl_out, "output directory");
  add_train_options(ab, &abl_opts);

  // ---- sweep
  TrainCliOpts swp_opts;
  std::string swp_param = "lambda";
  std::vector<double> swp_values;
  std::vector<std::uint64_t> swp_seeds = {0, 1, 2};
  std::string swp_train_manifest, swp_train_images, swp_eval_manifest, swp_eval_images;
  std::string swp_out = "sweep";
  int swp_threads = 0;
  auto* sw = app.add_subcommand("sweep", "sweep lambda or alpha");
  sw->add_option("--param", swp_param, "lambda | alpha")->required();
  sw->add_option("--values", swp_values, "values to sweep");
  sw->add_option("--seeds", swp_seeds, "run seeds");
  sw->add_option("--threads", swp_threads, "worker threads (0 = hardware)");
  sw->add_option("--train-manifest", swp_train_manifest)->required();
  sw->add_option("--train-images", swp_train_images)->required();
  sw->add_option("--eval-manifest", swp_eval_manifest)->required();
  sw->add_option("--eval-images", swp_eval_images)->required();
  sw->add_option("--out", swp_out, "output directory");
  add_train_options(sw, &swp_opts);

  // ---- dump-attention
  std::string da_ckpt, da_manifest, da_images, da_out = "attention.rbam";
  int da_count = 8;
  bool da_raw = false;
  auto* da = app.add_subcommand("dump-attention",
                                "write RBAM1 attention maps for samples");
  da->add_option("--checkpoint", da_ckpt)->required();
  da->add_option("--manifest", da_manifest)->required();
  da->add_option("--images", da_images)->required();
  da->add_option("--count", da_count, "number of leading samples");
  da->add_flag("--raw", da_raw, "skip re-balancing");
  da->add_option("--out", da_out, "output RBAM1 file");

  // ---- report
  std::string rep_in, rep_csv, rep_plots;
  auto* rp = app.add_subcommand("report", "re-emit CSV/plots from a report JSON");
  rp->add_option("--in", rep_in, "report JSON")->required();
  rp->add_option("--csv", rep_csv, "CSV output path");
  rp->add_option("--plots", rep_plots, "plot output directory");

  try {
    app.parse(argc, argv);

    if (gen->parsed()) return run_gen_synth(synth, synth_overlap, synth_out);

    if (imb->parsed()) {
      return run_make_imbalanced(imb_manifest, imb_factor, imb_seed, imb_out);
    }

    if (tr->parsed()) {
      const TrainConfig config = train_opts.resolve();
      const Dataset train_ds = load_dataset(train_manifest, train_images);
      const Dataset eval_ds =
          load_dataset(eval_manifest, eval_images, train_ds.manifest.class_names);
      fs::create_directories(train_out);
      write_config_json(config.to_json(), fs::path(train_out) / "config.json");

      TrainResult result = train(config, train_ds, eval_ds);

      if (train_verbose) {
        for (std::size_t e = 0; e < result.epoch_reports.size(); ++e) {
          std::cout << "epoch " << e << ": cls " << result.loss_trace[e].cls
                    << ", cons " << result.loss_trace[e].cons << ", total "
                    << result.loss_trace[e].total << ", eval mean "
                    << result.epoch_reports[e].mean << "\n";
        }
      }

      save_checkpoint((fs::path(train_out) / "checkpoint.rbck").string(),
                      *result.model, result.meta);
      nlohmann::json rj = run_report(config, result);
      rj["class_names"] = result.meta.class_names;
      emit_report_json(rj, (fs::path(train_out) / "report.json").string());
      emit_report_csv(result.epoch_reports, result.meta.class_names,
                      epoch_row_labels(result),
                      (fs::path(train_out) / "report.csv").string());
      emit_training_plots(result, (fs::path(train_out) / "plots").string());
      std::cout << "final overall " << result.final_report.overall << ", mean "
                << result.final_report.mean << " (best mean "
                << result.best_report.mean << " at epoch " << result.best_epoch
                << ")\n";
      return 0;
    }

    if (ev->parsed()) {
      CheckpointMeta meta;
      auto model = load_checkpoint(eval_ckpt, &meta);
      const Dataset ds = load_dataset(eval_m, eval_i, meta.class_names);
      const MetricsReport report = evaluate(*model, meta, ds);
      fs::create_directories(eval_out);
      nlohmann::json j;
      j["command"] = "eval";
      j["checkpoint"] = eval_ckpt;
      j["manifest"] = eval_m;
      write_config_json(j, fs::path(eval_out) / "config.json");
      nlohmann::json rj = metrics_to_json(report, meta.class_names);
      rj["class_names"] = meta.class_names;
      emit_report_json(rj, (fs::path(eval_out) / "report.json").string());
      emit_report_csv({report}, meta.class_names, {"eval"},
                      (fs::path(eval_out) / "report.csv").string());
      std::cout << "overall " << report.overall << ", mean " << report.mean << "\n";
      return 0;
    }

    if (ab->parsed()) {
      const TrainConfig base = abl_opts.resolve();
      const Dataset train_ds = load_dataset(abl_train_manifest, abl_train_images);
      const Dataset eval_ds = load_dataset(abl_eval_manifest, abl_eval_images,
                                           train_ds.manifest.class_names);
      fs::create_directories(abl_out);
      write_config_json(base.to_json(), fs::path(abl_out) / "config.json");

      const AblationResult grid =
          run_ablation(base, abl_seeds, train_ds, eval_ds, abl_threads);
      emit_report_json(grid.summary, (fs::path(abl_out) / "ablation.json").string());

      std::vector<MetricsReport> rows;
      std::vector<std::string> labels;
      for (const auto& arm : grid.arms) {
        for (std::size_t s = 0; s < grid.seeds.size(); ++s) {
          rows.push_back(arm.finals[s]);
          labels.push_back(arm.name + "_seed" + std::to_string(grid.seeds[s]));
        }
      }
      emit_report_csv(rows, train_ds.manifest.class_names, labels,
                      (fs::path(abl_out) / "ablation.csv").string());
      for (const auto& arm : grid.arms) {
        std::cout << arm.name << ": mean-of-mean " << arm.mean_of_mean << "\n";
      }
      return 0;
    }

    if (sw->parsed()) {
      const TrainConfig base = swp_opts.resolve();
      if (swp_values.empty()) {
        swp_values = swp_param == "lambda"
                         ? std::vector<double>{0.05, 0.1, 0.5, 1.0, 2.0, 4.0}
                         : std::vector<double>{0.05, 0.1, 0.2, 0.3, 0.4};
      }
      const Dataset train_ds = load_dataset(swp_train_manifest, swp_train_images);
      const Dataset eval_ds = load_dataset(swp_eval_manifest, swp_eval_images,
                                           train_ds.manifest.class_names);
      fs::create_directories(swp_out);
      nlohmann::json cj = base.to_json();
      cj["sweep_param"] = swp_param;
      cj["sweep_values"] = swp_values;
      cj["sweep_seeds"] = swp_seeds;
      write_config_json(cj, fs::path(swp_out) / "config.json");

      const auto points = run_sweep(base, swp_param, swp_values, swp_seeds,
                                    train_ds, eval_ds, swp_threads);
      std::ofstream csv((fs::path(swp_out) / ("sweep_" + swp_param + ".csv")).string(),
                        std::ios::binary);
      csv << swp_param << ",mean,overall\n";
      csv.precision(10);
      for (const auto& p : points) {
        csv << p.value << ',' << p.mean_acc << ',' << p.overall_acc << '\n';
      }
      emit_sweep_plot(swp_param, points,
                      (fs::path(swp_out) / ("sweep_" + swp_param + ".svg")).string());
      for (const auto& p : points) {
        std::cout << swp_param << "=" << p.value << ": mean " << p.mean_acc
                  << ", overall " << p.overall_acc << "\n";
      }
      return 0;
    }

    if (da->parsed()) {
      CheckpointMeta meta;
      auto model = load_checkpoint(da_ckpt, &meta);
      const Dataset ds = load_dataset(da_manifest, da_images, meta.class_names);
      std::vector<int> indices;
      for (int i = 0; i < da_count && i < static_cast<int>(ds.manifest.records.size()); ++i) {
        indices.push_back(i);
      }
      dump_attention_maps(*model, meta, ds, indices, !da_raw, da_out);
      std::cout << "wrote " << indices.size() << " attention maps to " << da_out << "\n";
      return 0;
    }

    if (rp->parsed()) {
      std::ifstream in(rep_in);
      if (!in) throw DataError("cannot open report '" + rep_in + "'");
      nlohmann::json j;
      in >> j;
      if (!j.contains("class_names") || !j.contains("epochs")) {
        throw DataError("'" + rep_in + "' is not a training report");
      }
      const auto class_names = j["class_names"].get<std::vector<std::string>>();
      std::vector<MetricsReport> reports;
      std::vector<std::string> labels;
      for (const auto& ej : j["epochs"]) {
        reports.push_back(metrics_from_json(ej, class_names));
        labels.push_back("epoch_" + std::to_string(reports.back().epoch));
      }
      if (!rep_csv.empty()) emit_report_csv(reports, class_names, labels, rep_csv);
      if (!rep_plots.empty()) {
        fs::create_directories(rep_plots);
        PlotSeries overall{"overall", {}, {}};
        PlotSeries mean{"mean", {}, {}};
        for (const auto& r : reports) {
          overall.x.push_back(r.epoch);
          overall.y.push_back(r.overall);
          mean.x.push_back(r.epoch);
          mean.y.push_back(r.mean);
        }
        write_line_plot_svg((fs::path(rep_plots) / "accuracy_vs_epoch.svg").string(),
                            "Accuracy vs epoch", "epoch", "accuracy",
                            {overall, mean});
      }
      return 0;
    }

    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
