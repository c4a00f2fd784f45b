// xmac: command-line shell for the multimodal leaf-disease runtime.
// Subcommands: synth, indices, train, eval, kfold, explain (gradcam|shap),
// info. Every seeded subcommand is byte-deterministic for identical inputs;
// XMAC_THREADS caps internal kernel parallelism (default 1).

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "xmac/checkpoint.hpp"
#include "xmac/data.hpp"
#include "xmac/explain.hpp"
#include "xmac/image_io.hpp"
#include "xmac/metrics.hpp"
#include "xmac/training.hpp"
#include "xmac/vegindex.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct SynthArgs {
  std::string out;
  int size = 64;
  int per_class = 20;
  uint64_t seed = 0;
  bool nir_only = false;
};

struct TrainArgs {
  std::string dataset, out, preset = "toy", config_path;
  int size = 224;
  int epochs = 50;
  double lr = 1e-4;
  int batch = 32;
  uint64_t seed = 0;
  bool no_index = false, no_attention = false, augment = false, nir_proxy = false;
};

struct EvalArgs {
  std::string dataset, checkpoint, out;
  bool bench = false, nir_proxy = false;
};

struct KfoldArgs {
  std::string dataset, preset = "small", out;
  int k = 5;
  int size = 32;
  int epochs = 12;
  double lr = 1e-3;
  int batch = 32;
  uint64_t seed = 0;
  bool nir_proxy = false;
};

struct ExplainArgs {
  std::string checkpoint, image, nir, dataset, out;
  int target_class = -1;
  double alpha = 0.45;
  std::string mode = "channels";
  int patch = 0;
  int samples = 2000;
  bool exact = false, nir_proxy = false;
  uint64_t seed = 0;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw xmac::IoError("cannot write " + path.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

xmac::MultibandImage load_input_image(const std::string& image_path, const std::string& nir_path,
                                      bool nir_proxy) {
  xmac::MultibandImage img = xmac::read_image(image_path);
  if (!nir_path.empty()) {
    int h = 0, w = 0;
    img.nir = xmac::read_gray(nir_path, h, w);
    if (h != img.height || w != img.width)
      throw xmac::IoError("NIR image dimensions do not match " + image_path);
  } else {
    const fs::path sidecar = fs::path(image_path).parent_path() /
                             (fs::path(image_path).stem().string() + ".nir.png");
    if (fs::exists(sidecar)) {
      int h = 0, w = 0;
      img.nir = xmac::read_gray(sidecar.string(), h, w);
      if (h != img.height || w != img.width)
        throw xmac::IoError("NIR sidecar dimensions do not match " + image_path);
    }
  }
  if (nir_proxy) img = xmac::apply_nir_proxy(img);
  return img;
}

std::pair<xmac::Tensor, xmac::Tensor> image_to_tensors(const xmac::MultibandImage& cropped,
                                                       bool want_index = true) {
  const int s = cropped.height;
  const size_t plane = cropped.pixels();
  std::vector<float> rgb(3 * plane);
  for (size_t i = 0; i < plane; ++i) {
    rgb[i] = static_cast<float>(cropped.red[i]);
    rgb[plane + i] = static_cast<float>(cropped.green[i]);
    rgb[2 * plane + i] = static_cast<float>(cropped.blue[i]);
  }
  xmac::Tensor rgb_t = xmac::Tensor::from({1, 3, s, s}, std::move(rgb));
  // an ablated model never reads the index tensor; use a zero stack so
  // NIR-less inputs still work
  std::vector<float> idx(3 * plane, 0.0f);
  if (want_index) {
    xmac::IndexStack stack = xmac::build_index_stack(cropped);
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<float>(stack.data[i]);
  }
  xmac::Tensor idx_t = xmac::Tensor::from({1, 3, s, s}, std::move(idx));
  return {std::move(rgb_t), std::move(idx_t)};
}

int run_synth(const SynthArgs& a) {
  xmac::SynthConfig cfg = xmac::default_synth_config(a.size, a.seed);
  cfg.nir_only = a.nir_only;
  std::vector<xmac::LesionBox> boxes;
  xmac::Dataset ds = xmac::make_synthetic_dataset(cfg, a.per_class, &boxes);
  xmac::write_dataset(ds, a.out);

  ordered_json meta;
  meta["seed"] = a.seed;
  meta["size"] = a.size;
  meta["per_class"] = a.per_class;
  meta["nir_only"] = a.nir_only;
  meta["classes"] = ds.class_names;
  ordered_json jboxes = ordered_json::array();
  for (size_t i = 0; i < boxes.size(); ++i)
    jboxes.push_back({{"label", ds.samples[i].label},
                      {"x0", boxes[i].x0},
                      {"y0", boxes[i].y0},
                      {"x1", boxes[i].x1},
                      {"y1", boxes[i].y1}});
  meta["lesion_boxes"] = std::move(jboxes);
  write_text(fs::path(a.out) / "synth_meta.json", meta.dump(2));
  std::cout << "wrote " << ds.size() << " images across " << ds.class_names.size()
            << " classes to " << a.out << "\n";
  return 0;
}

int run_indices(const std::string& image, const std::string& nir, bool nir_proxy,
                const std::string& out_dir) {
  xmac::MultibandImage img = load_input_image(image, nir, nir_proxy);
  fs::create_directories(out_dir);
  const xmac::IndexMap maps[3] = {xmac::normalize_index(xmac::ndvi(img)),
                                  xmac::normalize_index(xmac::npci(img)),
                                  xmac::normalize_index(xmac::mcari(img))};
  for (const auto& m : maps) {
    std::string name = xmac::index_name(m.kind);
    for (auto& ch : name) ch = static_cast<char>(std::tolower(ch));
    xmac::write_gray((fs::path(out_dir) / (name + ".png")).string(), m.values, m.height, m.width);
  }
  std::cout << "wrote ndvi.png npci.png mcari.png to " << out_dir << "\n";
  return 0;
}

xmac::ModelConfig resolve_config(const TrainArgs& a, int num_classes) {
  xmac::ModelConfig cfg;
  if (!a.config_path.empty()) {
    std::ifstream in(a.config_path);
    if (!in) throw xmac::IoError("cannot open config: " + a.config_path);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    cfg = xmac::ModelConfig::from_json(text);
  } else {
    cfg = xmac::config_by_preset(a.preset, a.size, num_classes);
  }
  if (a.no_index) cfg.index_branch_enabled = false;
  if (a.no_attention) cfg.attention.enabled = false;
  return cfg;
}

int run_train(const TrainArgs& a) {
  xmac::Dataset ds = xmac::load_dataset(a.dataset);
  auto split = xmac::stratified_split(ds, {0.8, 0.1, 0.1, a.seed});

  xmac::ModelConfig mc = resolve_config(a, ds.num_classes());
  xmac::Model model = xmac::build_model<float>(mc, a.seed);

  xmac::TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch;
  tc.max_epochs = a.epochs;
  tc.seed = a.seed;
  tc.nir_proxy = a.nir_proxy;
  if (a.augment) tc.augment = xmac::AugmentConfig{};

  xmac::TrainHistory history = xmac::train(model, split.train, split.val, tc);

  fs::create_directories(a.out);
  xmac::save_checkpoint(model, (fs::path(a.out) / "checkpoint.xmac").string());
  write_text(fs::path(a.out) / "history.json", history.to_json());

  xmac::EvalResult ev = xmac::evaluate(model, split.test, a.batch, a.nir_proxy);
  int64_t correct = 0;
  for (size_t i = 0; i < ev.predictions.size(); ++i)
    correct += ev.predictions[i] == split.test.samples[i].label;
  std::cout << "best epoch " << history.best_epoch << " (" << history.stop_reason << "), "
            << "test accuracy " << (split.test.size() ? static_cast<double>(correct) / split.test.size() : 0.0)
            << ", checkpoint at " << (fs::path(a.out) / "checkpoint.xmac").string() << "\n";
  return 0;
}

int run_eval(const EvalArgs& a) {
  xmac::Dataset ds = xmac::load_dataset(a.dataset);
  xmac::Model model = xmac::load_checkpoint(a.checkpoint, ds.num_classes());
  xmac::EvalResult ev = xmac::evaluate(model, ds, 32, a.nir_proxy);

  std::vector<int> y_true;
  for (const auto& s : ds.samples) y_true.push_back(s.label);
  auto cm = xmac::confusion_matrix(y_true, ev.predictions, ds.num_classes(), ds.class_names);
  auto report = xmac::classification_report(cm);

  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "report.json", report.to_json());
  write_text(fs::path(a.out) / "confusion.json", cm.to_json());

  ordered_json roc = ordered_json::object();
  for (int c = 0; c < ds.num_classes(); ++c) {
    try {
      auto curve = xmac::roc_curve(y_true, ev.probabilities, c);
      ordered_json points = ordered_json::array();
      for (auto& [fpr, tpr] : curve.points) points.push_back({fpr, tpr});
      roc[ds.class_names[static_cast<size_t>(c)]] = {{"points", std::move(points)},
                                                     {"auc", xmac::auc(curve)}};
    } catch (const xmac::ConfigError& e) {
      roc[ds.class_names[static_cast<size_t>(c)]] = {{"error", e.what()}};
    }
  }
  write_text(fs::path(a.out) / "roc.json", roc.dump(2));

  std::cout << "accuracy " << report.accuracy << ", weighted F1 " << report.weighted_f1
            << ", reports in " << a.out << "\n";

  if (a.bench) {
    // median of 100 single-image forward passes after 10 warmups, batch 1
    xmac::BatchIterator it(ds, 1, 0, 0, false, model.config.input_h, nullptr,
                           model.config.index_branch_enabled, a.nir_proxy);
    auto batch = it.next();
    if (!batch) throw xmac::ConfigError("eval --bench: dataset is empty");
    xmac::Rng rng(0);
    for (int i = 0; i < 10; ++i) xmac::forward(model, batch->rgb, batch->index, xmac::Mode::kInfer, rng);
    std::vector<double> ms;
    for (int i = 0; i < 100; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      xmac::forward(model, batch->rgb, batch->index, xmac::Mode::kInfer, rng);
      const auto t1 = std::chrono::steady_clock::now();
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    const double median = (ms[49] + ms[50]) / 2.0;
    std::cout << "bench: median " << median << " ms per image (median of 100 single-image "
              << "forward passes after 10 warmup passes, batch size 1, input "
              << model.config.input_h << "x" << model.config.input_w << ", XMAC_THREADS="
              << xmac::thread_count() << ")\n";
  }
  return 0;
}

int run_kfold_cmd(const KfoldArgs& a) {
  xmac::Dataset ds = xmac::load_dataset(a.dataset);
  xmac::ModelConfig full = xmac::config_by_preset(a.preset, a.size, ds.num_classes());
  xmac::ModelConfig no_index = full;
  no_index.index_branch_enabled = false;
  xmac::ModelConfig no_attn = full;
  no_attn.attention.enabled = false;

  xmac::TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch;
  tc.max_epochs = a.epochs;
  tc.seed = a.seed;
  tc.nir_proxy = a.nir_proxy;

  auto result = xmac::run_kfold(ds, {full, no_index, no_attn},
                                {"full", "no_index_branch", "no_attention"}, tc, a.k);

  ordered_json j;
  j["k"] = a.k;
  j["configs"] = result.config_names;
  j["accuracy"] = result.accuracy;
  ordered_json ttests = ordered_json::array();
  for (size_t c = 1; c < result.config_names.size(); ++c) {
    std::vector<double> base, other;
    for (size_t f = 0; f < result.accuracy.size(); ++f) {
      base.push_back(result.accuracy[f][0]);
      other.push_back(result.accuracy[f][c]);
    }
    ordered_json entry;
    entry["config"] = result.config_names[c];
    entry["vs"] = result.config_names[0];
    try {
      auto t = xmac::paired_t_test(base, other);
      entry["t"] = t.t;
      entry["df"] = t.df;
      entry["p"] = t.p;
      entry["mean_diff"] = t.mean_diff;
    } catch (const std::exception& e) {
      entry["error"] = e.what();
    }
    ttests.push_back(std::move(entry));
  }
  j["paired_t_tests"] = std::move(ttests);
  ordered_json errs = ordered_json::array();
  for (const auto& row : result.errors) errs.push_back(row);
  j["errors"] = std::move(errs);

  const fs::path out = a.out.empty() ? fs::path("kfold.json") : fs::path(a.out) / "kfold.json";
  if (!a.out.empty()) fs::create_directories(a.out);
  write_text(out, j.dump(2));
  std::cout << j.dump(2) << "\nwrote " << out.string() << "\n";
  return 0;
}

int run_gradcam(const ExplainArgs& a) {
  xmac::Model model = xmac::load_checkpoint(a.checkpoint);
  xmac::MultibandImage img = load_input_image(a.image, a.nir, a.nir_proxy);
  xmac::MultibandImage cropped = xmac::center_crop(img, model.config.input_h);
  auto [rgb, idx] = image_to_tensors(cropped, model.config.index_branch_enabled);

  int target = a.target_class;
  if (target < 0) {
    xmac::Rng rng(0);
    auto out = xmac::forward(model, rgb, idx, xmac::Mode::kInfer, rng);
    target = 0;
    for (int j = 1; j < model.config.num_classes; ++j)
      if ((*out.probabilities.data)[static_cast<size_t>(j)] >
          (*out.probabilities.data)[static_cast<size_t>(target)])
        target = j;
  }

  xmac::SaliencyMap map = xmac::gradcam_pp(model, rgb, idx, target);
  fs::create_directories(a.out);
  xmac::write_image(xmac::overlay_heatmap(cropped, map, a.alpha),
                    (fs::path(a.out) / "overlay.png").string());

  ordered_json j;
  j["class"] = target;
  j["source_layer"] = map.source_layer;
  j["height"] = map.height;
  j["width"] = map.width;
  j["values"] = map.values;
  write_text(fs::path(a.out) / "map.json", j.dump());
  std::cout << "gradcam for class " << target << " written to " << a.out << "\n";
  return 0;
}

int run_shap(const ExplainArgs& a) {
  xmac::Model model = xmac::load_checkpoint(a.checkpoint);
  xmac::MultibandImage img = load_input_image(a.image, a.nir, a.nir_proxy);
  xmac::MultibandImage cropped = xmac::center_crop(img, model.config.input_h);
  auto [rgb, idx] = image_to_tensors(cropped, model.config.index_branch_enabled);

  xmac::FeatureSpec spec;
  if (a.mode == "channels") {
    spec = xmac::FeatureSpec::channels();
  } else if (a.mode == "patches") {
    // default patch edge keeps the feature count at or below 14x14 = 196
    const int patch = a.patch > 0 ? a.patch : (model.config.input_h + 13) / 14;
    spec = xmac::FeatureSpec::patches(patch);
  } else {
    throw xmac::ConfigError("explain shap: mode must be 'channels' or 'patches'");
  }
  if (!a.dataset.empty())
    spec.baseline = xmac::plane_means(xmac::load_dataset(a.dataset), model.config.input_h,
                                      a.nir_proxy);

  int target = a.target_class;
  xmac::Rng rng0(0);
  auto first = xmac::forward(model, rgb, idx, xmac::Mode::kInfer, rng0);
  if (target < 0) {
    target = 0;
    for (int j = 1; j < model.config.num_classes; ++j)
      if ((*first.probabilities.data)[static_cast<size_t>(j)] >
          (*first.probabilities.data)[static_cast<size_t>(target)])
        target = j;
  }

  xmac::PredictFn predict = [&model, target](const xmac::Tensor& r, const xmac::Tensor& i) {
    xmac::Rng rng(0);
    auto out = xmac::forward(model, r, i, xmac::Mode::kInfer, rng);
    return static_cast<double>((*out.probabilities.data)[static_cast<size_t>(target)]);
  };

  xmac::Rng rng(a.seed);
  xmac::Attribution attr =
      a.exact ? xmac::exact_shapley(predict, rgb, idx, spec, target)
              : xmac::kernel_shap(predict, rgb, idx, spec, target, a.samples, rng, false);

  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "shap.json", attr.to_json());
  std::cout << "shap (" << attr.mode << ", " << attr.values.size() << " features) for class "
            << target << " written to " << a.out << "\n";
  return 0;
}

int run_info(const std::string& checkpoint) {
  xmac::Model model = xmac::load_checkpoint(checkpoint);
  std::cout << "parameter_count " << xmac::parameter_count(model) << "\n";
  std::cout << "config " << model.config.to_json() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xmac-edge: multimodal leaf-disease CNN runtime"};
  app.require_subcommand(1);
  app.footer(
      "Environment: XMAC_THREADS caps internal kernel parallelism (default 1; "
      "results are identical for any value).");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a procedural synthetic dataset");
  synth_cmd->add_option("--out", synth.out, "output dataset root")->required();
  synth_cmd->add_option("--size", synth.size, "image edge in pixels");
  synth_cmd->add_option("--per-class", synth.per_class, "images per class");
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_flag("--nir-only", synth.nir_only, "class identity only in the NIR band");

  std::string idx_image, idx_nir, idx_out;
  bool idx_proxy = false;
  auto* idx_cmd = app.add_subcommand("indices", "emit NDVI/NPCI/MCARI PNGs for an image");
  idx_cmd->add_option("--image", idx_image, "input PNG")->required();
  idx_cmd->add_option("--nir", idx_nir, "NIR PNG (defaults to <stem>.nir.png sidecar)");
  idx_cmd->add_flag("--nir-proxy", idx_proxy, "substitute NIR := Green when missing (not physical)");
  idx_cmd->add_option("--out", idx_out, "output directory")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train on a class-per-directory dataset");
  train_cmd->add_option("--dataset", train_args.dataset, "dataset root")->required();
  train_cmd->add_option("--out", train_args.out, "output directory")->required();
  train_cmd->add_option("--preset", train_args.preset, "model preset: toy|small");
  train_cmd->add_option("--config", train_args.config_path, "model config JSON (overrides preset)");
  train_cmd->add_option("--size", train_args.size, "input crop size");
  train_cmd->add_option("--epochs", train_args.epochs, "max epochs");
  train_cmd->add_option("--lr", train_args.lr, "initial learning rate");
  train_cmd->add_option("--batch", train_args.batch, "batch size");
  train_cmd->add_option("--seed", train_args.seed, "seed");
  train_cmd->add_flag("--no-index-branch", train_args.no_index, "ablate the index branch");
  train_cmd->add_flag("--no-attention", train_args.no_attention, "ablate the attention block");
  train_cmd->add_flag("--augment", train_args.augment, "enable flip/rotate/jitter augmentation");
  train_cmd->add_flag("--nir-proxy", train_args.nir_proxy, "substitute NIR := Green when missing");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "classification report, confusion matrix, ROC");
  eval_cmd->add_option("--dataset", eval_args.dataset, "dataset root")->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint path")->required();
  eval_cmd->add_option("--out", eval_args.out, "output directory")->required();
  eval_cmd->add_flag("--bench", eval_args.bench, "measure single-image inference latency");
  eval_cmd->add_flag("--nir-proxy", eval_args.nir_proxy, "substitute NIR := Green when missing");

  KfoldArgs kfold_args;
  auto* kfold_cmd = app.add_subcommand("kfold", "k-fold CV over full/no-index/no-attention");
  kfold_cmd->add_option("--dataset", kfold_args.dataset, "dataset root")->required();
  kfold_cmd->add_option("--out", kfold_args.out, "output directory (default: cwd)");
  kfold_cmd->add_option("--k", kfold_args.k, "number of folds");
  kfold_cmd->add_option("--preset", kfold_args.preset, "model preset: toy|small");
  kfold_cmd->add_option("--size", kfold_args.size, "input crop size");
  kfold_cmd->add_option("--epochs", kfold_args.epochs, "max epochs per fold");
  kfold_cmd->add_option("--lr", kfold_args.lr, "learning rate");
  kfold_cmd->add_option("--batch", kfold_args.batch, "batch size");
  kfold_cmd->add_option("--seed", kfold_args.seed, "seed");
  kfold_cmd->add_flag("--nir-proxy", kfold_args.nir_proxy, "substitute NIR := Green when missing");

  ExplainArgs ex;
  auto* explain_cmd = app.add_subcommand("explain", "saliency and attribution");
  explain_cmd->require_subcommand(1);
  auto* gc_cmd = explain_cmd->add_subcommand("gradcam", "Grad-CAM++ overlay and raw map");
  auto* shap_cmd = explain_cmd->add_subcommand("shap", "Kernel SHAP attributions");
  for (auto* cmd : {gc_cmd, shap_cmd}) {
    cmd->add_option("--checkpoint", ex.checkpoint, "checkpoint path")->required();
    cmd->add_option("--image", ex.image, "input PNG")->required();
    cmd->add_option("--nir", ex.nir, "NIR PNG (defaults to <stem>.nir.png sidecar)");
    cmd->add_option("--out", ex.out, "output directory")->required();
    cmd->add_option("--class", ex.target_class, "target class (default: predicted)");
    cmd->add_flag("--nir-proxy", ex.nir_proxy, "substitute NIR := Green when missing");
  }
  gc_cmd->add_option("--alpha", ex.alpha, "overlay blend weight in [0,1]");
  shap_cmd->add_option("--mode", ex.mode, "feature partition: channels|patches");
  shap_cmd->add_option("--patch", ex.patch, "patch edge in pixels (default keeps <= 196 features)");
  shap_cmd->add_option("--samples", ex.samples, "coalition sample budget");
  shap_cmd->add_flag("--exact", ex.exact, "brute-force enumeration (<= 12 features)");
  shap_cmd->add_option("--dataset", ex.dataset, "dataset for per-plane mean baselines");
  shap_cmd->add_option("--seed", ex.seed, "sampler seed");

  std::string info_checkpoint;
  auto* info_cmd = app.add_subcommand("info", "print checkpoint parameter count and config");
  info_cmd->add_option("--checkpoint", info_checkpoint, "checkpoint path")->required();

  if (argc <= 1) {
    std::cout << app.help() << std::endl;
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::endl;
    return 2;
  }

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*idx_cmd) return run_indices(idx_image, idx_nir, idx_proxy, idx_out);
    if (*train_cmd) return run_train(train_args);
    if (*eval_cmd) return run_eval(eval_args);
    if (*kfold_cmd) return run_kfold_cmd(kfold_args);
    if (*gc_cmd) return run_gradcam(ex);
    if (*shap_cmd) return run_shap(ex);
    if (*info_cmd) return run_info(info_checkpoint);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 2;
}
