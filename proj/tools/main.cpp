// Command-line front end for the depth-estimation pipeline: synthesize
// data, train, evaluate, infer, preview radar augmentation, and run the
// verification suite. Exit codes: 0 ok, 1 usage, 2 data error,
// 3 verification failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rvmde/config.hpp"
#include "rvmde/data.hpp"
#include "rvmde/parallel.hpp"
#include "rvmde/raster_io.hpp"
#include "rvmde/training.hpp"
#include "rvmde/verify.hpp"

namespace fs = std::filesystem;
using namespace rvmde;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerification = 3;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string radar_mode;
  int threads = 0;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_radar = true) {
  cmd->add_option("--config", args.config_path, "JSON run configuration");
  cmd->add_option("--set", args.overrides, "dotted-path config override, e.g. --set model.pyramid_channels=64");
  if (with_radar) {
    cmd->add_option("--radar", args.radar_mode, "radar input mode: height|mer|mer-file|none");
  }
  cmd->add_option("--threads", args.threads, "worker threads (0 = hardware default)");
  cmd->add_flag("--deterministic", args.deterministic, "single-threaded execution");
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg = RunConfig::load(args.config_path, args.overrides);
  if (!args.radar_mode.empty()) cfg.prep.radar_mode = radar_mode_from_string(args.radar_mode);
  if (args.threads > 0) cfg.threads = args.threads;
  if (args.deterministic) cfg.threads = 1;
  if (cfg.threads > 0) set_num_threads(cfg.threads);
  return cfg;
}

int radar_channels_for_mode(RadarMode mode, const ModelConfig& model) {
  switch (mode) {
    case RadarMode::height: return 1;
    case RadarMode::mer:
    case RadarMode::mer_file: return 6;
    case RadarMode::none: return model.radar_in_channels;
  }
  return 1;
}

void check_radar_channels(const RunConfig& cfg) {
  const int produced = radar_channels_for_mode(cfg.prep.radar_mode, cfg.model);
  if (produced != cfg.model.radar_in_channels) {
    throw std::invalid_argument("channel mismatch: radar mode '" + radar_mode_to_string(cfg.prep.radar_mode) +
                                "' produces " + std::to_string(produced) +
                                " channels but the model expects " +
                                std::to_string(cfg.model.radar_in_channels));
  }
}

std::vector<ManifestEntry> entries_for_split(const std::string& manifest_path, const std::string& split) {
  const auto all = load_manifest(manifest_path);
  std::vector<ManifestEntry> out;
  std::map<std::string, int> counts;
  for (const auto& e : all) {
    ++counts[e.split];
    if (e.split == split) out.push_back(e);
  }
  if (out.empty()) {
    std::string listing;
    for (const auto& [name, n] : counts) listing += " " + name + "(" + std::to_string(n) + ")";
    throw std::runtime_error("split '" + split + "' has no samples; available splits:" + listing);
  }
  return out;
}

PreprocessedSample preprocess_entry(const ManifestEntry& entry, const RunConfig& cfg) {
  const Sample sample = load_sample(entry.dir);
  PreprocessedSample pre = preprocess(sample, cfg.prep, cfg.bins);
  if (cfg.prep.radar_mode == RadarMode::none && pre.radar.dim(0) != cfg.model.radar_in_channels) {
    pre.radar = RadarImage({cfg.model.radar_in_channels, pre.radar.dim(1), pre.radar.dim(2)});
  }
  return pre;
}

std::vector<TrainSample> build_dataset(const std::vector<ManifestEntry>& entries, const RunConfig& cfg) {
  std::vector<TrainSample> out;
  out.reserve(entries.size());
  for (const auto& entry : entries) {
    PreprocessedSample pre = preprocess_entry(entry, cfg);
    TrainSample ts;
    ts.rgb = std::move(pre.rgb);
    ts.radar = std::move(pre.radar);
    ts.labels = std::move(pre.labels.labels);
    ts.mask = std::move(pre.labels.mask);
    ts.id = entry.dir;
    out.push_back(std::move(ts));
  }
  return out;
}

Tensor<float> add_batch_dim(const Tensor<float>& t) {
  std::vector<int> shape = {1};
  for (int i = 0; i < t.rank(); ++i) shape.push_back(t.dim(i));
  Tensor<float> out(shape);
  std::copy(t.data(), t.data() + t.numel(), out.data());
  return out;
}

DepthMap predict_depth(Model<float>& model, const PreprocessedSample& pre) {
  nn::Tape<float> tape;
  const auto result =
      model.forward(tape, add_batch_dim(pre.rgb), add_batch_dim(pre.radar), /*training=*/false);
  const Tensor<float>& probs = result.probs->value();  // 1 x K x H x W
  Tensor<float> plane({probs.dim(1), probs.dim(2), probs.dim(3)});
  std::copy(probs.data(), probs.data() + probs.numel(), plane.data());
  return decode_ordinal(plane, model.bins());
}

/// Inverse-depth grayscale visualization; zero depth renders black.
Image depth_to_image(const Tensor<float>& depth_hw, double max_depth) {
  Image img(depth_hw.dim(0), depth_hw.dim(1));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const float d = depth_hw.at(y, x);
      uint8_t v = 0;
      if (d > 0) {
        const double near = 1.0;
        const double t = std::clamp((1.0 / d - 1.0 / max_depth) / (1.0 / near - 1.0 / max_depth), 0.0, 1.0);
        v = static_cast<uint8_t>(std::lround(40 + 215 * t));
      }
      img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = v;
    }
  }
  return img;
}

void write_history_csv(const std::string& path, const TrainHistory& history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "iteration,lr,loss\n";
  char buf[96];
  for (size_t i = 0; i < history.loss.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%lld,%.12g,%.12g\n", static_cast<long long>(history.iteration[i]),
                  history.lr[i], history.loss[i]);
    os << buf;
  }
}

nlohmann::json report_to_json(const MetricsReport& r) {
  return {{"rmse", r.rmse},     {"rmse_log", r.rmse_log}, {"abs_rel", r.abs_rel},
          {"delta1", r.delta1}, {"delta2", r.delta2},     {"delta3", r.delta3},
          {"n_valid", r.n_valid}};
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out_dir, const SynthConfig& synth, int num_val, int num_test) {
  const auto entries = synth_generate(synth, out_dir, num_val, num_test);
  std::cout << "wrote " << entries.size() << " samples\n"
            << (fs::path(out_dir) / "manifest.json").string() << "\n";
  return kExitOk;
}

int cmd_train(const CommonArgs& common, const std::string& manifest, const std::string& split,
              const std::string& out_ckpt, const std::string& history_path, const std::string& resume) {
  RunConfig cfg = resolve_config(common);
  check_radar_channels(cfg);

  const auto entries = entries_for_split(manifest, split);
  std::vector<TrainSample> dataset = build_dataset(entries, cfg);
  for (const TrainSample& ts : dataset) {
    if (ts.rgb.dim(1) != cfg.model.input_h || ts.rgb.dim(2) != cfg.model.input_w) {
      throw std::runtime_error("sample resolution " + std::to_string(ts.rgb.dim(1)) + "x" +
                               std::to_string(ts.rgb.dim(2)) + " does not match model input " +
                               std::to_string(cfg.model.input_h) + "x" + std::to_string(cfg.model.input_w));
    }
  }

  Model<float> model = Model<float>::build(cfg.model, cfg.bins, cfg.train.seed);
  SgdState opt;
  int64_t start_iter = 0;
  if (!resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(resume);
    model = model_from_checkpoint(ckpt);
    opt = sgd_state_from_checkpoint(ckpt);
    start_iter = ckpt.iteration;
    std::cout << "resumed from " << resume << " at iteration " << start_iter << "\n";
  }

  TrainConfig train_cfg = cfg.train;
  train_cfg.checkpoint_path = out_ckpt;
  const TrainHistory history = fit(model, dataset, train_cfg, &opt, start_iter,
                                   [](int64_t iter, double loss, double lr) {
                                     if (iter % 25 == 0) {
                                       std::printf("iter %6lld  lr %.6f  loss %.6f\n",
                                                   static_cast<long long>(iter), lr, loss);
                                     }
                                   });
  if (!history_path.empty()) write_history_csv(history_path, history);
  std::cout << "checkpoint: " << out_ckpt << "\n";
  if (!history.loss.empty()) std::cout << "final loss: " << history.loss.back() << "\n";
  return kExitOk;
}

int cmd_eval(const CommonArgs& common, const std::string& manifest, const std::string& split,
             const std::string& ckpt_path, const std::string& report_path, bool low_height,
             const std::string& dump_pred) {
  RunConfig cfg = resolve_config(common);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (ckpt.bins.alpha != cfg.bins.alpha || ckpt.bins.beta != cfg.bins.beta || ckpt.bins.k != cfg.bins.k) {
    std::cerr << "warning: config bins (" << cfg.bins.alpha << "," << cfg.bins.beta << "," << cfg.bins.k
              << ") differ from checkpoint bins (" << ckpt.bins.alpha << "," << ckpt.bins.beta << ","
              << ckpt.bins.k << "); using checkpoint bins\n";
  }
  cfg.bins = ckpt.bins;
  cfg.model = ckpt.cfg;
  check_radar_channels(cfg);
  Model<float> model = model_from_checkpoint(ckpt);

  const auto entries = entries_for_split(manifest, split);
  if (!dump_pred.empty()) fs::create_directories(dump_pred);

  std::vector<std::pair<MetricsInputs, ConditionTag>> pooled;
  std::vector<std::pair<MetricsInputs, ConditionTag>> pooled_low;
  for (const auto& entry : entries) {
    PreprocessedSample pre = preprocess_entry(entry, cfg);
    DepthMap pred = predict_depth(model, pre);
    if (!dump_pred.empty()) {
      const std::string stem = fs::path(entry.dir).filename().string();
      write_raster((fs::path(dump_pred) / (stem + "_pred.bin")).string(), pred);
      write_png((fs::path(dump_pred) / (stem + "_pred.png")).string(), depth_to_image(pred, cfg.bins.beta));
    }
    MetricsInputs mi{pred, pre.gt_depth, pre.valid_mask};
    if (low_height) {
      BoolMap low(pre.valid_mask.shape());
      for (int64_t i = 0; i < low.numel(); ++i) low[i] = pre.valid_mask[i] && pre.low_height[i];
      pooled_low.push_back({MetricsInputs{pred, pre.gt_depth, low}, pre.tag});
    }
    pooled.push_back({std::move(mi), pre.tag});
  }

  const auto reports = split_report(pooled);
  std::cout << format_report_table(reports);
  nlohmann::json out;
  for (const auto& [name, r] : reports) out["full"][name] = report_to_json(r);
  if (low_height) {
    const auto low_reports = split_report(pooled_low);
    std::cout << "\nlow-height band [" << cfg.prep.low_height_lo << ", " << cfg.prep.low_height_hi << "] m\n"
              << format_report_table(low_reports);
    for (const auto& [name, r] : low_reports) out["low_height"][name] = report_to_json(r);
  }
  if (!report_path.empty()) {
    std::ofstream os(report_path, std::ios::trunc);
    os << out.dump(2) << "\n";
    std::cout << "report: " << report_path << "\n";
  }
  return kExitOk;
}

int cmd_infer(const CommonArgs& common, const std::string& sample_dir, const std::string& ckpt_path,
              const std::string& out_raster, const std::string& out_png) {
  RunConfig cfg = resolve_config(common);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  cfg.bins = ckpt.bins;
  cfg.model = ckpt.cfg;
  check_radar_channels(cfg);
  Model<float> model = model_from_checkpoint(ckpt);
  PreprocessedSample pre = preprocess_entry({sample_dir, "infer"}, cfg);
  const DepthMap pred = predict_depth(model, pre);
  if (!out_raster.empty()) write_raster(out_raster, pred);
  if (!out_png.empty()) write_png(out_png, depth_to_image(pred, cfg.bins.beta));
  std::cout << "prediction " << pred.shape_str() << (out_raster.empty() ? "" : " -> " + out_raster) << "\n";
  return kExitOk;
}

int cmd_augment_preview(const CommonArgs& common, const std::string& sample_dir, const std::string& out_dir) {
  RunConfig cfg = resolve_config(common);
  const Sample sample = load_sample(sample_dir);
  fs::create_directories(out_dir);
  const int w = sample.rgb.width, h = sample.rgb.height;

  const RadarImage pillars =
      extend_height(sample.radar, cfg.prep.pillar, sample.calib.cam_from_ego, sample.calib.k, w, h);
  write_raster((fs::path(out_dir) / "height.bin").string(), pillars);
  Tensor<float> plane({h, w});
  std::copy(pillars.data(), pillars.data() + plane.numel(), plane.data());
  write_png((fs::path(out_dir) / "height.png").string(), depth_to_image(plane, cfg.bins.beta));

  const RadarImage mer = build_mer(sample.radar, sample.calib.cam_from_ego, sample.calib.k, w, h, cfg.prep.mer);
  write_raster((fs::path(out_dir) / "mer.bin").string(), mer);
  for (int c = 0; c < 6; ++c) {
    std::copy(mer.data() + static_cast<int64_t>(c) * h * w, mer.data() + static_cast<int64_t>(c + 1) * h * w,
              plane.data());
    write_png((fs::path(out_dir) / ("mer_ch" + std::to_string(c) + ".png")).string(),
              depth_to_image(plane, cfg.bins.beta));
  }
  std::cout << "radar previews in " << out_dir << "\n";
  return kExitOk;
}

int cmd_verify(const std::string& only, bool inject_fault) {
  verify::Options opts;
  opts.filter = only;
  opts.inject_grad_fault = inject_fault;
  const auto results = verify::run_all(opts);
  std::cout << verify::format_results(results);
  int failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  std::cout << results.size() - static_cast<size_t>(failed) << "/" << results.size() << " checks passed\n";
  return failed == 0 ? kExitOk : kExitVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"radar-validated monocular depth estimation pipeline"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out;
  SynthConfig synth_cfg;
  int synth_val = 0, synth_test = 0;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--num", synth_cfg.num_samples, "number of samples");
  synth->add_option("--seed", synth_cfg.seed, "generator seed");
  synth->add_option("--width", synth_cfg.width, "image width");
  synth->add_option("--height", synth_cfg.height, "image height");
  synth->add_option("--depth-min", synth_cfg.depth_min, "nearest box depth, meters");
  synth->add_option("--depth-max", synth_cfg.depth_max, "farthest box depth / lidar range, meters");
  synth->add_option("--sigma-d", synth_cfg.radar_sigma_d, "radar depth noise, meters");
  synth->add_option("--dropout", synth_cfg.radar_dropout, "radar return drop probability");
  synth->add_option("--lidar-step", synth_cfg.lidar_step, "lidar grid step in pixels");
  synth->add_option("--cam-height", synth_cfg.cam_height, "camera height above ground, meters");
  synth->add_option("--focal", synth_cfg.focal, "focal length in pixels (0 = 0.75 * width)");
  synth->add_option("--ground-range", synth_cfg.ground_range,
                    "lidar range for grazing ground returns (0 = depth_max / 2)");
  synth->add_option("--min-boxes", synth_cfg.min_boxes, "minimum boxes per scene");
  synth->add_option("--max-boxes", synth_cfg.max_boxes, "maximum boxes per scene");
  synth->add_option("--val", synth_val, "samples assigned to the val split");
  synth->add_option("--test", synth_test, "samples assigned to the test split");
  synth->add_flag("--emit-mer", synth_cfg.emit_mer, "also write mer.bin per sample");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  CommonArgs train_common;
  std::string train_manifest, train_split = "train", train_ckpt = "model.rvck", train_history, train_resume;
  add_common(train, train_common);
  train->add_option("--data", train_manifest, "manifest.json path")->required();
  train->add_option("--split", train_split, "manifest split to train on");
  train->add_option("--out", train_ckpt, "checkpoint output path");
  train->add_option("--history", train_history, "loss-curve CSV output path");
  train->add_option("--resume", train_resume, "checkpoint to resume from");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint over a split");
  CommonArgs eval_common;
  std::string eval_manifest, eval_split = "test", eval_ckpt, eval_report, eval_dump;
  bool eval_low = false;
  add_common(eval, eval_common);
  eval->add_option("--data", eval_manifest, "manifest.json path")->required();
  eval->add_option("--split", eval_split, "manifest split to evaluate");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--out", eval_report, "JSON report output path");
  eval->add_option("--dump-pred", eval_dump, "directory for per-sample predicted depth rasters");
  eval->add_flag("--low-height", eval_low, "also report the low-height band");

  // infer
  auto* infer = app.add_subcommand("infer", "predict depth for one sample directory");
  CommonArgs infer_common;
  std::string infer_sample, infer_ckpt, infer_out = "pred.bin", infer_png;
  add_common(infer, infer_common);
  infer->add_option("--sample", infer_sample, "sample directory")->required();
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint path")->required();
  infer->add_option("--out", infer_out, "raster output path");
  infer->add_option("--png", infer_png, "grayscale visualization output path");

  // augment-preview
  auto* preview = app.add_subcommand("augment-preview", "write pillar/MER rasters and visualizations");
  CommonArgs preview_common;
  std::string preview_sample, preview_out = "preview";
  add_common(preview, preview_common, /*with_radar=*/false);
  preview->add_option("--sample", preview_sample, "sample directory")->required();
  preview->add_option("--out", preview_out, "output directory");

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "run the verification suite");
  std::string verify_only;
  bool verify_fault = false;
  verify_cmd->add_option("--only", verify_only, "run only checks whose name contains this substring");
  verify_cmd
      ->add_flag("--inject-grad-fault", verify_fault,
                 "test fixture: corrupt the ordinal-loss gradient to prove the harness detects it")
      ->group("");  // hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_out, synth_cfg, synth_val, synth_test);
    if (train->parsed())
      return cmd_train(train_common, train_manifest, train_split, train_ckpt, train_history, train_resume);
    if (eval->parsed())
      return cmd_eval(eval_common, eval_manifest, eval_split, eval_ckpt, eval_report, eval_low, eval_dump);
    if (infer->parsed()) return cmd_infer(infer_common, infer_sample, infer_ckpt, infer_out, infer_png);
    if (preview->parsed()) return cmd_augment_preview(preview_common, preview_sample, preview_out);
    if (verify_cmd->parsed()) return cmd_verify(verify_only, verify_fault);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
