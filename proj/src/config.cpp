#include "rvmde/config.hpp"

#include <fstream>

namespace rvmde {

namespace {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {
      {"stage_channels", cfg.stage_channels},
      {"blocks_per_stage", cfg.blocks_per_stage},
      {"pyramid_channels", cfg.pyramid_channels},
      {"radar_channels", cfg.radar_channels},
      {"radar_in_channels", cfg.radar_in_channels},
      {"head_channels", cfg.head_channels},
      {"k_bins", cfg.k_bins},
      {"norm", cfg.norm == NormKind::group ? "group" : "batch"},
      {"norm_groups", cfg.norm_groups},
      {"input_h", cfg.input_h},
      {"input_w", cfg.input_w},
      {"radar_full_depth", cfg.radar_full_depth},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  maybe(j, "stage_channels", cfg.stage_channels);
  maybe(j, "blocks_per_stage", cfg.blocks_per_stage);
  maybe(j, "pyramid_channels", cfg.pyramid_channels);
  maybe(j, "radar_channels", cfg.radar_channels);
  maybe(j, "radar_in_channels", cfg.radar_in_channels);
  maybe(j, "head_channels", cfg.head_channels);
  maybe(j, "k_bins", cfg.k_bins);
  if (j.contains("norm")) {
    const std::string norm = j.at("norm").get<std::string>();
    if (norm == "group") {
      cfg.norm = NormKind::group;
    } else if (norm == "batch") {
      cfg.norm = NormKind::batch;
    } else {
      throw std::invalid_argument("model config: unknown norm '" + norm + "' (expected group|batch)");
    }
  }
  maybe(j, "norm_groups", cfg.norm_groups);
  maybe(j, "input_h", cfg.input_h);
  maybe(j, "input_w", cfg.input_w);
  maybe(j, "radar_full_depth", cfg.radar_full_depth);
  return cfg;
}

nlohmann::json bins_to_json(const SidBins& bins) {
  return {{"alpha", bins.alpha}, {"beta", bins.beta}, {"k", bins.k}};
}

SidBins bins_from_json(const nlohmann::json& j) {
  double alpha = 1.0, beta = 80.0;
  int k = 80;
  maybe(j, "alpha", alpha);
  maybe(j, "beta", beta);
  maybe(j, "k", k);
  return sid_thresholds(alpha, beta, k);
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {
      {"lr0", cfg.lr0},
      {"poly_power", cfg.poly_power},
      {"momentum", cfg.momentum},
      {"weight_decay", cfg.weight_decay},
      {"batch_size", cfg.batch_size},
      {"epochs", cfg.epochs},
      {"seed", cfg.seed},
      {"step_decay", cfg.step_decay},
      {"checkpoint_every", cfg.checkpoint_every},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  maybe(j, "lr0", cfg.lr0);
  maybe(j, "poly_power", cfg.poly_power);
  maybe(j, "momentum", cfg.momentum);
  maybe(j, "weight_decay", cfg.weight_decay);
  maybe(j, "batch_size", cfg.batch_size);
  maybe(j, "epochs", cfg.epochs);
  maybe(j, "seed", cfg.seed);
  maybe(j, "step_decay", cfg.step_decay);
  maybe(j, "checkpoint_every", cfg.checkpoint_every);
  return cfg;
}

nlohmann::json preprocess_config_to_json(const PreprocessConfig& cfg) {
  return {
      {"scale_x", cfg.scale_x},
      {"scale_y", cfg.scale_y},
      {"crop_top", cfg.crop_top},
      {"rgb_mean", cfg.rgb_mean},
      {"rgb_std", cfg.rgb_std},
      {"radar_mode", radar_mode_to_string(cfg.radar_mode)},
      {"pillar", {cfg.pillar.z_lo, cfg.pillar.z_hi}},
      {"mer_sigma_u", cfg.mer.sigma_u},
      {"mer_sigma_v", cfg.mer.sigma_v},
      {"mer_thresholds", cfg.mer.thresholds},
      {"eval_depth_cap", cfg.eval_depth_cap},
      {"low_height", {cfg.low_height_lo, cfg.low_height_hi}},
      {"out_of_range", cfg.out_of_range == OutOfRange::clamp ? "clamp" : "mask"},
  };
}

PreprocessConfig preprocess_config_from_json(const nlohmann::json& j) {
  PreprocessConfig cfg;
  maybe(j, "scale_x", cfg.scale_x);
  maybe(j, "scale_y", cfg.scale_y);
  maybe(j, "crop_top", cfg.crop_top);
  maybe(j, "rgb_mean", cfg.rgb_mean);
  maybe(j, "rgb_std", cfg.rgb_std);
  if (j.contains("radar_mode")) cfg.radar_mode = radar_mode_from_string(j.at("radar_mode").get<std::string>());
  if (j.contains("pillar")) {
    const auto arr = j.at("pillar").get<std::vector<double>>();
    if (arr.size() != 2) throw std::invalid_argument("preprocess config: pillar must be [z_lo, z_hi]");
    cfg.pillar.z_lo = arr[0];
    cfg.pillar.z_hi = arr[1];
  }
  maybe(j, "mer_sigma_u", cfg.mer.sigma_u);
  maybe(j, "mer_sigma_v", cfg.mer.sigma_v);
  maybe(j, "mer_thresholds", cfg.mer.thresholds);
  maybe(j, "eval_depth_cap", cfg.eval_depth_cap);
  if (j.contains("low_height")) {
    const auto arr = j.at("low_height").get<std::vector<double>>();
    if (arr.size() != 2) throw std::invalid_argument("preprocess config: low_height must be [lo, hi]");
    cfg.low_height_lo = arr[0];
    cfg.low_height_hi = arr[1];
  }
  if (j.contains("out_of_range")) {
    const std::string oor = j.at("out_of_range").get<std::string>();
    if (oor == "clamp") {
      cfg.out_of_range = OutOfRange::clamp;
    } else if (oor == "mask") {
      cfg.out_of_range = OutOfRange::mask;
    } else {
      throw std::invalid_argument("preprocess config: out_of_range must be clamp|mask");
    }
  }
  return cfg;
}

nlohmann::json RunConfig::to_json() const {
  return {
      {"model", model_config_to_json(model)},
      {"bins", bins_to_json(bins)},
      {"train", train_config_to_json(train)},
      {"preprocess", preprocess_config_to_json(prep)},
      {"threads", threads},
  };
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig cfg;
  if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
  if (j.contains("bins")) cfg.bins = bins_from_json(j.at("bins"));
  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
  if (j.contains("preprocess")) cfg.prep = preprocess_config_from_json(j.at("preprocess"));
  maybe(j, "threads", cfg.threads);
  return cfg;
}

void apply_override(nlohmann::json& j, const std::string& dotted) {
  const size_t eq = dotted.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override must look like section.key=value, got '" + dotted + "'");
  }
  const std::string path = dotted.substr(0, eq);
  const std::string value_str = dotted.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(value_str);
  } catch (const nlohmann::json::exception&) {
    value = value_str;  // bare words are strings
  }
  nlohmann::json* cursor = &j;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw std::invalid_argument("override has an empty path segment: '" + dotted + "'");
    if (dot == std::string::npos) {
      (*cursor)[key] = value;
      return;
    }
    cursor = &(*cursor)[key];
    start = dot + 1;
  }
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("config: malformed JSON in " + path + ": " + e.what());
    }
  }
  for (const std::string& o : overrides) apply_override(j, o);
  return from_json(j);
}

}  // namespace rvmde
