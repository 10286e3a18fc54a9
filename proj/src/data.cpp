#include "rvmde/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rvmde/raster_io.hpp"

namespace fs = std::filesystem;

namespace rvmde {

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing file: " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
  }
}

PointCloud load_csv_cloud(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing file: " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path + ":1: empty file, expected header x,y,z[,...]");
  if (line.rfind("x,y,z", 0) != 0) {
    throw std::runtime_error(path + ":1: header must start with x,y,z");
  }
  const size_t n_cols = static_cast<size_t>(std::count(line.begin(), line.end(), ',')) + 1;

  std::vector<double> values;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    size_t start = 0;
    size_t parsed = 0;
    while (start <= line.size()) {
      size_t end = line.find(',', start);
      if (end == std::string::npos) end = line.size();
      const std::string field = line.substr(start, end - start);
      char* endp = nullptr;
      const double v = std::strtod(field.c_str(), &endp);
      if (endp == field.c_str() || *endp != '\0' || !std::isfinite(v)) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad numeric field '" + field + "'");
      }
      values.push_back(v);
      ++parsed;
      start = end + 1;
      if (end == line.size()) break;
    }
    if (parsed != n_cols) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(n_cols) +
                               " columns, got " + std::to_string(parsed));
    }
  }
  PointCloud cloud;
  cloud.frame = Frame::ego;
  const int rows = static_cast<int>(values.size() / n_cols);
  cloud.pts.resize(rows, static_cast<int>(n_cols));
  for (int r = 0; r < rows; ++r) {
    for (size_t c = 0; c < n_cols; ++c) cloud.pts(r, static_cast<int>(c)) = values[r * n_cols + c];
  }
  return cloud;
}

void write_csv_cloud(const std::string& path, const PointCloud& cloud) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "x,y,z";
  for (int c = 3; c < cloud.cols(); ++c) os << ",c" << c;
  os << "\n";
  char buf[64];
  for (int r = 0; r < cloud.size(); ++r) {
    for (int c = 0; c < cloud.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", cloud.pts(r, c));
      os << (c ? "," : "") << buf;
    }
    os << "\n";
  }
}

CalibData load_calib(const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  CalibData calib;
  try {
    const auto& ji = j.at("intrinsics");
    calib.k.fx = ji.at("fx").get<double>();
    calib.k.fy = ji.at("fy").get<double>();
    calib.k.cx = ji.at("cx").get<double>();
    calib.k.cy = ji.at("cy").get<double>();
    const auto& jm = j.at("cam_from_ego");
    if (!jm.is_array() || jm.size() != 16) throw std::runtime_error("cam_from_ego must hold 16 floats");
    Eigen::Matrix4d m;
    for (int i = 0; i < 16; ++i) m(i / 4, i % 4) = jm[static_cast<size_t>(i)].get<double>();
    calib.cam_from_ego = Pose::from_matrix(m);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("invalid calibration in " + path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("invalid calibration in " + path + ": " + e.what());
  }
  try {
    calib.k.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("invalid intrinsics in ") + path + ": " + e.what());
  }
  return calib;
}

}  // namespace

Sample load_sample(const std::string& dir) {
  Sample s;
  s.dir = dir;
  const fs::path base(dir);
  if (!fs::is_directory(base)) throw std::runtime_error("sample directory does not exist: " + dir);
  s.rgb = read_png((base / "image.png").string());
  s.radar = load_csv_cloud((base / "radar.csv").string());
  s.lidar = load_csv_cloud((base / "lidar.csv").string());
  s.calib = load_calib((base / "calib.json").string());
  const nlohmann::json meta = read_json_file((base / "meta.json").string());
  if (!meta.contains("tag")) throw std::runtime_error("meta.json missing 'tag' in " + dir);
  s.tag = tag_from_string(meta.at("tag").get<std::string>());
  return s;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  if (!j.is_array()) throw std::runtime_error("manifest must be a JSON array: " + path);
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::set<std::string> seen;
  for (const auto& item : j) {
    ManifestEntry e;
    e.dir = item.at("dir").get<std::string>();
    e.split = item.at("split").get<std::string>();
    if (e.split != "train" && e.split != "val" && e.split != "test") {
      throw std::runtime_error("manifest: unknown split '" + e.split + "' in " + path);
    }
    if (!seen.insert(e.dir).second) throw std::runtime_error("manifest: duplicate entry '" + e.dir + "'");
    fs::path p(e.dir);
    if (p.is_relative()) p = base / p;
    if (!fs::is_directory(p)) throw std::runtime_error("manifest: sample directory missing: " + p.string());
    e.dir = p.string();
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  nlohmann::json j = nlohmann::json::array();
  const fs::path base = fs::path(path).parent_path();
  for (const ManifestEntry& e : entries) {
    const fs::path rel = fs::relative(e.dir, base);
    j.push_back({{"dir", rel.string()}, {"split", e.split}});
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << j.dump(2) << "\n";
}

RadarMode radar_mode_from_string(const std::string& s) {
  if (s == "height") return RadarMode::height;
  if (s == "mer") return RadarMode::mer;
  if (s == "mer-file") return RadarMode::mer_file;
  if (s == "none") return RadarMode::none;
  throw std::invalid_argument("unknown radar mode '" + s + "' (expected height|mer|mer-file|none)");
}

std::string radar_mode_to_string(RadarMode mode) {
  switch (mode) {
    case RadarMode::height: return "height";
    case RadarMode::mer: return "mer";
    case RadarMode::mer_file: return "mer-file";
    case RadarMode::none: return "none";
  }
  return "?";
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
  Image dst(out_h, out_w);
  const double fy = static_cast<double>(out_h) / src.height;
  const double fx = static_cast<double>(out_w) / src.width;
  for (int y = 0; y < out_h; ++y) {
    double sy = (y + 0.5) / fy - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = sy - y0;
    for (int x = 0; x < out_w; ++x) {
      double sx = (x + 0.5) / fx - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
        const double bot = (1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
        const double v = (1 - wy) * top + wy * bot;
        dst.at(y, x, c) = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return dst;
}

PreprocessedSample preprocess(const Sample& sample, const PreprocessConfig& cfg, const SidBins& bins) {
  if (!(cfg.scale_x > 0) || !(cfg.scale_y > 0)) throw std::invalid_argument("preprocess: scales must be > 0");
  if (cfg.crop_top < 0) throw std::invalid_argument("preprocess: crop_top must be >= 0");

  const int resized_w = static_cast<int>(std::lround(sample.rgb.width * cfg.scale_x));
  const int resized_h = static_cast<int>(std::lround(sample.rgb.height * cfg.scale_y));
  const int work_h = resized_h - cfg.crop_top;
  const int work_w = resized_w;
  if (work_h <= 0) throw std::invalid_argument("preprocess: crop_top consumes the whole image");
  if (work_h % 32 != 0 || work_w % 32 != 0) {
    throw std::invalid_argument(
        "preprocess: working resolution " + std::to_string(work_h) + "x" + std::to_string(work_w) +
        " is not divisible by 32; adjust scale_x/scale_y/crop_top so the resized, cropped image pads out to "
        "a multiple of 32");
  }

  // Effective scales from realized integer sizes keep projection and image
  // resampling consistent.
  const double eff_sx = static_cast<double>(resized_w) / sample.rgb.width;
  const double eff_sy = static_cast<double>(resized_h) / sample.rgb.height;

  PreprocessedSample out;
  out.tag = sample.tag;
  out.id = sample.dir;
  out.working_k = adjust_intrinsics(sample.calib.k, eff_sx, eff_sy, cfg.crop_top);

  Image resized = resize_bilinear(sample.rgb, resized_h, resized_w);
  out.rgb = Tensor<float>({3, work_h, work_w});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < work_h; ++y) {
      for (int x = 0; x < work_w; ++x) {
        const double v = resized.at(y + cfg.crop_top, x, c) / 255.0;
        out.rgb.at(c, y, x) = static_cast<float>((v - cfg.rgb_mean) / cfg.rgb_std);
      }
    }
  }

  switch (cfg.radar_mode) {
    case RadarMode::height:
      out.radar = extend_height(sample.radar, cfg.pillar, sample.calib.cam_from_ego, out.working_k, work_w,
                                work_h);
      break;
    case RadarMode::mer:
      out.radar = build_mer(sample.radar, sample.calib.cam_from_ego, out.working_k, work_w, work_h, cfg.mer);
      break;
    case RadarMode::mer_file:
      out.radar = load_mer((fs::path(sample.dir) / "mer.bin").string(), work_h, work_w);
      break;
    case RadarMode::none:
      out.radar = RadarImage({1, work_h, work_w});
      break;
  }

  const PointCloud lidar_cam = transform_points(sample.lidar, sample.calib.cam_from_ego, Frame::camera);
  const auto projected = project_points(lidar_cam, out.working_k, work_w, work_h);
  out.gt_depth = rasterize_depth(projected, work_w, work_h);
  out.labels = encode_depth(out.gt_depth, bins, cfg.out_of_range);
  out.valid_mask = BoolMap({work_h, work_w});
  for (int64_t i = 0; i < out.gt_depth.numel(); ++i) {
    if (out.gt_depth[i] > 0.0f && out.gt_depth[i] <= cfg.eval_depth_cap) out.valid_mask[i] = 1;
  }
  out.low_height = low_height_mask(sample.lidar, sample.calib.cam_from_ego, out.working_k, work_w, work_h,
                                   cfg.low_height_lo, cfg.low_height_hi);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

void SynthConfig::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("synth: image size must be positive");
  if (!(depth_min > 0) || !(depth_max > depth_min)) throw std::invalid_argument("synth: bad depth range");
  if (min_boxes < 0 || max_boxes < min_boxes) throw std::invalid_argument("synth: bad box count range");
  if (radar_sigma_d < 0) throw std::invalid_argument("synth: radar_sigma_d must be >= 0");
  if (radar_dropout < 0 || radar_dropout > 1) throw std::invalid_argument("synth: dropout must be in [0,1]");
  if (lidar_step < 1) throw std::invalid_argument("synth: lidar_step must be >= 1");
  if (num_samples < 1) throw std::invalid_argument("synth: empty dataset (num_samples must be >= 1)");
  if (!(cam_height > 0)) throw std::invalid_argument("synth: camera must sit above the ground");
}

namespace {

/// Canonical forward-looking camera: ego x forward maps to camera z,
/// ego y left to camera -x, ego z up to camera -y.
Pose canonical_cam_pose(double cam_height) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m(0, 1) = -1;  // cam x = -ego y
  m(1, 2) = -1;  // cam y = -ego z
  m(2, 0) = 1;   // cam z =  ego x
  m(3, 3) = 1;
  const Eigen::Vector3d center(0, 0, cam_height);
  m.block<3, 1>(0, 3) = -m.block<3, 3>(0, 0) * center;
  return Pose::from_matrix(m);
}

struct BoxPrototype {
  double u_c, v_c;          // projected center, pixels
  double half_w, half_h;    // projected half extent, pixels
  std::array<uint8_t, 3> color;
};

/// Shared footprints: instantiating one prototype at different depths
/// produces identical image patches (size and vertical placement follow
/// the projection), which is exactly the ambiguity radar resolves.
std::vector<BoxPrototype> make_prototypes(const SynthConfig& cfg, Rng& rng) {
  const int count = std::max(4, cfg.max_boxes);
  std::vector<BoxPrototype> protos;
  protos.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    BoxPrototype p;
    // stratified columns keep pillars from shadowing each other
    p.u_c = (0.12 + 0.76 * (i + rng.uniform(0.25, 0.75)) / count) * cfg.width;
    p.v_c = 0.5 * cfg.height + rng.uniform(-3.0, 4.0);
    p.half_w = rng.uniform(0.06 * cfg.width, 0.13 * cfg.width);
    p.half_h = rng.uniform(0.11 * cfg.height, 0.18 * cfg.height);
    p.color = {static_cast<uint8_t>(60 + rng.uniform_index(180)),
               static_cast<uint8_t>(60 + rng.uniform_index(180)),
               static_cast<uint8_t>(60 + rng.uniform_index(180))};
    protos.push_back(p);
  }
  return protos;
}

void apply_condition(Image& img, ConditionTag tag, Rng& rng) {
  switch (tag) {
    case ConditionTag::day:
      return;
    case ConditionTag::night:
      for (uint8_t& v : img.pixels) {
        const double noisy = v * 0.35 + rng.uniform(-4.0, 4.0);
        v = static_cast<uint8_t>(std::lround(std::clamp(noisy, 0.0, 255.0)));
      }
      return;
    case ConditionTag::rain:
      for (size_t i = 0; i < img.pixels.size(); i += 3) {
        // desaturate toward gray and darken slightly
        const double gray = (img.pixels[i] + img.pixels[i + 1] + img.pixels[i + 2]) / 3.0;
        for (int c = 0; c < 3; ++c) {
          const double v = 0.8 * (0.5 * img.pixels[i + static_cast<size_t>(c)] + 0.5 * gray);
          img.pixels[i + static_cast<size_t>(c)] = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
      }
      return;
  }
}

}  // namespace

SynthScene make_scene(const SynthConfig& cfg, Rng& rng, int sample_index) {
  SynthScene scene;
  scene.cam_height = cfg.cam_height;
  scene.calib.cam_from_ego = canonical_cam_pose(cfg.cam_height);
  scene.calib.k.fx = scene.calib.k.fy = cfg.focal > 0 ? cfg.focal : 0.75 * cfg.width;
  scene.calib.k.cx = 0.5 * cfg.width;
  scene.calib.k.cy = 0.5 * cfg.height;
  const std::array<ConditionTag, 3> tags = {ConditionTag::day, ConditionTag::night, ConditionTag::rain};
  scene.tag = tags[static_cast<size_t>(sample_index % 3)];

  Rng proto_rng(derive_seed(cfg.seed, 0x50524f54));  // prototype stream shared across samples
  const std::vector<BoxPrototype> protos = make_prototypes(cfg, proto_rng);

  const int n_boxes =
      cfg.min_boxes + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(cfg.max_boxes - cfg.min_boxes + 1)));
  std::vector<size_t> order(protos.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  for (int i = 0; i < n_boxes; ++i) {
    const BoxPrototype& p = protos[order[static_cast<size_t>(i) % order.size()]];
    // Log-uniform depth keeps far boxes from dominating the pixel budget.
    const double d = std::exp(rng.uniform(std::log(cfg.depth_min), std::log(cfg.depth_max)));
    SceneBox box;
    box.depth = d;
    box.y_c = -(p.u_c - scene.calib.k.cx) / scene.calib.k.fx * d;
    box.z_c = cfg.cam_height - (p.v_c - scene.calib.k.cy) / scene.calib.k.fy * d;
    box.half_w = p.half_w * d / scene.calib.k.fx;
    box.half_h = p.half_h * d / scene.calib.k.fy;
    box.color = p.color;
    scene.boxes.push_back(box);
  }
  return scene;
}

RenderResult render_scene(const SynthScene& scene, int width, int height, double max_depth) {
  RenderResult res;
  res.rgb = Image(height, width);
  res.depth = Tensor<float>({height, width});
  res.hit_height = Tensor<float>({height, width});

  const Pose ego_from_cam = scene.calib.cam_from_ego.inverse();
  const Eigen::Matrix3d r = ego_from_cam.rotation();
  const Eigen::Vector3d origin = ego_from_cam.translation();  // camera center in ego
  const Intrinsics& k = scene.calib.k;

  const std::array<uint8_t, 3> sky = {150, 180, 220};
  const std::array<uint8_t, 3> ground = {90, 85, 75};

  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      // Ray through the pixel center, parameterized by camera depth s.
      const Eigen::Vector3d dir_cam((u + 0.5 - k.cx) / k.fx, (v + 0.5 - k.cy) / k.fy, 1.0);
      const Eigen::Vector3d dir = r * dir_cam;
      double best_s = -1;
      double best_z = 0;
      const SceneBox* best_box = nullptr;

      for (const SceneBox& box : scene.boxes) {
        if (dir.x() <= 1e-12) continue;
        const double s = (box.depth - origin.x()) / dir.x();
        if (s <= 1e-6) continue;
        const double y = origin.y() + s * dir.y();
        const double z = origin.z() + s * dir.z();
        if (std::abs(y - box.y_c) > box.half_w || std::abs(z - box.z_c) > box.half_h) continue;
        if (z < 0) continue;  // below ground, never visible
        if (best_s < 0 || s < best_s) {
          best_s = s;
          best_z = z;
          best_box = &box;
        }
      }
      if (dir.z() < -1e-12) {
        const double s = -origin.z() / dir.z();
        if (s > 1e-6 && (best_s < 0 || s < best_s)) {
          best_s = s;
          best_z = 0;
          best_box = nullptr;
        }
      }

      uint8_t cr, cg, cb;
      if (best_s < 0 || best_s > max_depth) {
        cr = sky[0];
        cg = sky[1];
        cb = sky[2];
        best_s = -1;
      } else if (best_box) {
        cr = best_box->color[0];
        cg = best_box->color[1];
        cb = best_box->color[2];
      } else {
        // world-anchored checker; its projected frequency carries the
        // usual perspective depth cue for ground pixels
        const double gx = origin.x() + best_s * dir.x();
        const double gy = origin.y() + best_s * dir.y();
        const bool checker =
            (static_cast<int64_t>(std::floor(gx)) + static_cast<int64_t>(std::floor(gy))) % 2 == 0;
        const double shade = checker ? 1.0 : 0.62;
        cr = static_cast<uint8_t>(ground[0] * shade);
        cg = static_cast<uint8_t>(ground[1] * shade);
        cb = static_cast<uint8_t>(ground[2] * shade);
      }
      res.rgb.at(v, u, 0) = cr;
      res.rgb.at(v, u, 1) = cg;
      res.rgb.at(v, u, 2) = cb;
      if (best_s > 0) {
        res.depth.at(v, u) = static_cast<float>(best_s);
        res.hit_height.at(v, u) = static_cast<float>(best_z);
      }
    }
  }
  return res;
}

PointCloud sample_lidar(const SynthScene& scene, const RenderResult& rendered, int step, double max_depth,
                        double ground_range, int grid_offset) {
  const int height = rendered.depth.dim(0);
  const int width = rendered.depth.dim(1);
  const Pose ego_from_cam = scene.calib.cam_from_ego.inverse();
  const Eigen::Matrix3d r = ego_from_cam.rotation();
  const Eigen::Vector3d origin = ego_from_cam.translation();
  const Intrinsics& k = scene.calib.k;

  std::vector<Eigen::Vector3d> points;
  const int off = step > 1 ? grid_offset % step : 0;
  for (int v = off; v < height; v += step) {
    for (int u = off; u < width; u += step) {
      const double s = rendered.depth.at(v, u);
      if (s <= 0 || s > max_depth) continue;
      // grazing incidence: the ground stops returning beyond ground_range
      if (rendered.hit_height.at(v, u) < 0.01 && s > ground_range) continue;
      const Eigen::Vector3d dir_cam((u + 0.5 - k.cx) / k.fx, (v + 0.5 - k.cy) / k.fy, 1.0);
      points.push_back(origin + r * (dir_cam * s));
    }
  }
  PointCloud cloud;
  cloud.frame = Frame::ego;
  cloud.pts.resize(static_cast<int>(points.size()), 3);
  for (size_t i = 0; i < points.size(); ++i) cloud.pts.row(static_cast<int>(i)) = points[i].transpose();
  return cloud;
}

PointCloud sample_radar(const SynthScene& scene, const SynthConfig& cfg, Rng& rng) {
  std::vector<Eigen::Vector3d> returns;
  for (const SceneBox& box : scene.boxes) {
    const double drop = rng.uniform();
    const double noise = rng.normal(0.0, 1.0);
    const double z_r = rng.uniform(0.5, 1.0);
    if (drop < cfg.radar_dropout) continue;
    returns.emplace_back(box.depth + cfg.radar_sigma_d * noise, box.y_c, z_r);
  }
  PointCloud cloud;
  cloud.frame = Frame::ego;
  cloud.pts.resize(static_cast<int>(returns.size()), 3);
  for (size_t i = 0; i < returns.size(); ++i) cloud.pts.row(static_cast<int>(i)) = returns[i].transpose();
  return cloud;
}

std::vector<ManifestEntry> synth_generate(const SynthConfig& cfg, const std::string& out_dir, int num_val,
                                          int num_test) {
  cfg.validate();
  if (num_val < 0 || num_test < 0 || num_val + num_test >= cfg.num_samples + 1) {
    throw std::invalid_argument("synth: val/test counts exceed sample count");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw std::runtime_error("synth: cannot create output directory " + out_dir);
  }

  std::vector<ManifestEntry> entries;
  MerSpec mer_spec;
  for (int i = 0; i < cfg.num_samples; ++i) {
    Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(i) + 1));
    const SynthScene scene = make_scene(cfg, rng, i);
    const RenderResult rendered = render_scene(scene, cfg.width, cfg.height, cfg.depth_max);
    const double ground_range = cfg.ground_range > 0 ? cfg.ground_range : 0.5 * cfg.depth_max;
    const PointCloud lidar = sample_lidar(scene, rendered, cfg.lidar_step, cfg.depth_max, ground_range, i);
    const PointCloud radar = sample_radar(scene, cfg, rng);

    char name[32];
    std::snprintf(name, sizeof(name), "sample_%04d", i);
    const fs::path dir = fs::path(out_dir) / name;
    fs::create_directories(dir);

    Image rgb = rendered.rgb;
    apply_condition(rgb, scene.tag, rng);
    write_png((dir / "image.png").string(), rgb);
    write_csv_cloud((dir / "radar.csv").string(), radar);
    write_csv_cloud((dir / "lidar.csv").string(), lidar);

    nlohmann::json calib;
    calib["intrinsics"] = {{"fx", scene.calib.k.fx},
                           {"fy", scene.calib.k.fy},
                           {"cx", scene.calib.k.cx},
                           {"cy", scene.calib.k.cy}};
    std::vector<double> mat(16);
    for (int j = 0; j < 16; ++j) mat[static_cast<size_t>(j)] = scene.calib.cam_from_ego.mat(j / 4, j % 4);
    calib["cam_from_ego"] = mat;
    std::ofstream calib_os(dir / "calib.json");
    calib_os << calib.dump(2) << "\n";

    nlohmann::json meta;
    meta["tag"] = tag_to_string(scene.tag);
    std::ofstream meta_os(dir / "meta.json");
    meta_os << meta.dump(2) << "\n";

    if (cfg.emit_mer) {
      const RadarImage mer =
          build_mer(radar, scene.calib.cam_from_ego, scene.calib.k, cfg.width, cfg.height, mer_spec);
      write_raster((dir / "mer.bin").string(), mer);
    }

    ManifestEntry entry;
    entry.dir = dir.string();
    const int from_end = cfg.num_samples - 1 - i;
    entry.split = from_end < num_test ? "test" : (from_end < num_test + num_val ? "val" : "train");
    entries.push_back(std::move(entry));
  }
  save_manifest((fs::path(out_dir) / "manifest.json").string(), entries);
  return entries;
}

}  // namespace rvmde
