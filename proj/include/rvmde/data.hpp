#ifndef RVMDE_DATA_HPP
#define RVMDE_DATA_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rvmde/discretization.hpp"
#include "rvmde/evaluation.hpp"
#include "rvmde/geometry.hpp"
#include "rvmde/png_io.hpp"
#include "rvmde/radar_input.hpp"
#include "rvmde/rng.hpp"
#include "rvmde/tensor.hpp"

namespace rvmde {

// On-disk sample layout: one directory per scene instant containing
//   image.png   8-bit RGB
//   radar.csv   header x,y,z[,...], one ego-frame point per row, meters
//   lidar.csv   same schema
//   calib.json  {"intrinsics": {fx,fy,cx,cy}, "cam_from_ego": [16 floats row-major]}
//   meta.json   {"tag": "day"|"night"|"rain"}
// plus optionally mer.bin (see radar_input raster format).

struct CalibData {
  Intrinsics k;
  Pose cam_from_ego;
};

struct Sample {
  std::string dir;
  Image rgb;
  PointCloud radar;
  PointCloud lidar;
  CalibData calib;
  ConditionTag tag = ConditionTag::day;
};

Sample load_sample(const std::string& dir);

struct ManifestEntry {
  std::string dir;    // absolute after load; relative inside the file
  std::string split;  // train | val | test
};

std::vector<ManifestEntry> load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

enum class RadarMode { height, mer, mer_file, none };

RadarMode radar_mode_from_string(const std::string& s);
std::string radar_mode_to_string(RadarMode mode);

struct PreprocessConfig {
  double scale_x = 1.0;
  double scale_y = 1.0;
  int crop_top = 0;
  double rgb_mean = 0.5;  // applied per channel after scaling to [0,1]
  double rgb_std = 0.25;
  RadarMode radar_mode = RadarMode::height;
  PillarSpec pillar;
  MerSpec mer;
  double eval_depth_cap = 80.0;
  double low_height_lo = 0.3;
  double low_height_hi = 2.0;
  OutOfRange out_of_range = OutOfRange::clamp;
};

struct PreprocessedSample {
  Tensor<float> rgb;       // 3 x H x W, normalized
  RadarImage radar;        // C x H x W meters (all-zero 1-channel for RadarMode::none)
  OrdinalLabelMap labels;  // encoded lidar ground truth
  DepthMap gt_depth;       // H x W meters
  BoolMap valid_mask;      // gt > 0 and gt <= eval_depth_cap
  BoolMap low_height;      // winning lidar point within the low band
  ConditionTag tag = ConditionTag::day;
  Intrinsics working_k;    // intrinsics at working resolution
  std::string id;
};

/// Resize + crop + normalize the image, adjust intrinsics once, and reuse
/// them for radar rendering and lidar ground-truth rasterization.
PreprocessedSample preprocess(const Sample& sample, const PreprocessConfig& cfg, const SidBins& bins);

/// Bilinear resize with half-pixel centers; channels handled independently.
Image resize_bilinear(const Image& src, int out_h, int out_w);

// ---------------------------------------------------------------------------
// Synthetic scenes: a ground plane plus front-parallel flat-shaded boxes.
// Box projected footprints are sampled from shared prototypes and world
// size scales with depth, so identical image patches occur at different
// depths; only radar disambiguates them.

struct SynthConfig {
  int width = 128;
  int height = 64;
  double depth_min = 2.0;
  double depth_max = 40.0;
  int min_boxes = 2;
  int max_boxes = 4;
  double radar_sigma_d = 0.0;  // depth noise, meters
  double radar_dropout = 0.0;  // per-return drop probability
  int lidar_step = 2;          // sample every Nth pixel in both axes
  double ground_range = 0.0;   // lidar ground returns beyond this vanish
                               // (grazing incidence); 0 picks depth_max / 2
  double cam_height = 1.5;     // meters above ground
  double focal = 0.0;          // fx = fy in pixels; 0 picks 0.75 * width
  int num_samples = 8;
  uint64_t seed = 0;
  bool emit_mer = false;       // also write mer.bin per sample

  void validate() const;
};

struct SceneBox {
  double depth = 0;   // ego x of the front face
  double y_c = 0;     // ego y of the center
  double z_c = 0;     // ego z of the center
  double half_w = 0;  // meters
  double half_h = 0;
  std::array<uint8_t, 3> color = {0, 0, 0};
};

struct SynthScene {
  std::vector<SceneBox> boxes;
  CalibData calib;
  double cam_height = 1.5;
  ConditionTag tag = ConditionTag::day;
};

struct RenderResult {
  Image rgb;
  Tensor<float> depth;       // camera-frame z per pixel; 0 where no hit in range
  Tensor<float> hit_height;  // ego z of the hit; only meaningful where depth > 0
};

/// Per-pixel ray casting against box front faces and the ground plane;
/// nearest hit wins. Hits beyond max_depth render as sky with no depth.
RenderResult render_scene(const SynthScene& scene, int width, int height, double max_depth);

SynthScene make_scene(const SynthConfig& cfg, Rng& rng, int sample_index);

/// Lidar sampling of the rendered surfaces on the pixel grid (exact hit
/// points in ego coordinates) and one radar return per box with optional
/// depth noise and dropout.
PointCloud sample_lidar(const SynthScene& scene, const RenderResult& rendered, int step, double max_depth,
                        double ground_range, int grid_offset = 0);
PointCloud sample_radar(const SynthScene& scene, const SynthConfig& cfg, Rng& rng);

/// Generate num_samples sample directories plus manifest.json. The last
/// num_val + num_test samples are tagged val/test.
std::vector<ManifestEntry> synth_generate(const SynthConfig& cfg, const std::string& out_dir, int num_val = 0,
                                          int num_test = 0);

}  // namespace rvmde

#endif  // RVMDE_DATA_HPP
