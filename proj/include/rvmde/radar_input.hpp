#ifndef RVMDE_RADAR_INPUT_HPP
#define RVMDE_RADAR_INPUT_HPP

#include <array>
#include <string>

#include "rvmde/geometry.hpp"
#include "rvmde/tensor.hpp"

namespace rvmde {

/// Image-plane radar representation: C x H x W, values are depth in
/// meters, 0 = no radar evidence. C = 1 (height-extended) or 6 (MER).
using RadarImage = Tensor<float>;

/// Vertical extension range of a radar return, meters above ground.
struct PillarSpec {
  double z_lo = 0.3;
  double z_hi = 2.0;

  void validate() const;
};

/// Geometric stand-in for a learned pixel-depth association: an
/// image-plane Gaussian around each return, sliced at five descending
/// confidence thresholds.
struct MerSpec {
  double sigma_u = 6.0;
  double sigma_v = 12.0;
  std::array<double, 5> thresholds = {0.9, 0.7, 0.5, 0.3, 0.1};

  void validate() const;
};

/// Stretch each radar return into a vertical pixel pillar spanning
/// [z_lo, z_hi] above ground and paint the pillar with the return's
/// camera-frame depth; collisions keep the minimum depth. radar_ego must
/// be in the ego frame (z = height above ground). Pillars partially
/// outside the image are truncated; returns behind the camera are skipped.
RadarImage extend_height(const PointCloud& radar_ego, const PillarSpec& pillar, const Pose& cam_from_ego,
                         const Intrinsics& k, int width, int height);

/// Six-channel enhanced radar image. Channel 0 holds the raw rasterized
/// depth. For channels 1..5, pixel (u,v) holds d wherever
/// exp(-((u-u0)^2/su^2 + (v-v0)^2/sv^2)/2) >= tau_j, measured from the
/// return's own pixel (which therefore has confidence exactly 1); nearest
/// depth wins on overlap.
RadarImage build_mer(const PointCloud& radar_ego, const Pose& cam_from_ego, const Intrinsics& k, int width,
                     int height, const MerSpec& spec);

/// Read a precomputed MER raster; validates 6 channels, non-negative
/// values, and (when expected_* > 0) agreement with the paired image size.
RadarImage load_mer(const std::string& path, int expected_height = -1, int expected_width = -1);

}  // namespace rvmde

#endif  // RVMDE_RADAR_INPUT_HPP
