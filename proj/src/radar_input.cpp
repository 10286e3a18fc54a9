#include "rvmde/radar_input.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rvmde/raster_io.hpp"

namespace rvmde {

void PillarSpec::validate() const {
  if (!(z_lo < z_hi)) throw std::invalid_argument("pillar: z_lo must be below z_hi");
}

void MerSpec::validate() const {
  if (!(sigma_u > 0) || !(sigma_v > 0)) throw std::invalid_argument("mer: sigmas must be > 0");
  double prev = 1.0;
  for (double tau : thresholds) {
    if (!(tau > 0) || !(tau < prev)) {
      throw std::invalid_argument("mer: thresholds must be strictly descending within (0,1)");
    }
    prev = tau;
  }
}

namespace {

constexpr double kMinZ = 1e-6;

void min_write(float& cell, float depth) {
  if (cell == 0.0f || depth < cell) cell = depth;
}

}  // namespace

RadarImage extend_height(const PointCloud& radar_ego, const PillarSpec& pillar, const Pose& cam_from_ego,
                         const Intrinsics& k, int width, int height) {
  pillar.validate();
  k.validate();
  if (radar_ego.frame != Frame::ego) throw std::invalid_argument("extend_height: radar must be in ego frame");
  if (!radar_ego.pts.allFinite()) throw std::invalid_argument("extend_height: non-finite radar points");

  RadarImage img({1, height, width});
  const Eigen::Matrix3d r = cam_from_ego.rotation();
  const Eigen::Vector3d t = cam_from_ego.translation();
  for (int i = 0; i < radar_ego.size(); ++i) {
    const double x = radar_ego.pts(i, 0);
    const double y = radar_ego.pts(i, 1);
    const Eigen::Vector3d lo = r * Eigen::Vector3d(x, y, pillar.z_lo) + t;
    const Eigen::Vector3d hi = r * Eigen::Vector3d(x, y, pillar.z_hi) + t;
    if (lo.z() <= kMinZ || hi.z() <= kMinZ) continue;
    const double u_lo = k.fx * lo.x() / lo.z() + k.cx;
    const double u_hi = k.fx * hi.x() / hi.z() + k.cx;
    const double v_lo = k.fy * lo.y() / lo.z() + k.cy;
    const double v_hi = k.fy * hi.y() / hi.z() + k.cy;
    const int col = static_cast<int>(std::floor(0.5 * (u_lo + u_hi)));
    if (col < 0 || col >= width) continue;
    // Depth of the pillar midpoint in the camera frame.
    const Eigen::Vector3d mid = r * Eigen::Vector3d(x, y, 0.5 * (pillar.z_lo + pillar.z_hi)) + t;
    const float depth = static_cast<float>(mid.z());
    if (depth <= kMinZ) continue;
    int row0 = static_cast<int>(std::floor(std::min(v_lo, v_hi)));
    int row1 = static_cast<int>(std::floor(std::max(v_lo, v_hi)));
    row0 = std::max(row0, 0);
    row1 = std::min(row1, height - 1);
    for (int row = row0; row <= row1; ++row) {
      min_write(img.at(0, row, col), depth);
    }
  }
  return img;
}

RadarImage build_mer(const PointCloud& radar_ego, const Pose& cam_from_ego, const Intrinsics& k, int width,
                     int height, const MerSpec& spec) {
  spec.validate();
  k.validate();
  if (radar_ego.frame != Frame::ego) throw std::invalid_argument("build_mer: radar must be in ego frame");

  RadarImage img({6, height, width});
  const PointCloud cam = transform_points(radar_ego, cam_from_ego, Frame::camera);
  const std::vector<ProjectedPoint> projected = project_points(cam, k, width, height);

  // Footprint radius where the weakest threshold still admits pixels.
  const double tau_min = spec.thresholds.back();
  const double radius_scale = std::sqrt(2.0 * std::log(1.0 / tau_min));
  const int ru = static_cast<int>(std::ceil(spec.sigma_u * radius_scale));
  const int rv = static_cast<int>(std::ceil(spec.sigma_v * radius_scale));

  for (const ProjectedPoint& p : projected) {
    const int u0 = static_cast<int>(std::floor(p.u));
    const int v0 = static_cast<int>(std::floor(p.v));
    const float depth = static_cast<float>(p.depth);
    min_write(img.at(0, v0, u0), depth);
    for (int v = std::max(0, v0 - rv); v <= std::min(height - 1, v0 + rv); ++v) {
      for (int u = std::max(0, u0 - ru); u <= std::min(width - 1, u0 + ru); ++u) {
        const double du = u - u0;
        const double dv = v - v0;
        const double conf =
            std::exp(-0.5 * (du * du / (spec.sigma_u * spec.sigma_u) + dv * dv / (spec.sigma_v * spec.sigma_v)));
        for (size_t j = 0; j < spec.thresholds.size(); ++j) {
          if (conf >= spec.thresholds[j]) min_write(img.at(static_cast<int>(j) + 1, v, u), depth);
        }
      }
    }
  }
  return img;
}

RadarImage load_mer(const std::string& path, int expected_height, int expected_width) {
  Tensor<float> raster = read_raster(path);
  if (raster.dim(0) != 6) {
    throw std::runtime_error("load_mer: expected 6 channels, got " + std::to_string(raster.dim(0)) + " in " +
                             path);
  }
  if ((expected_height > 0 && raster.dim(1) != expected_height) ||
      (expected_width > 0 && raster.dim(2) != expected_width)) {
    throw std::runtime_error("load_mer: raster " + raster.shape_str() + " does not match paired image " +
                             std::to_string(expected_height) + "x" + std::to_string(expected_width) + " in " +
                             path);
  }
  for (int64_t i = 0; i < raster.numel(); ++i) {
    if (!(raster[i] >= 0.0f) || !std::isfinite(raster[i])) {
      throw std::runtime_error("load_mer: negative depth or non-finite value in " + path);
    }
  }
  return raster;
}

}  // namespace rvmde
