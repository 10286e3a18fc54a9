#include "rvmde/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace rvmde {

void Intrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0) || !std::isfinite(fx) || !std::isfinite(fy) || !std::isfinite(cx) ||
      !std::isfinite(cy)) {
    throw std::invalid_argument("invalid intrinsics: fx and fy must be positive and finite");
  }
}

Pose Pose::from_matrix(const Eigen::Matrix4d& m) {
  Pose p;
  p.mat = m;
  p.validate();
  return p;
}

Pose Pose::inverse() const {
  Pose out;
  const Eigen::Matrix3d rt = rotation().transpose();
  out.mat.block<3, 3>(0, 0) = rt;
  out.mat.block<3, 1>(0, 3) = -rt * translation();
  return out;
}

void Pose::validate(double tol) const {
  if (!mat.allFinite()) throw std::invalid_argument("pose: non-finite entries");
  if (mat(3, 0) != 0.0 || mat(3, 1) != 0.0 || mat(3, 2) != 0.0 || mat(3, 3) != 1.0) {
    throw std::invalid_argument("pose: last row must be [0,0,0,1]");
  }
  const Eigen::Matrix3d r = rotation();
  const double err = (r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (err > tol) {
    throw std::invalid_argument("pose: rotation block not orthonormal (error " + std::to_string(err) + ")");
  }
}

PointCloud transform_points(const PointCloud& points, const Pose& pose, Frame target_frame) {
  if (!points.pts.allFinite()) throw std::invalid_argument("transform_points: non-finite input points");
  pose.validate();
  PointCloud out;
  out.frame = target_frame;
  out.pts = points.pts;
  const Eigen::Matrix3d r = pose.rotation();
  const Eigen::Vector3d t = pose.translation();
  for (int i = 0; i < points.size(); ++i) {
    out.pts.block<1, 3>(i, 0) = (r * points.xyz(i) + t).transpose();
  }
  return out;
}

std::vector<ProjectedPoint> project_points(const PointCloud& points_cam, const Intrinsics& k, int width,
                                           int height) {
  k.validate();
  constexpr double kMinZ = 1e-6;
  std::vector<ProjectedPoint> out;
  out.reserve(static_cast<size_t>(points_cam.size()));
  for (int i = 0; i < points_cam.size(); ++i) {
    const double x = points_cam.pts(i, 0);
    const double y = points_cam.pts(i, 1);
    const double z = points_cam.pts(i, 2);
    if (z <= kMinZ) continue;
    const double u = k.fx * x / z + k.cx;
    const double v = k.fy * y / z + k.cy;
    if (u < 0 || u >= width || v < 0 || v >= height) continue;
    out.push_back({u, v, z, i});
  }
  return out;
}

DepthMap rasterize_depth_winners(const std::vector<ProjectedPoint>& projected, int width, int height,
                                 Tensor<int32_t>* winners) {
  DepthMap depth({height, width});
  if (winners) *winners = Tensor<int32_t>::full({height, width}, -1);
  for (const ProjectedPoint& p : projected) {
    const int u = static_cast<int>(std::floor(p.u));
    const int v = static_cast<int>(std::floor(p.v));
    if (u < 0 || u >= width || v < 0 || v >= height) continue;
    float& cell = depth.at(v, u);
    if (cell == 0.0f || p.depth < cell) {
      cell = static_cast<float>(p.depth);
      if (winners) winners->at(v, u) = p.index;
    }
  }
  return depth;
}

DepthMap rasterize_depth(const std::vector<ProjectedPoint>& projected, int width, int height) {
  return rasterize_depth_winners(projected, width, height, nullptr);
}

Intrinsics adjust_intrinsics(const Intrinsics& k, double scale_x, double scale_y, int crop_top) {
  if (!(scale_x > 0) || !(scale_y > 0)) throw std::invalid_argument("adjust_intrinsics: scales must be > 0");
  if (crop_top < 0) throw std::invalid_argument("adjust_intrinsics: crop_top must be >= 0");
  Intrinsics out;
  out.fx = k.fx * scale_x;
  out.fy = k.fy * scale_y;
  out.cx = k.cx * scale_x;
  out.cy = k.cy * scale_y - crop_top;
  return out;
}

}  // namespace rvmde
