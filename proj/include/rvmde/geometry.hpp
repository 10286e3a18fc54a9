#ifndef RVMDE_GEOMETRY_HPP
#define RVMDE_GEOMETRY_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "rvmde/tensor.hpp"

namespace rvmde {

/// Pinhole intrinsics in pixels.
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;

  void validate() const;
};

/// Coordinate frame tag for point clouds.
/// ego: x forward, y left, z = height above ground.
/// camera: z forward, x right, y down.
enum class Frame { ego, camera };

/// N x C point matrix (C >= 3), columns 0..2 = x,y,z in meters. Extra
/// columns (velocity, RCS, ...) ride along untouched.
struct PointCloud {
  Frame frame = Frame::ego;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> pts;

  int size() const { return static_cast<int>(pts.rows()); }
  int cols() const { return static_cast<int>(pts.cols()); }
  Eigen::Vector3d xyz(int i) const { return pts.block<1, 3>(i, 0).transpose(); }
};

/// Rigid transform as a 4x4 homogeneous matrix.
struct Pose {
  Eigen::Matrix4d mat = Eigen::Matrix4d::Identity();

  static Pose identity() { return Pose{}; }
  static Pose from_matrix(const Eigen::Matrix4d& m);

  Eigen::Matrix3d rotation() const { return mat.block<3, 3>(0, 0); }
  Eigen::Vector3d translation() const { return mat.block<3, 1>(0, 3); }
  Pose inverse() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation() * p + translation(); }

  /// Rotation block orthonormal within tol, last row exactly [0,0,0,1].
  void validate(double tol = 1e-6) const;
};

/// A point projected into the image plane; depth is camera-frame z.
struct ProjectedPoint {
  double u = 0, v = 0, depth = 0;
  int index = -1;  // row in the source cloud
};

/// R*p + t on columns 0..2; extra columns pass through. Frame tag of the
/// output is taken from `target_frame`.
PointCloud transform_points(const PointCloud& points, const Pose& pose, Frame target_frame);

/// Pinhole projection of camera-frame points. Points behind the camera
/// (z <= 1e-6) or outside [0,width) x [0,height) are dropped; survivor
/// order follows input order.
std::vector<ProjectedPoint> project_points(const PointCloud& points_cam, const Intrinsics& k, int width,
                                           int height);

/// Z-buffer rasterization: pixel (floor u, floor v) keeps the minimum depth
/// of all points landing on it; untouched pixels stay 0.
DepthMap rasterize_depth(const std::vector<ProjectedPoint>& projected, int width, int height);

/// As rasterize_depth, additionally recording the source-cloud index of the
/// winning point per pixel (-1 where empty).
DepthMap rasterize_depth_winners(const std::vector<ProjectedPoint>& projected, int width, int height,
                                 Tensor<int32_t>* winners);

/// Intrinsics after resizing by (scale_x, scale_y) then cropping crop_top
/// rows off the top.
Intrinsics adjust_intrinsics(const Intrinsics& k, double scale_x, double scale_y, int crop_top);

}  // namespace rvmde

#endif  // RVMDE_GEOMETRY_HPP
