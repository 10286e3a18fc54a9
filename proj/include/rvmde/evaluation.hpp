#ifndef RVMDE_EVALUATION_HPP
#define RVMDE_EVALUATION_HPP

#include <map>
#include <string>
#include <vector>

#include "rvmde/geometry.hpp"
#include "rvmde/tensor.hpp"

namespace rvmde {

enum class ConditionTag { day, night, rain };

ConditionTag tag_from_string(const std::string& s);
std::string tag_to_string(ConditionTag tag);

struct MetricsReport {
  double rmse = 0;
  double rmse_log = 0;
  double abs_rel = 0;
  double delta1 = 0;
  double delta2 = 0;
  double delta3 = 0;
  int64_t n_valid = 0;
  int64_t n_pred_clamped = 0;  // predictions below 1e-3 m clamped before logs
};

/// Pixel-pooled accumulator so splits and "combine" share one code path.
class MetricsAccumulator {
 public:
  void add(const DepthMap& pred, const DepthMap& gt, const BoolMap& mask);
  void merge(const MetricsAccumulator& other);
  MetricsReport report() const;
  int64_t count() const { return n_; }

 private:
  int64_t n_ = 0;
  int64_t n_clamped_ = 0;
  double sum_sq_err_ = 0;
  double sum_sq_log_err_ = 0;
  double sum_abs_rel_ = 0;
  int64_t n_delta1_ = 0, n_delta2_ = 0, n_delta3_ = 0;
};

/// Metrics over pixels where mask is set. mask must imply gt > 0;
/// predictions must be positive under the mask (values below 1e-3 m are
/// clamped for the log metric and counted).
MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt, const BoolMap& mask);

/// Pixels whose winning ground-truth lidar point lies z in [z_lo, z_hi]
/// above ground. lidar_ego must be in the ego frame.
BoolMap low_height_mask(const PointCloud& lidar_ego, const Pose& cam_from_ego, const Intrinsics& k, int width,
                        int height, double z_lo = 0.3, double z_hi = 2.0);

struct MetricsInputs {
  DepthMap pred;
  DepthMap gt;
  BoolMap mask;
};

/// Pixel-pooled per-condition reports plus "combine" over everything.
std::map<std::string, MetricsReport> split_report(
    const std::vector<std::pair<MetricsInputs, ConditionTag>>& per_sample);

/// Aligned text table, one row per split.
std::string format_report_table(const std::map<std::string, MetricsReport>& reports);

}  // namespace rvmde

#endif  // RVMDE_EVALUATION_HPP
