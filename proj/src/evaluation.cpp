#include "rvmde/evaluation.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace rvmde {

ConditionTag tag_from_string(const std::string& s) {
  if (s == "day") return ConditionTag::day;
  if (s == "night") return ConditionTag::night;
  if (s == "rain") return ConditionTag::rain;
  throw std::invalid_argument("unknown condition tag '" + s + "' (expected day|night|rain)");
}

std::string tag_to_string(ConditionTag tag) {
  switch (tag) {
    case ConditionTag::day: return "day";
    case ConditionTag::night: return "night";
    case ConditionTag::rain: return "rain";
  }
  return "?";
}

void MetricsAccumulator::add(const DepthMap& pred, const DepthMap& gt, const BoolMap& mask) {
  if (!pred.same_shape(gt) || gt.rank() != 2 || mask.shape() != gt.shape()) {
    throw std::invalid_argument("metrics: pred/gt/mask shape mismatch");
  }
  constexpr double kMinPred = 1e-3;
  constexpr double kDelta1 = 1.25, kDelta2 = 1.25 * 1.25, kDelta3 = 1.25 * 1.25 * 1.25;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    if (!mask[i]) continue;
    const double g = gt[i];
    if (!(g > 0)) throw std::invalid_argument("metrics: mask admits a pixel with gt <= 0");
    double p = pred[i];
    if (!(p > 0)) throw std::invalid_argument("metrics: prediction <= 0 under mask (log undefined)");
    const double err = p - g;
    sum_sq_err_ += err * err;
    sum_abs_rel_ += std::abs(err) / g;
    if (p < kMinPred) {
      p = kMinPred;
      ++n_clamped_;
    }
    const double log_err = std::log(p) - std::log(g);
    sum_sq_log_err_ += log_err * log_err;
    const double ratio = std::max(p / g, g / p);
    if (ratio < kDelta1) ++n_delta1_;
    if (ratio < kDelta2) ++n_delta2_;
    if (ratio < kDelta3) ++n_delta3_;
    ++n_;
  }
}

void MetricsAccumulator::merge(const MetricsAccumulator& other) {
  n_ += other.n_;
  n_clamped_ += other.n_clamped_;
  sum_sq_err_ += other.sum_sq_err_;
  sum_sq_log_err_ += other.sum_sq_log_err_;
  sum_abs_rel_ += other.sum_abs_rel_;
  n_delta1_ += other.n_delta1_;
  n_delta2_ += other.n_delta2_;
  n_delta3_ += other.n_delta3_;
}

MetricsReport MetricsAccumulator::report() const {
  if (n_ == 0) throw std::invalid_argument("metrics: empty mask (no valid pixels)");
  MetricsReport r;
  const double n = static_cast<double>(n_);
  r.rmse = std::sqrt(sum_sq_err_ / n);
  r.rmse_log = std::sqrt(sum_sq_log_err_ / n);
  r.abs_rel = sum_abs_rel_ / n;
  r.delta1 = static_cast<double>(n_delta1_) / n;
  r.delta2 = static_cast<double>(n_delta2_) / n;
  r.delta3 = static_cast<double>(n_delta3_) / n;
  r.n_valid = n_;
  r.n_pred_clamped = n_clamped_;
  return r;
}

MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt, const BoolMap& mask) {
  MetricsAccumulator acc;
  acc.add(pred, gt, mask);
  return acc.report();
}

BoolMap low_height_mask(const PointCloud& lidar_ego, const Pose& cam_from_ego, const Intrinsics& k, int width,
                        int height, double z_lo, double z_hi) {
  if (lidar_ego.frame != Frame::ego) throw std::invalid_argument("low_height_mask: lidar must be in ego frame");
  const PointCloud cam = transform_points(lidar_ego, cam_from_ego, Frame::camera);
  const std::vector<ProjectedPoint> projected = project_points(cam, k, width, height);
  Tensor<int32_t> winners;
  rasterize_depth_winners(projected, width, height, &winners);
  BoolMap mask({height, width});
  for (int64_t i = 0; i < winners.numel(); ++i) {
    const int32_t idx = winners[i];
    if (idx < 0) continue;
    const double z = lidar_ego.pts(idx, 2);
    if (z >= z_lo && z <= z_hi) mask[i] = 1;
  }
  return mask;
}

std::map<std::string, MetricsReport> split_report(
    const std::vector<std::pair<MetricsInputs, ConditionTag>>& per_sample) {
  std::map<std::string, MetricsAccumulator> accs;
  MetricsAccumulator combine;
  for (const auto& [inputs, tag] : per_sample) {
    MetricsAccumulator sample_acc;
    sample_acc.add(inputs.pred, inputs.gt, inputs.mask);
    accs[tag_to_string(tag)].merge(sample_acc);
    combine.merge(sample_acc);
  }
  std::map<std::string, MetricsReport> out;
  for (const auto& [tag, acc] : accs) {
    if (acc.count() > 0) out[tag] = acc.report();
  }
  out["combine"] = combine.report();
  return out;
}

std::string format_report_table(const std::map<std::string, MetricsReport>& reports) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "split" << std::right << std::setw(10) << "rmse" << std::setw(10)
     << "rmse_log" << std::setw(10) << "abs_rel" << std::setw(8) << "d1" << std::setw(8) << "d2" << std::setw(8)
     << "d3" << std::setw(10) << "n_valid" << "\n";
  const std::vector<std::string> order = {"combine", "day", "night", "rain"};
  auto emit = [&](const std::string& name, const MetricsReport& r) {
    os << std::left << std::setw(10) << name << std::right << std::fixed << std::setprecision(3) << std::setw(10)
       << r.rmse << std::setw(10) << r.rmse_log << std::setw(10) << r.abs_rel << std::setw(8) << r.delta1
       << std::setw(8) << r.delta2 << std::setw(8) << r.delta3 << std::setw(10) << r.n_valid << "\n";
    os.unsetf(std::ios::fixed);
  };
  for (const std::string& name : order) {
    auto it = reports.find(name);
    if (it != reports.end()) emit(name, it->second);
  }
  for (const auto& [name, r] : reports) {
    if (std::find(order.begin(), order.end(), name) == order.end()) emit(name, r);
  }
  return os.str();
}

}  // namespace rvmde
