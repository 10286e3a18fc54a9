#include "rvmde/discretization.hpp"

#include <cmath>
#include <stdexcept>

namespace rvmde {

SidBins sid_thresholds(double alpha, double beta, int k) {
  if (!(alpha > 0)) throw std::invalid_argument("sid_thresholds: alpha must be > 0");
  if (!(beta > alpha)) throw std::invalid_argument("sid_thresholds: beta must exceed alpha");
  if (k < 2) throw std::invalid_argument("sid_thresholds: need at least 2 bins");
  SidBins bins;
  bins.alpha = alpha;
  bins.beta = beta;
  bins.k = k;
  bins.thresholds.resize(static_cast<size_t>(k) + 1);
  const double log_a = std::log(alpha);
  const double step = (std::log(beta) - log_a) / k;
  for (int i = 0; i <= k; ++i) {
    bins.thresholds[static_cast<size_t>(i)] = std::exp(log_a + i * step);
  }
  // exp round-off can miss the ends by a few ulps; the contract wants them exact
  bins.thresholds.front() = alpha;
  bins.thresholds.back() = beta;
  return bins;
}

OrdinalLabelMap encode_depth(const DepthMap& gt, const SidBins& bins, OutOfRange oor) {
  if (gt.rank() != 2) throw std::invalid_argument("encode_depth: expected H x W depth map");
  const int h = gt.dim(0);
  const int w = gt.dim(1);
  OrdinalLabelMap out;
  out.labels = Tensor<int32_t>({h, w});
  out.mask = BoolMap({h, w});
  const double log_alpha = std::log(bins.alpha);
  const double log_step = (std::log(bins.beta) - log_alpha) / bins.k;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    const double d = gt[i];
    if (d <= 0.0) continue;
    if (oor == OutOfRange::mask && (d < bins.alpha || d > bins.beta)) continue;
    const double clamped = std::min(std::max(d, bins.alpha), bins.beta);
    // Closed-form index, then fix up against the stored thresholds so the
    // label honours max{i : t_i <= d} even at bin edges.
    int label = static_cast<int>(std::floor((std::log(clamped) - log_alpha) / log_step));
    label = std::min(std::max(label, 0), bins.k - 1);
    while (label + 1 < bins.k && bins.thresholds[static_cast<size_t>(label) + 1] <= clamped) ++label;
    while (label > 0 && bins.thresholds[static_cast<size_t>(label)] > clamped) --label;
    out.labels[i] = label;
    out.mask[i] = 1;
  }
  return out;
}

DepthMap decode_ordinal(const Tensor<float>& probs, const SidBins& bins) {
  if (probs.rank() != 3 || probs.dim(0) != bins.k) {
    throw std::invalid_argument("decode_ordinal: expected K x H x W probabilities with K = " +
                                std::to_string(bins.k));
  }
  const int h = probs.dim(1);
  const int w = probs.dim(2);
  const int64_t plane = static_cast<int64_t>(h) * w;
  DepthMap out({h, w});
  const float* p = probs.data();
  for (int64_t i = 0; i < plane; ++i) {
    int count = 0;
    for (int k = 0; k < bins.k; ++k) {
      if (p[k * plane + i] >= 0.5f) ++count;
    }
    const int label = std::min(count, bins.k - 1);
    out[i] = static_cast<float>(bins.bin_midpoint(label));
  }
  return out;
}

}  // namespace rvmde
