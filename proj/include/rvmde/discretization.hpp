#ifndef RVMDE_DISCRETIZATION_HPP
#define RVMDE_DISCRETIZATION_HPP

#include <cstdint>
#include <vector>

#include "rvmde/tensor.hpp"

namespace rvmde {

/// Spacing-increasing discretization of [alpha, beta] into K bins with
/// log-uniform thresholds t_i = exp(log alpha + i*log(beta/alpha)/K).
/// Endpoints are pinned exactly to alpha and beta.
struct SidBins {
  double alpha = 1.0;
  double beta = 80.0;
  int k = 80;
  std::vector<double> thresholds;  // size k+1, strictly increasing

  double bin_midpoint(int label) const { return 0.5 * (thresholds[label] + thresholds[label + 1]); }
};

SidBins sid_thresholds(double alpha, double beta, int k);

/// Per-pixel ordinal labels; defined only where mask is 1.
struct OrdinalLabelMap {
  Tensor<int32_t> labels;  // H x W, values in [0, K-1]
  BoolMap mask;            // H x W
};

enum class OutOfRange { clamp, mask };

/// gt == 0 -> masked out. Positive depths are clamped to [alpha, beta]
/// (or masked out entirely when out-of-range handling is `mask`), then
/// label = max{i : t_i <= d}, capped at K-1.
OrdinalLabelMap encode_depth(const DepthMap& gt, const SidBins& bins, OutOfRange oor = OutOfRange::clamp);

/// Count of thresholds passed at probability 0.5, mapped to the bin
/// midpoint in linear depth. probs is K x H x W with P_k = P(label > k).
DepthMap decode_ordinal(const Tensor<float>& probs, const SidBins& bins);

}  // namespace rvmde

#endif  // RVMDE_DISCRETIZATION_HPP
