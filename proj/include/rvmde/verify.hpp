#ifndef RVMDE_VERIFY_HPP
#define RVMDE_VERIFY_HPP

#include <string>
#include <vector>

#include "rvmde/evaluation.hpp"
#include "rvmde/tensor.hpp"

namespace rvmde::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0;   // the quantity compared against the bound
  double bound = 0;
  std::string detail;
};

struct Options {
  std::string filter;            // substring; empty runs everything
  bool inject_grad_fault = false;  // test fixture: flips the ordinal-loss analytic gradient
};

/// Finite-difference gradient checks (float64, small tensors) for conv,
/// both norms, bilinear upsample, max-pool, relu, pair softmax and the
/// ordinal loss. Bound: max relative error < 1e-5.
std::vector<CheckResult> run_gradient_checks(const Options& opts = {});

/// Discretization: exact endpoints, strict monotonicity, constant
/// threshold ratio within 1e-9, and a 10k-depth encode/decode round trip
/// staying inside the source bin.
std::vector<CheckResult> run_sid_checks(const Options& opts = {});

/// compute_metrics against a naive per-pixel reference (1e-12 relative)
/// and the pooled-split RMSE identity (1e-10).
std::vector<CheckResult> run_metric_checks(const Options& opts = {});

/// Projection/intrinsics-adjustment commutation and rigid-transform round
/// trips within 1e-9 on 1000 random points/poses; rasterization value and
/// permutation invariants.
std::vector<CheckResult> run_geometry_checks(const Options& opts = {});

/// MER channel nesting over random clouds.
std::vector<CheckResult> run_radar_checks(const Options& opts = {});

std::vector<CheckResult> run_all(const Options& opts = {});

/// Independent naive metrics used as the oracle side of the comparison.
MetricsReport reference_metrics(const DepthMap& pred, const DepthMap& gt, const BoolMap& mask);

std::string format_results(const std::vector<CheckResult>& results);

}  // namespace rvmde::verify

#endif  // RVMDE_VERIFY_HPP
