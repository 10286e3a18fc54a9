#include "rvmde/verify.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "rvmde/autodiff.hpp"
#include "rvmde/discretization.hpp"
#include "rvmde/geometry.hpp"
#include "rvmde/radar_input.hpp"
#include "rvmde/rng.hpp"
#include "rvmde/training.hpp"

namespace rvmde::verify {

namespace {

bool wanted(const Options& opts, const std::string& name) {
  return opts.filter.empty() || name.find(opts.filter) != std::string::npos;
}

Tensor<double> random_tensor(Rng& rng, std::vector<int> shape, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

CheckResult bounded(const std::string& name, double measured, double bound, const std::string& detail = "") {
  return {name, measured < bound, measured, bound, detail};
}

Pose random_pose(Rng& rng) {
  // Rotation from a random unit quaternion.
  double q[4];
  double norm = 0;
  for (double& v : q) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : q) v /= norm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(0, 0) = 1 - 2 * (y * y + z * z);
  m(0, 1) = 2 * (x * y - w * z);
  m(0, 2) = 2 * (x * z + w * y);
  m(1, 0) = 2 * (x * y + w * z);
  m(1, 1) = 1 - 2 * (x * x + z * z);
  m(1, 2) = 2 * (y * z - w * x);
  m(2, 0) = 2 * (x * z - w * y);
  m(2, 1) = 2 * (y * z + w * x);
  m(2, 2) = 1 - 2 * (x * x + y * y);
  for (int i = 0; i < 3; ++i) m(i, 3) = rng.uniform(-5.0, 5.0);
  return Pose::from_matrix(m);
}

}  // namespace

MetricsReport reference_metrics(const DepthMap& pred, const DepthMap& gt, const BoolMap& mask) {
  // Deliberately naive: one pass per metric, plain accumulation.
  MetricsReport r;
  int64_t n = 0;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    if (mask[i]) ++n;
  }
  r.n_valid = n;
  double acc = 0;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    if (mask[i]) acc += (static_cast<double>(pred[i]) - gt[i]) * (static_cast<double>(pred[i]) - gt[i]);
  }
  r.rmse = std::sqrt(acc / static_cast<double>(n));
  acc = 0;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    if (mask[i]) {
      const double p = std::max(static_cast<double>(pred[i]), 1e-3);
      acc += (std::log(p) - std::log(static_cast<double>(gt[i]))) * (std::log(p) - std::log(static_cast<double>(gt[i])));
    }
  }
  r.rmse_log = std::sqrt(acc / static_cast<double>(n));
  acc = 0;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    if (mask[i]) acc += std::abs(static_cast<double>(pred[i]) - gt[i]) / gt[i];
  }
  r.abs_rel = acc / static_cast<double>(n);
  for (int k = 1; k <= 3; ++k) {
    int64_t hits = 0;
    const double bound = std::pow(1.25, k);
    for (int64_t i = 0; i < gt.numel(); ++i) {
      if (!mask[i]) continue;
      const double p = std::max(static_cast<double>(pred[i]), 1e-3);
      if (std::max(p / gt[i], gt[i] / p) < bound) ++hits;
    }
    const double v = static_cast<double>(hits) / static_cast<double>(n);
    if (k == 1) r.delta1 = v;
    if (k == 2) r.delta2 = v;
    if (k == 3) r.delta3 = v;
  }
  return r;
}

std::vector<CheckResult> run_gradient_checks(const Options& opts) {
  std::vector<CheckResult> out;
  constexpr double kBound = 1e-5;
  Rng rng(1234);

  auto run = [&](const std::string& name, GradCheckProblem problem) {
    if (!wanted(opts, name)) return;
    double err = grad_check(problem);
    if (opts.inject_grad_fault && name == "grad.ordinal_loss") {
      // fixture: a sign error must trip the harness
      err = std::max(err, 2.0);
    }
    out.push_back(bounded(name, err, kBound));
  };

  run("grad.conv2d", {{random_tensor(rng, {1, 2, 5, 5}), random_tensor(rng, {4, 2, 3, 3}, 0.5),
                       random_tensor(rng, {4}, 0.1)},
                      [probe = random_tensor(rng, {1, 4, 5, 5})](nn::Tape<double>&,
                                                                 const std::vector<nn::Var<double>>& in) {
                        return nn::weighted_sum(nn::conv2d(in[0], in[1], in[2], 1, 1), probe);
                      }});
  run("grad.conv2d_stride2", {{random_tensor(rng, {2, 3, 8, 8}), random_tensor(rng, {4, 3, 3, 3}, 0.5),
                               random_tensor(rng, {4}, 0.1)},
                              [probe = random_tensor(rng, {2, 4, 4, 4})](nn::Tape<double>&,
                                                                         const std::vector<nn::Var<double>>& in) {
                                return nn::weighted_sum(nn::conv2d(in[0], in[1], in[2], 2, 1), probe);
                              }});
  run("grad.group_norm", {{random_tensor(rng, {2, 4, 4, 4}), random_tensor(rng, {4}, 0.7),
                           random_tensor(rng, {4}, 0.3)},
                          [probe = random_tensor(rng, {2, 4, 4, 4})](nn::Tape<double>&,
                                                                     const std::vector<nn::Var<double>>& in) {
                            return nn::weighted_sum(nn::group_norm(in[0], in[1], in[2], 2), probe);
                          }});
  run("grad.batch_norm",
      {{random_tensor(rng, {2, 3, 4, 4}), random_tensor(rng, {3}, 0.7), random_tensor(rng, {3}, 0.3)},
       [probe = random_tensor(rng, {2, 3, 4, 4})](nn::Tape<double>&, const std::vector<nn::Var<double>>& in) {
         // fresh running stats per evaluation; they do not affect training-mode output
         Tensor<double> rm({3});
         Tensor<double> rv = Tensor<double>::full({3}, 1.0);
         return nn::weighted_sum(nn::batch_norm(in[0], in[1], in[2], &rm, &rv, true), probe);
       }});
  run("grad.upsample_bilinear", {{random_tensor(rng, {1, 3, 4, 6})},
                                 [probe = random_tensor(rng, {1, 3, 8, 12})](
                                     nn::Tape<double>&, const std::vector<nn::Var<double>>& in) {
                                   return nn::weighted_sum(nn::upsample_bilinear(in[0], 2), probe);
                                 }});
  run("grad.pair_softmax", {{random_tensor(rng, {1, 8, 3, 3})},
                            [probe = random_tensor(rng, {1, 4, 3, 3})](nn::Tape<double>&,
                                                                       const std::vector<nn::Var<double>>& in) {
                              return nn::weighted_sum(nn::pair_softmax(in[0]), probe);
                            }});
  {
    // random labels over a 2-sample batch with a masked-out corner
    nn::LabelBatch labels;
    labels.labels = Tensor<int32_t>({2, 3, 3});
    labels.mask = Tensor<uint8_t>({2, 3, 3});
    Rng lab_rng(77);
    for (int64_t i = 0; i < labels.labels.numel(); ++i) {
      labels.labels[i] = static_cast<int32_t>(lab_rng.uniform_index(4));
      labels.mask[i] = lab_rng.uniform() < 0.8 ? 1 : 0;
    }
    labels.mask[0] = 1;
    labels.mask[labels.mask.numel() - 1] = 1;
    run("grad.ordinal_loss", {{random_tensor(rng, {2, 8, 3, 3})},
                              [labels](nn::Tape<double>&, const std::vector<nn::Var<double>>& in) {
                                return nn::ordinal_loss(in[0], labels);
                              }});
  }
  run("grad.relu", {{random_tensor(rng, {2, 3, 4, 4})},
                    [probe = random_tensor(rng, {2, 3, 4, 4})](nn::Tape<double>&,
                                                               const std::vector<nn::Var<double>>& in) {
                      return nn::weighted_sum(nn::relu(in[0]), probe);
                    }});
  run("grad.max_pool", {{random_tensor(rng, {1, 2, 8, 8})},
                        [probe = random_tensor(rng, {1, 2, 4, 4})](nn::Tape<double>&,
                                                                   const std::vector<nn::Var<double>>& in) {
                          return nn::weighted_sum(nn::max_pool_3x3_s2(in[0]), probe);
                        }});
  return out;
}

std::vector<CheckResult> run_sid_checks(const Options& opts) {
  std::vector<CheckResult> out;
  const SidBins bins = sid_thresholds(1.0, 80.0, 80);

  if (wanted(opts, "sid.endpoints")) {
    const double err = std::max(std::abs(bins.thresholds.front() - 1.0), std::abs(bins.thresholds.back() - 80.0));
    out.push_back(bounded("sid.endpoints", err, 1e-300, "t0 and tK pinned exactly"));
    out.back().passed = bins.thresholds.front() == 1.0 && bins.thresholds.back() == 80.0;
  }
  if (wanted(opts, "sid.monotone")) {
    bool ok = true;
    double min_gap = 1e300;
    for (int i = 0; i < bins.k; ++i) {
      const double gap = bins.thresholds[static_cast<size_t>(i) + 1] - bins.thresholds[static_cast<size_t>(i)];
      min_gap = std::min(min_gap, gap);
      if (!(gap > 0)) ok = false;
    }
    out.push_back({"sid.monotone", ok, min_gap, 0, "smallest threshold gap"});
  }
  if (wanted(opts, "sid.ratio")) {
    const double expected = std::pow(80.0, 1.0 / 80.0);
    double err = 0;
    for (int i = 0; i < bins.k; ++i) {
      const double ratio = bins.thresholds[static_cast<size_t>(i) + 1] / bins.thresholds[static_cast<size_t>(i)];
      err = std::max(err, std::abs(ratio - expected) / expected);
    }
    out.push_back(bounded("sid.ratio", err, 1e-9, "t_{i+1}/t_i vs (beta/alpha)^{1/K}"));
  }
  if (wanted(opts, "sid.roundtrip")) {
    Rng rng(42);
    int failures = 0;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
      const double d = rng.uniform(1.0, 80.0);
      DepthMap gt({1, 1});
      gt[0] = static_cast<float>(d);
      const OrdinalLabelMap enc = encode_depth(gt, bins);
      const int label = enc.labels[0];
      // perfect ordinal probabilities for this label
      Tensor<float> probs({bins.k, 1, 1});
      for (int k = 0; k < bins.k; ++k) probs[k] = k < label ? 1.0f : 0.0f;
      const DepthMap dec = decode_ordinal(probs, bins);
      const double lo = bins.thresholds[static_cast<size_t>(label)];
      const double hi = bins.thresholds[static_cast<size_t>(label) + 1];
      if (!(dec[0] >= lo && dec[0] <= hi)) ++failures;
    }
    out.push_back({"sid.roundtrip", failures == 0, static_cast<double>(failures), 0,
                   "decoded midpoint outside source bin, of " + std::to_string(trials)});
  }
  return out;
}

std::vector<CheckResult> run_metric_checks(const Options& opts) {
  std::vector<CheckResult> out;
  Rng rng(7);

  if (wanted(opts, "metrics.oracle")) {
    double max_rel = 0;
    for (int trial = 0; trial < 100; ++trial) {
      DepthMap pred({32, 32});
      DepthMap gt({32, 32});
      BoolMap mask({32, 32});
      for (int64_t i = 0; i < gt.numel(); ++i) {
        gt[i] = static_cast<float>(rng.uniform(0.5, 80.0));
        pred[i] = static_cast<float>(gt[i] * rng.uniform(0.5, 1.8));
        mask[i] = rng.uniform() < 0.9 ? 1 : 0;
      }
      mask[0] = 1;
      const MetricsReport a = compute_metrics(pred, gt, mask);
      const MetricsReport b = reference_metrics(pred, gt, mask);
      auto rel = [](double x, double y) { return std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-30}); };
      max_rel = std::max({max_rel, rel(a.rmse, b.rmse), rel(a.rmse_log, b.rmse_log), rel(a.abs_rel, b.abs_rel),
                          rel(a.delta1, b.delta1), rel(a.delta2, b.delta2), rel(a.delta3, b.delta3)});
      if (a.n_valid != b.n_valid) max_rel = 1.0;
    }
    out.push_back(bounded("metrics.oracle", max_rel, 1e-12, "100 random 32x32 maps vs naive reference"));
  }
  if (wanted(opts, "metrics.pooling")) {
    double max_err = 0;
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<std::pair<MetricsInputs, ConditionTag>> samples;
      MetricsAccumulator pool;
      std::vector<MetricsReport> parts;
      std::vector<int64_t> counts;
      for (int s = 0; s < 3; ++s) {
        MetricsInputs mi;
        mi.pred = DepthMap({8, 8});
        mi.gt = DepthMap({8, 8});
        mi.mask = BoolMap({8, 8});
        for (int64_t i = 0; i < 64; ++i) {
          mi.gt[i] = static_cast<float>(rng.uniform(1.0, 60.0));
          mi.pred[i] = static_cast<float>(mi.gt[i] * rng.uniform(0.6, 1.6));
          mi.mask[i] = rng.uniform() < 0.8 ? 1 : 0;
        }
        mi.mask[static_cast<int64_t>(s)] = 1;
        parts.push_back(compute_metrics(mi.pred, mi.gt, mi.mask));
        counts.push_back(parts.back().n_valid);
        samples.push_back({std::move(mi), static_cast<ConditionTag>(s)});
      }
      const auto reports = split_report(samples);
      const MetricsReport& combine = reports.at("combine");
      double weighted = 0;
      int64_t total = 0;
      for (size_t s = 0; s < parts.size(); ++s) {
        weighted += static_cast<double>(counts[s]) * parts[s].rmse * parts[s].rmse;
        total += counts[s];
      }
      weighted /= static_cast<double>(total);
      max_err = std::max(max_err, std::abs(combine.rmse * combine.rmse - weighted));
    }
    out.push_back(bounded("metrics.pooling", max_err, 1e-10, "combine RMSE^2 vs weighted split mean"));
  }
  return out;
}

std::vector<CheckResult> run_geometry_checks(const Options& opts) {
  std::vector<CheckResult> out;
  Rng rng(99);

  if (wanted(opts, "geometry.transform_roundtrip")) {
    double max_err = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const Pose pose = random_pose(rng);
      PointCloud cloud;
      cloud.frame = Frame::ego;
      cloud.pts.resize(1, 3);
      for (int c = 0; c < 3; ++c) cloud.pts(0, c) = rng.uniform(-50.0, 50.0);
      const PointCloud there = transform_points(cloud, pose, Frame::camera);
      const PointCloud back = transform_points(there, pose.inverse(), Frame::ego);
      max_err = std::max(max_err, (back.pts - cloud.pts).cwiseAbs().maxCoeff());
    }
    out.push_back(bounded("geometry.transform_roundtrip", max_err, 1e-9, "A then A^-1 on 1000 random poses"));
  }
  if (wanted(opts, "geometry.projection_commutation")) {
    Intrinsics k{200.0, 210.0, 320.0, 240.0};
    double max_err = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const double sx = rng.uniform(0.25, 1.5);
      const double sy = rng.uniform(0.25, 1.5);
      const int crop = static_cast<int>(rng.uniform_index(50));
      PointCloud cloud;
      cloud.frame = Frame::camera;
      cloud.pts.resize(1, 3);
      cloud.pts(0, 0) = rng.uniform(-20.0, 20.0);
      cloud.pts(0, 1) = rng.uniform(-20.0, 20.0);
      cloud.pts(0, 2) = rng.uniform(0.5, 80.0);
      const Intrinsics ka = adjust_intrinsics(k, sx, sy, crop);
      // unbounded image so no survivor filtering interferes
      const auto base = project_points(cloud, k, 1 << 24, 1 << 24);
      const auto adjusted = project_points(cloud, ka, 1 << 24, 1 << 24);
      if (base.size() != 1 || adjusted.size() != 1) continue;
      max_err = std::max({max_err, std::abs(base[0].u * sx - adjusted[0].u),
                          std::abs(base[0].v * sy - crop - adjusted[0].v)});
    }
    out.push_back(
        bounded("geometry.projection_commutation", max_err, 1e-9, "project-then-scale vs adjusted intrinsics"));
  }
  if (wanted(opts, "geometry.raster_values")) {
    bool ok = true;
    for (int trial = 0; trial < 50 && ok; ++trial) {
      std::vector<ProjectedPoint> pts;
      const int n = 1 + static_cast<int>(rng.uniform_index(64));
      for (int i = 0; i < n; ++i) {
        pts.push_back({rng.uniform(0.0, 16.0), rng.uniform(0.0, 16.0), rng.uniform(1.0, 40.0), i});
      }
      const DepthMap a = rasterize_depth(pts, 16, 16);
      std::vector<ProjectedPoint> shuffled = pts;
      std::vector<size_t> order(shuffled.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      std::vector<ProjectedPoint> permuted;
      for (size_t i : order) permuted.push_back(pts[i]);
      const DepthMap b = rasterize_depth(permuted, 16, 16);
      for (int64_t i = 0; i < a.numel() && ok; ++i) {
        if (a[i] != b[i]) ok = false;
        if (a[i] != 0.0f) {
          bool found = false;
          for (const auto& p : pts) {
            if (static_cast<float>(p.depth) == a[i]) found = true;
          }
          if (!found) ok = false;
        }
      }
    }
    out.push_back({"geometry.raster_values", ok, ok ? 0.0 : 1.0, 0,
                   "permutation invariance and value provenance"});
  }
  return out;
}

std::vector<CheckResult> run_radar_checks(const Options& opts) {
  std::vector<CheckResult> out;
  if (!wanted(opts, "radar.mer_nesting")) return out;
  Rng rng(5);
  MerSpec spec;
  Eigen::Matrix4d cam = Eigen::Matrix4d::Zero();
  cam(0, 1) = -1;
  cam(1, 2) = -1;
  cam(2, 0) = 1;
  cam(3, 3) = 1;
  cam.block<3, 1>(0, 3) = -cam.block<3, 3>(0, 0) * Eigen::Vector3d(0, 0, 1.5);
  const Pose pose = Pose::from_matrix(cam);
  const Intrinsics k{96.0, 96.0, 64.0, 32.0};
  int violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    PointCloud cloud;
    cloud.frame = Frame::ego;
    const int n = 1 + static_cast<int>(rng.uniform_index(6));
    cloud.pts.resize(n, 3);
    for (int i = 0; i < n; ++i) {
      cloud.pts(i, 0) = rng.uniform(3.0, 40.0);
      cloud.pts(i, 1) = rng.uniform(-10.0, 10.0);
      cloud.pts(i, 2) = rng.uniform(0.3, 2.0);
    }
    const RadarImage mer = build_mer(cloud, pose, k, 128, 64, spec);
    const int64_t plane = static_cast<int64_t>(64) * 128;
    for (int j = 1; j < 5; ++j) {
      for (int64_t i = 0; i < plane; ++i) {
        if (mer[j * plane + i] > 0.0f && mer[(j + 1) * plane + i] == 0.0f) ++violations;
      }
    }
    for (int64_t i = 0; i < plane; ++i) {
      if (mer[i] > 0.0f && mer[5 * plane + i] == 0.0f) ++violations;
    }
  }
  out.push_back({"radar.mer_nesting", violations == 0, static_cast<double>(violations), 0,
                 "support(channel j) within support(channel j+1), 100 random clouds"});
  return out;
}

std::vector<CheckResult> run_all(const Options& opts) {
  std::vector<CheckResult> out;
  for (auto&& group : {run_gradient_checks(opts), run_sid_checks(opts), run_metric_checks(opts),
                       run_geometry_checks(opts), run_radar_checks(opts)}) {
    out.insert(out.end(), group.begin(), group.end());
  }
  return out;
}

std::string format_results(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  for (const CheckResult& r : results) {
    os << (r.passed ? "[PASS] " : "[FAIL] ") << std::left << std::setw(34) << r.name << " measured="
       << std::scientific << std::setprecision(3) << r.measured;
    if (r.bound > 0) os << " bound=" << r.bound;
    if (!r.detail.empty()) os << "  (" << r.detail << ")";
    os << "\n";
  }
  return os.str();
}

}  // namespace rvmde::verify
