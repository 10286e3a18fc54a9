#ifndef RVMDE_MODEL_HPP
#define RVMDE_MODEL_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rvmde/autodiff.hpp"
#include "rvmde/discretization.hpp"
#include "rvmde/rng.hpp"
#include "rvmde/tensor.hpp"

namespace rvmde {

enum class NormKind { group, batch };

struct ModelConfig {
  std::array<int, 4> stage_channels = {16, 32, 64, 128};  // C2..C5 widths
  std::array<int, 4> blocks_per_stage = {1, 1, 1, 1};
  int pyramid_channels = 32;
  int radar_channels = 16;
  int radar_in_channels = 1;  // 1 = height-extended, 6 = MER
  int head_channels = 64;
  int k_bins = 16;
  NormKind norm = NormKind::group;
  int norm_groups = 8;
  int input_h = 64;
  int input_w = 128;
  bool radar_full_depth = false;  // extend the radar encoder to strides 8/16

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// The fusion network: residual image backbone -> FPN over C3..C5 with
/// upsample-and-concat -> late fusion with a residual radar encoder ->
/// ordinal head emitting 2K logits per pixel.
template <typename T>
class Model {
 public:
  struct ForwardResult {
    nn::Var<T> logits;                 // B x 2K x H x W at input resolution
    std::optional<nn::Var<T>> probs;   // B x K x H x W, P_k = P(label > k)
  };

  static Model build(const ModelConfig& cfg, const SidBins& bins, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const SidBins& bins() const { return bins_; }

  ForwardResult forward(nn::Tape<T>& tape, const Tensor<T>& rgb, const Tensor<T>& radar, bool training,
                        bool want_probs = true);

  std::array<nn::Var<T>, 3> backbone_features(nn::Tape<T>& tape, nn::Var<T> rgb, bool training);
  nn::Var<T> fpn_merge(nn::Tape<T>& tape, nn::Var<T> c3, nn::Var<T> c4, nn::Var<T> c5);
  nn::Var<T> radar_encode(nn::Tape<T>& tape, nn::Var<T> radar, bool training);

  int64_t count_params() const;
  const std::vector<std::string>& param_names() const { return param_order_; }
  const std::vector<std::string>& state_names() const { return state_order_; }
  Tensor<T>& param(const std::string& name);
  const Tensor<T>& param(const std::string& name) const;
  Tensor<T>& state(const std::string& name);
  const Tensor<T>& state(const std::string& name) const;
  bool has_param(const std::string& name) const { return params_.count(name) > 0; }

  /// Norm scale/shift parameters are excluded from weight decay.
  static bool weight_decay_exempt(const std::string& name);

 private:
  Model() = default;

  struct ConvDef {
    std::string name;
    int cin = 0, cout = 0, kernel = 1, stride = 1, pad = 0;
  };
  struct NormDef {
    std::string name;
    int channels = 0;
  };
  struct BlockDef {
    ConvDef conv1, conv2;
    NormDef norm1, norm2;
    std::optional<ConvDef> down_conv;
    std::optional<NormDef> down_norm;
  };

  ConvDef make_conv(const std::string& name, int cin, int cout, int k, int stride, int pad);
  NormDef make_norm(const std::string& name, int channels);
  BlockDef make_block(const std::string& name, int cin, int cout, int stride);

  nn::Var<T> apply_conv(nn::Tape<T>& tape, const ConvDef& def, nn::Var<T> x);
  nn::Var<T> apply_norm(nn::Tape<T>& tape, const NormDef& def, nn::Var<T> x, bool training);
  nn::Var<T> apply_block(nn::Tape<T>& tape, const BlockDef& def, nn::Var<T> x, bool training);
  nn::Var<T> param_leaf(nn::Tape<T>& tape, const std::string& name);

  void init_params(uint64_t seed);

  ModelConfig cfg_;
  SidBins bins_;
  std::vector<std::string> param_order_;
  std::map<std::string, Tensor<T>> params_;
  std::vector<std::string> state_order_;
  std::map<std::string, Tensor<T>> state_;  // batch-norm running stats

  // architecture wiring
  ConvDef stem_conv_;
  NormDef stem_norm_;
  std::array<std::vector<BlockDef>, 4> stages_;
  ConvDef lat3_, lat4_, lat5_;
  ConvDef smooth3_, smooth4_, smooth5_;
  ConvDef radar_stem_;
  NormDef radar_stem_norm_;
  std::vector<BlockDef> radar_stage1_, radar_stage2_, radar_stage3_, radar_stage4_;
  ConvDef radar_proj_;
  ConvDef head_conv1_, head_conv2_, head_out_;
  NormDef head_norm1_, head_norm2_;

  // parameter registration happens during wiring; params get values later
  std::vector<std::pair<std::string, std::vector<int>>> pending_;
  bool wired_ = false;
};

using ModelF = Model<float>;
using ModelD = Model<double>;

extern template class Model<float>;
extern template class Model<double>;

}  // namespace rvmde

#endif  // RVMDE_MODEL_HPP
