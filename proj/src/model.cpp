#include "rvmde/model.hpp"

#include <cmath>
#include <stdexcept>

namespace rvmde {

void ModelConfig::validate() const {
  for (int c : stage_channels) {
    if (c <= 0) throw std::invalid_argument("model config: stage channels must be positive");
  }
  for (int b : blocks_per_stage) {
    if (b <= 0) throw std::invalid_argument("model config: blocks per stage must be positive");
  }
  if (pyramid_channels <= 0 || radar_channels <= 0 || head_channels <= 0) {
    throw std::invalid_argument("model config: channel widths must be positive");
  }
  if (radar_in_channels != 1 && radar_in_channels != 6) {
    throw std::invalid_argument("model config: radar_in_channels must be 1 or 6");
  }
  if (k_bins < 2) throw std::invalid_argument("model config: need at least 2 depth bins");
  if (input_h <= 0 || input_w <= 0 || input_h % 32 != 0 || input_w % 32 != 0) {
    throw std::invalid_argument("model config: input size must be positive and divisible by 32");
  }
  if (norm == NormKind::group) {
    if (norm_groups <= 0) throw std::invalid_argument("model config: norm_groups must be positive");
    for (int c : stage_channels) {
      if (c % norm_groups != 0) {
        throw std::invalid_argument("model config: stage channels must be divisible by norm_groups");
      }
    }
    if (head_channels % norm_groups != 0) {
      throw std::invalid_argument("model config: head channels must be divisible by norm_groups");
    }
  }
}

template <typename T>
typename Model<T>::ConvDef Model<T>::make_conv(const std::string& name, int cin, int cout, int k, int stride,
                                               int pad) {
  ConvDef def{name, cin, cout, k, stride, pad};
  pending_.push_back({name + ".w", {cout, cin, k, k}});
  pending_.push_back({name + ".b", {cout}});
  return def;
}

template <typename T>
typename Model<T>::NormDef Model<T>::make_norm(const std::string& name, int channels) {
  NormDef def{name, channels};
  pending_.push_back({name + ".gamma", {channels}});
  pending_.push_back({name + ".beta", {channels}});
  if (cfg_.norm == NormKind::batch) {
    state_order_.push_back(name + ".running_mean");
    state_[name + ".running_mean"] = Tensor<T>({channels});
    state_order_.push_back(name + ".running_var");
    state_[name + ".running_var"] = Tensor<T>::full({channels}, T(1));
  }
  return def;
}

template <typename T>
typename Model<T>::BlockDef Model<T>::make_block(const std::string& name, int cin, int cout, int stride) {
  BlockDef def;
  def.conv1 = make_conv(name + ".conv1", cin, cout, 3, stride, 1);
  def.norm1 = make_norm(name + ".norm1", cout);
  def.conv2 = make_conv(name + ".conv2", cout, cout, 3, 1, 1);
  def.norm2 = make_norm(name + ".norm2", cout);
  if (stride != 1 || cin != cout) {
    def.down_conv = make_conv(name + ".down", cin, cout, 1, stride, 0);
    def.down_norm = make_norm(name + ".down_norm", cout);
  }
  return def;
}

template <typename T>
Model<T> Model<T>::build(const ModelConfig& cfg, const SidBins& bins, uint64_t seed) {
  cfg.validate();
  if (bins.k != cfg.k_bins) {
    throw std::invalid_argument("model config: k_bins " + std::to_string(cfg.k_bins) +
                                " does not match discretization K " + std::to_string(bins.k));
  }
  Model m;
  m.cfg_ = cfg;
  m.bins_ = bins;
  const auto& c = cfg.stage_channels;

  m.stem_conv_ = m.make_conv("backbone.stem", 3, c[0], 7, 2, 3);
  m.stem_norm_ = m.make_norm("backbone.stem_norm", c[0]);
  const std::array<int, 4> stage_in = {c[0], c[0], c[1], c[2]};
  const std::array<int, 4> stage_stride = {1, 2, 2, 2};
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < cfg.blocks_per_stage[static_cast<size_t>(s)]; ++b) {
      const std::string name = "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      const int cin = b == 0 ? stage_in[static_cast<size_t>(s)] : c[static_cast<size_t>(s)];
      const int stride = b == 0 ? stage_stride[static_cast<size_t>(s)] : 1;
      m.stages_[static_cast<size_t>(s)].push_back(m.make_block(name, cin, c[static_cast<size_t>(s)], stride));
    }
  }

  const int cp = cfg.pyramid_channels;
  m.lat3_ = m.make_conv("fpn.lat3", c[1], cp, 1, 1, 0);
  m.lat4_ = m.make_conv("fpn.lat4", c[2], cp, 1, 1, 0);
  m.lat5_ = m.make_conv("fpn.lat5", c[3], cp, 1, 1, 0);
  m.smooth3_ = m.make_conv("fpn.smooth3", cp, cp, 3, 1, 1);
  m.smooth4_ = m.make_conv("fpn.smooth4", cp, cp, 3, 1, 1);
  m.smooth5_ = m.make_conv("fpn.smooth5", cp, cp, 3, 1, 1);

  m.radar_stem_ = m.make_conv("radar.stem", cfg.radar_in_channels, c[0], 7, 2, 3);
  m.radar_stem_norm_ = m.make_norm("radar.stem_norm", c[0]);
  for (int b = 0; b < cfg.blocks_per_stage[0]; ++b) {
    m.radar_stage1_.push_back(
        m.make_block("radar.stage1.block" + std::to_string(b), c[0], c[0], 1));
  }
  for (int b = 0; b < cfg.blocks_per_stage[1]; ++b) {
    m.radar_stage2_.push_back(
        m.make_block("radar.stage2.block" + std::to_string(b), b == 0 ? c[0] : c[1], c[1], b == 0 ? 2 : 1));
  }
  int radar_feat = c[1];
  if (cfg.radar_full_depth) {
    for (int b = 0; b < cfg.blocks_per_stage[2]; ++b) {
      m.radar_stage3_.push_back(
          m.make_block("radar.stage3.block" + std::to_string(b), b == 0 ? c[1] : c[2], c[2], b == 0 ? 2 : 1));
    }
    for (int b = 0; b < cfg.blocks_per_stage[3]; ++b) {
      m.radar_stage4_.push_back(
          m.make_block("radar.stage4.block" + std::to_string(b), b == 0 ? c[2] : c[3], c[3], b == 0 ? 2 : 1));
    }
    radar_feat = c[1] + c[2] + c[3];
  }
  m.radar_proj_ = m.make_conv("radar.proj", radar_feat, cfg.radar_channels, 1, 1, 0);

  const int fused = 3 * cp + cfg.radar_channels;
  m.head_conv1_ = m.make_conv("head.conv1", fused, cfg.head_channels, 3, 1, 1);
  m.head_norm1_ = m.make_norm("head.norm1", cfg.head_channels);
  m.head_conv2_ = m.make_conv("head.conv2", cfg.head_channels, cfg.head_channels, 3, 1, 1);
  m.head_norm2_ = m.make_norm("head.norm2", cfg.head_channels);
  m.head_out_ = m.make_conv("head.out", cfg.head_channels, 2 * cfg.k_bins, 1, 1, 0);

  m.wired_ = true;
  m.init_params(seed);
  return m;
}

template <typename T>
void Model<T>::init_params(uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5256));  // init stream, distinct from shuffle streams
  for (const auto& [name, shape] : pending_) {
    Tensor<T> t(shape);
    if (name.ends_with(".w")) {
      // He fan-in init; draws consumed in registration order for a fixed seed
      const int64_t fan_in = Tensor<T>::count({shape[1], shape[2], shape[3]});
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal(0.0, stddev));
    } else if (name.ends_with(".gamma")) {
      t.fill(T(1));
    }
    // biases and beta stay zero
    param_order_.push_back(name);
    params_[name] = std::move(t);
  }
  pending_.clear();
}

template <typename T>
nn::Var<T> Model<T>::param_leaf(nn::Tape<T>& tape, const std::string& name) {
  return tape.leaf(param(name), true, name);
}

template <typename T>
nn::Var<T> Model<T>::apply_conv(nn::Tape<T>& tape, const ConvDef& def, nn::Var<T> x) {
  return nn::conv2d(x, param_leaf(tape, def.name + ".w"), param_leaf(tape, def.name + ".b"), def.stride,
                    def.pad, def.name);
}

template <typename T>
nn::Var<T> Model<T>::apply_norm(nn::Tape<T>& tape, const NormDef& def, nn::Var<T> x, bool training) {
  nn::Var<T> gamma = param_leaf(tape, def.name + ".gamma");
  nn::Var<T> beta = param_leaf(tape, def.name + ".beta");
  if (cfg_.norm == NormKind::group) {
    const int groups = std::min(cfg_.norm_groups, def.channels);
    return nn::group_norm(x, gamma, beta, groups, 1e-5, def.name);
  }
  return nn::batch_norm(x, gamma, beta, &state(def.name + ".running_mean"), &state(def.name + ".running_var"),
                        training, 0.1, 1e-5, def.name);
}

template <typename T>
nn::Var<T> Model<T>::apply_block(nn::Tape<T>& tape, const BlockDef& def, nn::Var<T> x, bool training) {
  nn::Var<T> y = apply_conv(tape, def.conv1, x);
  y = apply_norm(tape, def.norm1, y, training);
  y = nn::relu(y, def.conv1.name + ".relu");
  y = apply_conv(tape, def.conv2, y);
  y = apply_norm(tape, def.norm2, y, training);
  nn::Var<T> skip = x;
  if (def.down_conv) {
    skip = apply_conv(tape, *def.down_conv, x);
    skip = apply_norm(tape, *def.down_norm, skip, training);
  }
  y = nn::add(y, skip, def.conv2.name + ".residual");
  return nn::relu(y, def.conv2.name + ".relu");
}

template <typename T>
std::array<nn::Var<T>, 3> Model<T>::backbone_features(nn::Tape<T>& tape, nn::Var<T> rgb, bool training) {
  const Tensor<T>& v = rgb.value();
  if (v.rank() != 4 || v.dim(1) != 3) throw std::invalid_argument("backbone: expected B x 3 x H x W input");
  if (v.dim(2) % 32 != 0 || v.dim(3) % 32 != 0) {
    throw std::invalid_argument("backbone: input H and W must be divisible by 32, got " + v.shape_str());
  }
  nn::Var<T> x = apply_conv(tape, stem_conv_, rgb);
  x = apply_norm(tape, stem_norm_, x, training);
  x = nn::relu(x, "backbone.stem.relu");
  x = nn::max_pool_3x3_s2(x, "backbone.stem.pool");
  for (const BlockDef& b : stages_[0]) x = apply_block(tape, b, x, training);
  nn::Var<T> c3 = x;
  for (const BlockDef& b : stages_[1]) c3 = apply_block(tape, b, c3, training);
  nn::Var<T> c4 = c3;
  for (const BlockDef& b : stages_[2]) c4 = apply_block(tape, b, c4, training);
  nn::Var<T> c5 = c4;
  for (const BlockDef& b : stages_[3]) c5 = apply_block(tape, b, c5, training);
  return {c3, c4, c5};
}

template <typename T>
nn::Var<T> Model<T>::fpn_merge(nn::Tape<T>& tape, nn::Var<T> c3, nn::Var<T> c4, nn::Var<T> c5) {
  nn::Var<T> p5 = apply_conv(tape, lat5_, c5);
  nn::Var<T> p4 = nn::add(apply_conv(tape, lat4_, c4), nn::upsample_bilinear(p5, 2, "fpn.up5"), "fpn.merge4");
  nn::Var<T> p3 = nn::add(apply_conv(tape, lat3_, c3), nn::upsample_bilinear(p4, 2, "fpn.up4"), "fpn.merge3");
  p3 = apply_conv(tape, smooth3_, p3);
  p4 = apply_conv(tape, smooth4_, p4);
  p5 = apply_conv(tape, smooth5_, p5);
  const std::vector<nn::Var<T>> levels = {nn::upsample_bilinear(p3, 2, "fpn.out_up3"),
                                          nn::upsample_bilinear(p4, 4, "fpn.out_up4"),
                                          nn::upsample_bilinear(p5, 8, "fpn.out_up5")};
  return nn::concat_channels(levels, "fpn.concat");
}

template <typename T>
nn::Var<T> Model<T>::radar_encode(nn::Tape<T>& tape, nn::Var<T> radar, bool training) {
  const Tensor<T>& v = radar.value();
  if (v.rank() != 4 || v.dim(1) != cfg_.radar_in_channels) {
    throw std::invalid_argument("radar encoder: expected " + std::to_string(cfg_.radar_in_channels) +
                                " input channels, got " + v.shape_str());
  }
  nn::Var<T> x = apply_conv(tape, radar_stem_, radar);
  x = apply_norm(tape, radar_stem_norm_, x, training);
  x = nn::relu(x, "radar.stem.relu");
  for (const BlockDef& b : radar_stage1_) x = apply_block(tape, b, x, training);
  for (const BlockDef& b : radar_stage2_) x = apply_block(tape, b, x, training);
  nn::Var<T> feat = x;
  if (cfg_.radar_full_depth) {
    nn::Var<T> s3 = x;
    for (const BlockDef& b : radar_stage3_) s3 = apply_block(tape, b, s3, training);
    nn::Var<T> s4 = s3;
    for (const BlockDef& b : radar_stage4_) s4 = apply_block(tape, b, s4, training);
    const std::vector<nn::Var<T>> scales = {x, nn::upsample_bilinear(s3, 2, "radar.up3"),
                                            nn::upsample_bilinear(s4, 4, "radar.up4")};
    feat = nn::concat_channels(scales, "radar.concat");
  }
  return apply_conv(tape, radar_proj_, feat);
}

template <typename T>
typename Model<T>::ForwardResult Model<T>::forward(nn::Tape<T>& tape, const Tensor<T>& rgb,
                                                   const Tensor<T>& radar, bool training, bool want_probs) {
  nn::Var<T> rgb_in = tape.leaf(rgb, false, "input.rgb");
  nn::Var<T> radar_in = tape.leaf(radar, false, "input.radar");
  auto [c3, c4, c5] = backbone_features(tape, rgb_in, training);
  nn::Var<T> image_feat = fpn_merge(tape, c3, c4, c5);
  nn::Var<T> radar_feat = radar_encode(tape, radar_in, training);
  const std::vector<nn::Var<T>> branches = {image_feat, radar_feat};
  nn::Var<T> fused = nn::concat_channels(branches, "fusion.concat");
  nn::Var<T> h = apply_conv(tape, head_conv1_, fused);
  h = apply_norm(tape, head_norm1_, h, training);
  h = nn::relu(h, "head.relu1");
  h = apply_conv(tape, head_conv2_, h);
  h = apply_norm(tape, head_norm2_, h, training);
  h = nn::relu(h, "head.relu2");
  h = apply_conv(tape, head_out_, h);
  nn::Var<T> logits = nn::upsample_bilinear(h, 4, "head.upsample");
  ForwardResult res{logits, std::nullopt};
  if (want_probs) res.probs = nn::pair_softmax(logits, "head.pair_softmax");
  return res;
}

template <typename T>
int64_t Model<T>::count_params() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

template <typename T>
Tensor<T>& Model<T>::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("model: unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
const Tensor<T>& Model<T>::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("model: unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
Tensor<T>& Model<T>::state(const std::string& name) {
  auto it = state_.find(name);
  if (it == state_.end()) throw std::out_of_range("model: unknown state tensor '" + name + "'");
  return it->second;
}

template <typename T>
const Tensor<T>& Model<T>::state(const std::string& name) const {
  auto it = state_.find(name);
  if (it == state_.end()) throw std::out_of_range("model: unknown state tensor '" + name + "'");
  return it->second;
}

template <typename T>
bool Model<T>::weight_decay_exempt(const std::string& name) {
  return name.ends_with(".gamma") || name.ends_with(".beta");
}

template class Model<float>;
template class Model<double>;

}  // namespace rvmde
