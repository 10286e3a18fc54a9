#include "rvmde/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "rvmde/config.hpp"
#include "rvmde/rng.hpp"

namespace rvmde {

void TrainConfig::validate() const {
  if (!(lr0 > 0)) throw std::invalid_argument("train config: lr0 must be > 0");
  if (!(poly_power > 0)) throw std::invalid_argument("train config: poly_power must be > 0");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("train config: momentum must be in [0,1)");
  if (weight_decay < 0) throw std::invalid_argument("train config: weight_decay must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
}

double poly_lr(int64_t iter, int64_t max_iter, double lr0, double power) {
  if (iter < 0 || max_iter <= 0) throw std::invalid_argument("poly_lr: iter and max_iter must be non-negative");
  if (iter > max_iter) {
    std::cerr << "poly_lr: iteration " << iter << " past max_iter " << max_iter << ", clamping lr to 0\n";
    return 0.0;
  }
  return lr0 * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

void sgd_step(Model<float>& model, const std::map<std::string, Tensor<float>>& grads, SgdState& state,
              double lr, double momentum, double weight_decay) {
  for (const std::string& name : model.param_names()) {
    auto git = grads.find(name);
    if (git == grads.end()) throw std::invalid_argument("sgd_step: missing gradient for '" + name + "'");
    Tensor<float>& p = model.param(name);
    const Tensor<float>& g = git->second;
    if (!p.same_shape(g)) {
      throw std::invalid_argument("sgd_step: gradient shape mismatch for '" + name + "': " + p.shape_str() +
                                  " vs " + g.shape_str());
    }
    Tensor<float>& v = state.velocity.try_emplace(name, Tensor<float>(p.shape())).first->second;
    const float wd = Model<float>::weight_decay_exempt(name) ? 0.0f : static_cast<float>(weight_decay);
    const float mu = static_cast<float>(momentum);
    const float step = static_cast<float>(lr);
    float* pp = p.data();
    float* vp = v.data();
    const float* gp = g.data();
    for (int64_t i = 0; i < p.numel(); ++i) {
      const float g_eff = gp[i] + wd * pp[i];
      vp[i] = mu * vp[i] + g_eff;
      pp[i] -= step * vp[i];
    }
  }
}

namespace {

struct BatchTensors {
  Tensor<float> rgb;
  Tensor<float> radar;
  nn::LabelBatch labels;
};

BatchTensors assemble_batch(const std::vector<TrainSample>& dataset, const std::vector<size_t>& indices,
                            size_t begin, size_t count) {
  const TrainSample& first = dataset[indices[begin]];
  const int ch_rgb = first.rgb.dim(0), h = first.rgb.dim(1), w = first.rgb.dim(2);
  const int ch_radar = first.radar.dim(0);
  BatchTensors batch;
  batch.rgb = Tensor<float>({static_cast<int>(count), ch_rgb, h, w});
  batch.radar = Tensor<float>({static_cast<int>(count), ch_radar, h, w});
  batch.labels.labels = Tensor<int32_t>({static_cast<int>(count), h, w});
  batch.labels.mask = Tensor<uint8_t>({static_cast<int>(count), h, w});
  const int64_t rgb_n = first.rgb.numel();
  const int64_t radar_n = first.radar.numel();
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (size_t j = 0; j < count; ++j) {
    const TrainSample& s = dataset[indices[begin + j]];
    if (s.rgb.numel() != rgb_n || s.radar.numel() != radar_n || s.labels.numel() != plane) {
      throw std::invalid_argument("fit: dataset samples disagree on tensor shapes");
    }
    std::memcpy(batch.rgb.data() + static_cast<int64_t>(j) * rgb_n, s.rgb.data(), sizeof(float) * rgb_n);
    std::memcpy(batch.radar.data() + static_cast<int64_t>(j) * radar_n, s.radar.data(), sizeof(float) * radar_n);
    std::memcpy(batch.labels.labels.data() + static_cast<int64_t>(j) * plane, s.labels.data(),
                sizeof(int32_t) * plane);
    std::memcpy(batch.labels.mask.data() + static_cast<int64_t>(j) * plane, s.mask.data(),
                sizeof(uint8_t) * plane);
  }
  return batch;
}

}  // namespace

TrainHistory fit(Model<float>& model, const std::vector<TrainSample>& dataset, const TrainConfig& cfg,
                 SgdState* state, int64_t start_iter,
                 const std::function<void(int64_t, double, double)>& on_iter) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("fit: empty dataset");

  const size_t n = dataset.size();
  const size_t batch_size = std::min<size_t>(static_cast<size_t>(cfg.batch_size), n);
  const int64_t batches_per_epoch = static_cast<int64_t>(n / batch_size);
  const int64_t max_iter = static_cast<int64_t>(cfg.epochs) * batches_per_epoch;

  SgdState local_state;
  SgdState& opt = state ? *state : local_state;
  TrainHistory history;

  // Canonical order by sample id, so the epoch shuffle alone decides batch
  // composition no matter how the caller ordered the vector.
  std::vector<size_t> canonical(n);
  for (size_t i = 0; i < n; ++i) canonical[i] = i;
  std::stable_sort(canonical.begin(), canonical.end(),
                   [&](size_t a, size_t b) { return dataset[a].id < dataset[b].id; });

  std::vector<size_t> indices(n);
  int64_t shuffled_epoch = -1;

  for (int64_t iter = start_iter; iter < max_iter; ++iter) {
    const int64_t epoch = iter / batches_per_epoch;
    const int64_t batch_in_epoch = iter % batches_per_epoch;
    if (epoch != shuffled_epoch) {
      indices = canonical;
      Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(epoch)));
      rng.shuffle(indices);
      shuffled_epoch = epoch;
    }

    BatchTensors batch =
        assemble_batch(dataset, indices, static_cast<size_t>(batch_in_epoch) * batch_size, batch_size);

    nn::Tape<float> tape;
    tape.set_check_finite(cfg.check_finite);
    auto result = model.forward(tape, batch.rgb, batch.radar, /*training=*/true, /*want_probs=*/false);
    nn::Var<float> loss = nn::ordinal_loss(result.logits, batch.labels);
    const double loss_value = static_cast<double>(loss.value()[0]);

    if (!std::isfinite(loss_value)) {
      if (!cfg.checkpoint_path.empty()) {
        save_checkpoint(cfg.checkpoint_path + ".diverged", model, opt, iter);
      }
      throw std::runtime_error("fit: non-finite loss at iteration " + std::to_string(iter) +
                               "; aborted with last finite state saved");
    }

    tape.backward(loss);
    std::map<std::string, Tensor<float>> grads;
    for (size_t i = 0; i < tape.size(); ++i) {
      const auto& node = tape.node(static_cast<int>(i));
      if (node.backward == nullptr && node.needs_grad && model.has_param(node.name)) {
        Tensor<float> g = node.grad.empty() ? Tensor<float>(node.value.shape()) : node.grad;
        auto [it, inserted] = grads.try_emplace(node.name, std::move(g));
        if (!inserted) {
          for (int64_t j = 0; j < it->second.numel(); ++j) it->second[j] += node.grad[j];
        }
      }
    }

    double lr = poly_lr(iter, max_iter, cfg.lr0, cfg.poly_power);
    if (cfg.step_decay) lr *= std::pow(0.1, static_cast<double>(epoch / 10));
    sgd_step(model, grads, opt, lr, cfg.momentum, cfg.weight_decay);

    history.iteration.push_back(iter);
    history.loss.push_back(loss_value);
    history.lr.push_back(lr);
    if (on_iter) on_iter(iter, loss_value, lr);

    if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(cfg.checkpoint_path, model, opt, iter + 1);
    }
  }
  if (!cfg.checkpoint_path.empty()) {
    save_checkpoint(cfg.checkpoint_path, model, opt, max_iter);
  }
  return history;
}

// ---------------------------------------------------------------------------
// Checkpoint format: little-endian, magic "RVCK", u32 version, u64 length +
// JSON config block, then three blob sections (params, state, momentum).
// Each blob: u32 name length, name bytes, u32 rank, u32 dims..., f32 data.

namespace {

constexpr char kMagic[4] = {'R', 'V', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename U>
void write_pod(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::istream& is, const std::string& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) {
    throw std::runtime_error("checkpoint: truncated file " + path);
  }
  return v;
}

void write_blob(std::ostream& os, const std::string& name, const Tensor<float>& t) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod<uint32_t>(os, static_cast<uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) write_pod<uint32_t>(os, static_cast<uint32_t>(t.dim(i)));
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

std::pair<std::string, Tensor<float>> read_blob(std::istream& is, const std::string& path) {
  const uint32_t name_len = read_pod<uint32_t>(is, path);
  if (name_len > 4096) throw std::runtime_error("checkpoint: implausible name length in " + path);
  std::string name(name_len, '\0');
  if (!is.read(name.data(), name_len)) throw std::runtime_error("checkpoint: truncated file " + path);
  const uint32_t rank = read_pod<uint32_t>(is, path);
  if (rank > 8) throw std::runtime_error("checkpoint: implausible tensor rank in " + path);
  std::vector<int> shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(read_pod<uint32_t>(is, path));
  Tensor<float> t(shape);
  if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)))) {
    throw std::runtime_error("checkpoint: truncated tensor data in " + path);
  }
  return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const std::string& path, const Model<float>& model, const SgdState& opt,
                     int64_t iteration, const std::string& rng_state) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_pod<uint32_t>(os, kVersion);

  nlohmann::json header;
  header["model"] = model_config_to_json(model.config());
  header["bins"] = bins_to_json(model.bins());
  header["iteration"] = iteration;
  header["rng"] = rng_state;
  const std::string header_str = header.dump();
  write_pod<uint64_t>(os, header_str.size());
  os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

  write_pod<uint32_t>(os, static_cast<uint32_t>(model.param_names().size()));
  for (const std::string& name : model.param_names()) write_blob(os, name, model.param(name));
  write_pod<uint32_t>(os, static_cast<uint32_t>(model.state_names().size()));
  for (const std::string& name : model.state_names()) write_blob(os, name, model.state(name));
  write_pod<uint32_t>(os, static_cast<uint32_t>(opt.velocity.size()));
  for (const auto& [name, t] : opt.velocity) write_blob(os, name, t);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  Checkpoint ckpt;
  ckpt.version = read_pod<uint32_t>(is, path);
  if (ckpt.version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ckpt.version) + " in " + path);
  }
  const uint64_t header_len = read_pod<uint64_t>(is, path);
  if (header_len > (1ull << 24)) throw std::runtime_error("checkpoint: implausible header length in " + path);
  std::string header_str(header_len, '\0');
  if (!is.read(header_str.data(), static_cast<std::streamsize>(header_len))) {
    throw std::runtime_error("checkpoint: truncated header in " + path);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: corrupt header JSON in " + path + ": " + e.what());
  }
  ckpt.cfg = model_config_from_json(header.at("model"));
  ckpt.bins = bins_from_json(header.at("bins"));
  ckpt.iteration = header.value("iteration", int64_t{0});
  ckpt.rng_state = header.value("rng", std::string{});

  auto read_section = [&](std::map<std::string, Tensor<float>>& dst) {
    const uint32_t count = read_pod<uint32_t>(is, path);
    if (count > 100000) throw std::runtime_error("checkpoint: implausible blob count in " + path);
    for (uint32_t i = 0; i < count; ++i) dst.insert(read_blob(is, path));
  };
  read_section(ckpt.params);
  read_section(ckpt.state);
  read_section(ckpt.momentum);
  return ckpt;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  Model<float> model = Model<float>::build(ckpt.cfg, ckpt.bins, /*seed=*/0);
  for (const std::string& name : model.param_names()) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
    if (!model.param(name).same_shape(it->second)) {
      throw std::runtime_error("checkpoint: shape mismatch for parameter '" + name + "'");
    }
    model.param(name) = it->second;
  }
  for (const std::string& name : model.state_names()) {
    auto it = ckpt.state.find(name);
    if (it == ckpt.state.end()) throw std::runtime_error("checkpoint: missing state tensor '" + name + "'");
    model.state(name) = it->second;
  }
  return model;
}

SgdState sgd_state_from_checkpoint(const Checkpoint& ckpt) {
  SgdState state;
  state.velocity = ckpt.momentum;
  return state;
}

// ---------------------------------------------------------------------------

double grad_check(const GradCheckProblem& problem) {
  // Analytic pass.
  nn::Tape<double> tape;
  std::vector<nn::Var<double>> leaves;
  leaves.reserve(problem.inputs.size());
  for (size_t i = 0; i < problem.inputs.size(); ++i) {
    leaves.push_back(tape.leaf(problem.inputs[i], true, "input" + std::to_string(i)));
  }
  nn::Var<double> out = problem.build(tape, leaves);
  if (out.value().numel() != 1) throw std::invalid_argument("grad_check: objective must be scalar");
  tape.backward(out);

  std::vector<Tensor<double>> analytic;
  for (size_t i = 0; i < leaves.size(); ++i) {
    const Tensor<double>& g = tape.node(leaves[i].idx).grad;
    Tensor<double> copy = g.empty() ? Tensor<double>(problem.inputs[i].shape()) : g;
    if (!copy.all_finite()) throw std::runtime_error("grad_check: non-finite analytic gradient");
    analytic.push_back(std::move(copy));
  }

  auto eval = [&](const std::vector<Tensor<double>>& inputs) {
    nn::Tape<double> t;
    std::vector<nn::Var<double>> ls;
    ls.reserve(inputs.size());
    for (const auto& in : inputs) ls.push_back(t.leaf(in, false, "probe"));
    return t.value(problem.build(t, ls).idx)[0];
  };

  double max_rel = 0;
  std::vector<Tensor<double>> probe = problem.inputs;
  for (size_t i = 0; i < probe.size(); ++i) {
    for (int64_t j = 0; j < probe[i].numel(); ++j) {
      const double orig = probe[i][j];
      probe[i][j] = orig + problem.eps;
      const double f_plus = eval(probe);
      probe[i][j] = orig - problem.eps;
      const double f_minus = eval(probe);
      probe[i][j] = orig;
      const double numeric = (f_plus - f_minus) / (2 * problem.eps);
      const double a = analytic[i][j];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace rvmde
