#ifndef RVMDE_TRAINING_HPP
#define RVMDE_TRAINING_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rvmde/autodiff.hpp"
#include "rvmde/model.hpp"
#include "rvmde/tensor.hpp"

namespace rvmde {

struct TrainConfig {
  double lr0 = 0.001;
  double poly_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 8;
  int epochs = 40;
  uint64_t seed = 0;
  bool step_decay = false;     // optional extra lr x0.1 every 10 epochs
  int checkpoint_every = 0;    // iterations between checkpoints; 0 = final only
  std::string checkpoint_path; // empty disables checkpointing
  bool check_finite = false;   // scan activations for NaN after every op

  void validate() const;
};

/// lr0 * (1 - iter/max_iter)^power; iter past max_iter clamps to 0.
double poly_lr(int64_t iter, int64_t max_iter, double lr0, double power);

struct SgdState {
  std::map<std::string, Tensor<float>> velocity;
};

/// Classic momentum update: g' = g + wd*p; v <- m*v + g'; p <- p - lr*v.
/// Norm scale/shift parameters skip weight decay.
void sgd_step(Model<float>& model, const std::map<std::string, Tensor<float>>& grads, SgdState& state,
              double lr, double momentum, double weight_decay);

struct TrainSample {
  Tensor<float> rgb;       // 3 x H x W
  Tensor<float> radar;     // C x H x W
  Tensor<int32_t> labels;  // H x W
  Tensor<uint8_t> mask;    // H x W
  std::string id;          // stable identity; batch composition is defined
                           // by the shuffle over ids, not vector order
};

struct TrainHistory {
  std::vector<int64_t> iteration;
  std::vector<double> loss;
  std::vector<double> lr;
};

/// Epoch/batch loop with a seeded per-epoch shuffle (epoch shuffles are
/// derived from (seed, epoch), so resuming mid-run replays the identical
/// batch sequence). Aborts with a checkpoint if the loss goes non-finite.
TrainHistory fit(Model<float>& model, const std::vector<TrainSample>& dataset, const TrainConfig& cfg,
                 SgdState* state = nullptr, int64_t start_iter = 0,
                 const std::function<void(int64_t, double, double)>& on_iter = nullptr);

struct Checkpoint {
  uint32_t version = 1;
  ModelConfig cfg;
  SidBins bins;
  int64_t iteration = 0;
  std::string rng_state;
  std::map<std::string, Tensor<float>> params;
  std::map<std::string, Tensor<float>> state;
  std::map<std::string, Tensor<float>> momentum;
};

void save_checkpoint(const std::string& path, const Model<float>& model, const SgdState& opt,
                     int64_t iteration, const std::string& rng_state = "");
Checkpoint load_checkpoint(const std::string& path);

/// Rebuild a model from checkpoint contents (parameters overwritten with
/// the stored blobs, shapes validated).
Model<float> model_from_checkpoint(const Checkpoint& ckpt);
SgdState sgd_state_from_checkpoint(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking (float64)

struct GradCheckProblem {
  std::vector<Tensor<double>> inputs;
  std::function<nn::Var<double>(nn::Tape<double>&, const std::vector<nn::Var<double>>&)> build;
  double eps = 1e-5;
};

/// Max over all input elements of |analytic - numeric| / max(|a|,|n|,1e-8),
/// with numeric = central differences. Throws on non-finite analytic
/// gradients.
double grad_check(const GradCheckProblem& problem);

}  // namespace rvmde

#endif  // RVMDE_TRAINING_HPP
