#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pathogan/config.hpp"
#include "pathogan/data.hpp"
#include "pathogan/losses.hpp"
#include "pathogan/model.hpp"

namespace pathogan {

struct TrainConfig {
  int epochs = 119;
  int batch_size = 4;
  LossWeights weights;
  double step_size = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int buffer_capacity = 50;
  uint64_t seed = 1337;
  int checkpoint_every = 10;
  std::string out_dir = "runs/pathogan";
  bool gan_enabled = true;  // test hook: disables the adversarial terms

  static TrainConfig from_run_config(const RunConfig& cfg);
};

// Gradient descent with first/second-moment adaptation and bias correction.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Parameter<float>*> params, double lr, double b1, double b2);

  // Verifies every gradient is finite, then updates all parameters.
  void step();

  int64_t steps() const { return t_; }
  void set_steps(int64_t t) { t_ = t; }
  std::vector<Parameter<float>*>& params() { return params_; }
  std::vector<Tensor<float>>& m() { return m_; }
  std::vector<Tensor<float>>& v() { return v_; }

 private:
  std::vector<Parameter<float>*> params_;
  std::vector<Tensor<float>> m_, v_;
  double lr_ = 2e-4, b1_ = 0.5, b2_ = 0.999;
  int64_t t_ = 0;
};

// Pool of past generator outputs mixed into discriminator batches. Fills to
// capacity first; afterwards each image is swapped against a stored one with
// probability 1/2.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity = 50) : capacity_(capacity) {}

  Tensor<float> query(const Tensor<float>& fresh_batch, Rng& rng);

  int capacity() const { return capacity_; }
  std::vector<Tensor<float>>& stored() { return stored_; }
  const std::vector<Tensor<float>>& stored() const { return stored_; }

 private:
  int capacity_ = 50;
  std::vector<Tensor<float>> stored_;
};

inline Tensor<float> replay_sample(ReplayBuffer& buffer, const Tensor<float>& fresh,
                                   Rng& rng) {
  return buffer.query(fresh, rng);
}

// Everything a training run mutates. Optimizer state points into the model's
// parameters, so the struct is created on the heap and never moved.
struct TrainState {
  PathoGanModel<float> model;
  Adam opt_g, opt_d;
  ReplayBuffer buffer_a, buffer_b;
  Rng rng;
  int epoch = 0;          // completed epochs
  int64_t iteration = 0;  // completed steps

  TrainState(const ModelConfig& mc, const TrainConfig& tc);
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  void zero_grad();
};

std::unique_ptr<TrainState> make_train_state(const RunConfig& cfg);

// Per-phase parameter digests, for verifying update isolation.
struct TrainStepProbe {
  uint64_t d_before_g = 0, d_after_g = 0;
  uint64_t g_before_d = 0, g_after_d = 0;
};

// One optimization step: generator phase (cycles, VAE, identity, relevancy,
// KL, adversarial) then one discriminator phase per domain on replay-mixed
// fakes. Throws NonFiniteLossError before any update would apply a
// non-finite value.
LossReport train_step(const Tensor<float>& batch_a, const Tensor<float>& batch_b,
                      TrainState& state, const TrainConfig& cfg,
                      TrainStepProbe* probe = nullptr);

// ---- checkpoints -----------------------------------------------------------

inline constexpr const char* kCheckpointMagic = "PATHOGAN-CKPT-1\n";

void save_checkpoint(const std::string& path, const TrainState& state,
                     const RunConfig& cfg);

struct Checkpoint {
  RunConfig config;
  std::unique_ptr<TrainState> state;
};

Checkpoint load_checkpoint(const std::string& path);

// ---- the loop ---------------------------------------------------------------

// Iterates epochs over the pathological set (healthy slices drawn
// cyclically), logs one CSV row per step, checkpoints on the configured
// cadence and at the end. Returns the final checkpoint path. If resume_path
// is set the run continues from that checkpoint; a config-hash mismatch
// raises ResumeMismatchError.
std::string run_training(const RunConfig& cfg, const TrainingSet& data,
                         const std::string& resume_path = "");

uint64_t parameter_digest(const std::vector<Parameter<float>*>& params);

}  // namespace pathogan
