#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <torch/torch.h>

#include "sbgan/data.hpp"

namespace sbgan::seggen {

// Tensors in this module put the class axis at dim -3: K x H x W for a
// single map, N x K x H x W for a batch.

struct GumbelConfig {
  double tau = 1.0;
  double eps = 1e-20;

  void validate() const;
};

// g = -log(-log(u + eps) + eps).
torch::Tensor gumbel_transform(const torch::Tensor& uniform, double eps = 1e-20);

// Standard Gumbel noise, deterministic in (shape, seed).
torch::Tensor sample_gumbel(at::IntArrayRef shape, std::uint64_t seed, double eps = 1e-20,
                            torch::Dtype dtype = torch::kFloat32);

// Relaxed sample S = softmax((log P + g) / tau) over the class axis. P must
// be non-negative and sum to one per pixel within 1e-5.
torch::Tensor gumbel_softmax(const torch::Tensor& probs, const torch::Tensor& noise,
                             const GumbelConfig& cfg);

// Same relaxation from unnormalized logits; log P is taken as log_softmax.
torch::Tensor gumbel_softmax_from_logits(const torch::Tensor& logits, const torch::Tensor& noise,
                                         const GumbelConfig& cfg);

enum class StraightThrough {
  Soft,     // backward passes the incoming gradient to S unchanged
  Blocked,  // diagnostic: backward returns zeros
};

// Forward: one-hot of argmax over the class axis, ties to the smallest index.
// Backward: identity (Soft) or zero (Blocked).
torch::Tensor straight_through_discretize(const torch::Tensor& relaxed,
                                          StraightThrough mode = StraightThrough::Soft);

struct Resolution {
  std::int64_t height = 4;
  std::int64_t width = 4;

  bool operator==(const Resolution&) const = default;
};

struct ProgressiveSchedule {
  std::vector<Resolution> stage_resolutions;
  std::int64_t steps_per_stage = 0;
  double fadein_fraction = 0.5;

  // base, 2*base, 4*base, ... with `num_stages` entries.
  static ProgressiveSchedule growing(Resolution base, int num_stages, std::int64_t steps_per_stage,
                                     double fadein_fraction);

  void validate() const;
  int num_stages() const { return static_cast<int>(stage_resolutions.size()); }
  std::int64_t total_steps() const { return steps_per_stage * num_stages(); }
  int stage_at(std::int64_t step) const;
  // Linear ramp from 0 to 1 over the first fadein_fraction of each stage
  // after the first; the base stage always runs at alpha = 1.
  double alpha_at(std::int64_t step) const;
};

struct SegNetOptions {
  int num_classes = 4;
  std::int64_t latent_dim = 64;
  Resolution base{4, 4};
  int num_stages = 3;
  std::int64_t channels = 64;

  Resolution resolution_at(int stage) const {
    return {base.height << stage, base.width << stage};
  }
};

// Holds the current stage and fade-in blend shared by generator and critic.
class Progress {
 public:
  void set(int num_stages, int stage, double alpha);
  int stage() const { return stage_; }
  double alpha() const { return alpha_; }

 private:
  int stage_ = 0;
  double alpha_ = 1.0;
};

class SegGeneratorImpl : public torch::nn::Module {
 public:
  explicit SegGeneratorImpl(SegNetOptions options);

  // K-channel logits at the current stage resolution.
  torch::Tensor forward(const torch::Tensor& z);
  // Logits of the stage head alone, without fade-in blending.
  torch::Tensor stage_logits(const torch::Tensor& z, int stage);

  void set_progress(int stage, double alpha) { progress_.set(options_.num_stages, stage, alpha); }
  int stage() const { return progress_.stage(); }
  double alpha() const { return progress_.alpha(); }
  int num_stages() const { return options_.num_stages; }
  const SegNetOptions& options() const { return options_; }

 private:
  // Features at `stage` and (when stage > 0) at stage - 1.
  std::pair<torch::Tensor, torch::Tensor> features(const torch::Tensor& z, int stage);

  SegNetOptions options_;
  Progress progress_;
  torch::nn::Linear input_{nullptr};
  torch::nn::Conv2d base_conv_{nullptr};
  torch::nn::ModuleList blocks_;
  torch::nn::ModuleList to_logits_;
};
TORCH_MODULE(SegGenerator);

// WGAN critic over one-hot-like K x H x W inputs; unbounded scalar output.
class SegCriticImpl : public torch::nn::Module {
 public:
  explicit SegCriticImpl(SegNetOptions options);

  // N scores for inputs at the current stage resolution.
  torch::Tensor forward(const torch::Tensor& x);

  void set_progress(int stage, double alpha) { progress_.set(options_.num_stages, stage, alpha); }
  int stage() const { return progress_.stage(); }
  double alpha() const { return progress_.alpha(); }
  int num_stages() const { return options_.num_stages; }
  const SegNetOptions& options() const { return options_; }

 private:
  SegNetOptions options_;
  Progress progress_;
  torch::nn::ModuleList from_onehot_;
  torch::nn::ModuleList blocks_;
  torch::nn::Conv2d final_conv_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(SegCritic);

struct SegSample {
  torch::Tensor probs;    // P, softmax of the logits
  torch::Tensor relaxed;  // S
  torch::Tensor hard;     // straight-through one-hot, carries gradient to S
  torch::Tensor labels;   // N x H x W int64, argmax of S
};

// Runs the generator at its current stage, then the Gumbel-softmax and the
// straight-through discretization with noise drawn from `seed`.
SegSample generate_segmap(SegGenerator& gen, const torch::Tensor& z, const GumbelConfig& cfg,
                          std::uint64_t seed, StraightThrough mode = StraightThrough::Soft);

using ScoreFn = std::function<torch::Tensor(const torch::Tensor&)>;

struct WganGpLosses {
  torch::Tensor critic_loss;
  torch::Tensor gen_loss;
  torch::Tensor gp_term;
};

// critic_loss = mean c(fake) - mean c(real) + gp_weight * gp,
// gen_loss = -mean c(fake),
// gp = mean over uniform interpolates of (|grad c(x)|_2 - 1)^2.
WganGpLosses wgan_gp_losses(const ScoreFn& critic, const torch::Tensor& real,
                            const torch::Tensor& fake, double gp_weight, std::uint64_t seed);

struct SegTrainConfig {
  std::int64_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double gp_weight = 10.0;
  int critic_steps = 1;
  GumbelConfig gumbel;
  std::uint64_t seed = 1;
  std::int64_t log_interval = 50;
  std::int64_t eval_samples = 64;
};

struct SegMetricsRow {
  std::int64_t step = 0;
  int stage = 0;
  double alpha = 1.0;
  double critic_loss = 0.0;
  double gen_loss = 0.0;
  double gp = 0.0;
  double hist_kl = 0.0;
};

class SegTrainer {
 public:
  // `real_labels`: N x H x W int64 maps at the final stage resolution.
  SegTrainer(SegGenerator gen, SegCritic critic, torch::Tensor real_labels,
             ProgressiveSchedule schedule, SegTrainConfig cfg);

  std::int64_t step() const { return step_; }
  std::int64_t total_steps() const { return schedule_.total_steps(); }
  bool done() const { return step_ >= total_steps(); }

  // Trains until `until` completed steps (clamped to the schedule). Emits a
  // row every log_interval steps and at the final step.
  void run(std::int64_t until, const std::function<void(const SegMetricsRow&)>& on_log = {});

  // Used when resuming: restores the step counter and the matching progress.
  void restore_step(std::int64_t step);

  torch::optim::Adam& generator_optimizer() { return gen_opt_; }
  torch::optim::Adam& critic_optimizer() { return critic_opt_; }
  const ProgressiveSchedule& schedule() const { return schedule_; }

  // Class-histogram KL(generated || real) at the current stage.
  double histogram_kl(std::int64_t samples, std::uint64_t seed);

 private:
  SegMetricsRow train_step();
  torch::Tensor real_at_stage(const torch::Tensor& indices, int stage) const;

  SegGenerator gen_;
  SegCritic critic_;
  torch::Tensor real_labels_;
  ProgressiveSchedule schedule_;
  SegTrainConfig cfg_;
  torch::optim::Adam gen_opt_;
  torch::optim::Adam critic_opt_;
  data::BatchSampler sampler_;
  std::int64_t step_ = 0;
};

struct SegTrainResult {
  std::vector<SegMetricsRow> log;
};

SegTrainResult train_seg(SegGenerator& gen, SegCritic& critic, const torch::Tensor& real_labels,
                         const ProgressiveSchedule& schedule, const SegTrainConfig& cfg);

}  // namespace sbgan::seggen
