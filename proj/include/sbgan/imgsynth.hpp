#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "sbgan/data.hpp"

namespace sbgan::imgsynth {

// Per-sample, per-channel normalization over spatial positions with the
// variance floored at `var_floor`. Never couples samples in a batch.
torch::Tensor instance_normalize(const torch::Tensor& act, double var_floor = 1e-5);

// Nearest-neighbor resize of an N x K x h x w one-hot map to H x W.
torch::Tensor resize_onehot(const torch::Tensor& onehot, std::int64_t height, std::int64_t width);

// Spatially-adaptive normalization: gamma(y) * normalize(act) + beta(y).
// gamma(y) = 1 + conv(shared(y)), so zeroed heads give gamma = 1, beta = 0.
class SpadeNormImpl : public torch::nn::Module {
 public:
  SpadeNormImpl(std::int64_t channels, int num_classes, std::int64_t hidden);

  torch::Tensor forward(const torch::Tensor& act, const torch::Tensor& onehot);

  // Modulation grids for a one-hot map already at the activation size.
  std::pair<torch::Tensor, torch::Tensor> modulation(const torch::Tensor& onehot);

  std::int64_t channels() const { return channels_; }
  torch::nn::Conv2d& gamma_head() { return gamma_; }
  torch::nn::Conv2d& beta_head() { return beta_; }

 private:
  std::int64_t channels_;
  torch::nn::Conv2d shared_{nullptr};
  torch::nn::Conv2d gamma_{nullptr};
  torch::nn::Conv2d beta_{nullptr};
};
TORCH_MODULE(SpadeNorm);

// Checks shapes (State error when the heads were built for a different
// channel count) and applies the block to an N x C x H x W activation.
torch::Tensor spade_normalize(SpadeNorm& norm, const torch::Tensor& act, const torch::Tensor& onehot);
// Single-sample convenience: C x H x W activation and a SegMap.
torch::Tensor spade_normalize(SpadeNorm& norm, const torch::Tensor& act, const data::SegMap& segmap);

class SpadeResBlockImpl : public torch::nn::Module {
 public:
  SpadeResBlockImpl(std::int64_t in_channels, std::int64_t out_channels, int num_classes,
                    std::int64_t hidden);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& onehot);

 private:
  SpadeNorm norm0_{nullptr}, norm1_{nullptr}, norm_skip_{nullptr};
  torch::nn::Conv2d conv0_{nullptr}, conv1_{nullptr}, conv_skip_{nullptr};
  bool learned_skip_ = false;
};
TORCH_MODULE(SpadeResBlock);

struct SpadeGeneratorOptions {
  int num_classes = 4;
  std::int64_t height = 16;
  std::int64_t width = 16;
  int num_upsamples = 2;
  std::int64_t channels = 64;
  std::int64_t spade_hidden = 32;
  bool use_latent = false;
  std::int64_t latent_dim = 64;
};

class SpadeGeneratorImpl : public torch::nn::Module {
 public:
  explicit SpadeGeneratorImpl(SpadeGeneratorOptions options);

  // N x K x H x W one-hot -> N x 3 x H x W image in [0, 1]. `z` is required
  // exactly when the generator was built with use_latent.
  torch::Tensor forward(const torch::Tensor& onehot, const torch::Tensor& z = {});

  const SpadeGeneratorOptions& options() const { return options_; }

 private:
  SpadeGeneratorOptions options_;
  std::int64_t base_height_;
  std::int64_t base_width_;
  torch::nn::Conv2d init_conv_{nullptr};
  torch::nn::Linear init_fc_{nullptr};
  torch::nn::ModuleList blocks_;
  SpadeResBlock final_block_{nullptr};
  torch::nn::Conv2d to_rgb_{nullptr};
};
TORCH_MODULE(SpadeGenerator);

// Image for one segmap; K mismatch is an Argument error.
torch::Tensor synthesize(SpadeGenerator& gen, const data::SegMap& segmap,
                         const std::optional<torch::Tensor>& z = std::nullopt);
// Batched: N x H x W labels -> N x 3 x H x W.
torch::Tensor synthesize(SpadeGenerator& gen, const torch::Tensor& labels,
                         const std::optional<torch::Tensor>& z = std::nullopt);

struct PatchDiscriminatorOptions {
  std::int64_t in_channels = 7;
  std::int64_t channels = 64;
  int num_downsamples = 2;
  int num_scorers = 1;
};

struct DiscriminatorOutput {
  std::vector<torch::Tensor> scores;                 // one patch map per scorer
  std::vector<std::vector<torch::Tensor>> features;  // intermediate activations per scorer
};

// Multi-scale patch scorer; scorer i sees the input average-pooled i times.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(PatchDiscriminatorOptions options);
  DiscriminatorOutput forward(const torch::Tensor& x);
  const PatchDiscriminatorOptions& options() const { return options_; }

 private:
  PatchDiscriminatorOptions options_;
  std::vector<std::vector<torch::nn::Conv2d>> scorers_;
};
TORCH_MODULE(PatchDiscriminator);

// D_SPD(y, x): scores the channel concatenation of one-hot map and image.
class CondDiscriminatorImpl : public torch::nn::Module {
 public:
  CondDiscriminatorImpl(int num_classes, PatchDiscriminatorOptions options);
  DiscriminatorOutput forward(const torch::Tensor& onehot, const torch::Tensor& image);
  int num_classes() const { return num_classes_; }
  const PatchDiscriminatorOptions& options() const { return net_->options(); }

 private:
  int num_classes_;
  PatchDiscriminator net_{nullptr};
};
TORCH_MODULE(CondDiscriminator);

// Fixed random multi-scale feature pyramid; weights come from `seed` and are
// never trained.
class SurrogateFeatureExtractorImpl : public torch::nn::Module {
 public:
  explicit SurrogateFeatureExtractorImpl(std::uint64_t seed,
                                         std::vector<std::int64_t> channels = {32, 64, 96});

  std::vector<torch::Tensor> forward(const torch::Tensor& images);
  // Concatenated global-average-pooled features, N x sum(channels).
  torch::Tensor pooled(const torch::Tensor& images);

  std::size_t num_levels() const { return convs_.size(); }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::int64_t>& channels() const { return channels_; }

 private:
  std::uint64_t seed_;
  std::vector<std::int64_t> channels_;
  std::vector<torch::nn::Conv2d> convs_;
};
TORCH_MODULE(SurrogateFeatureExtractor);

struct HingeLosses {
  torch::Tensor d_loss;
  torch::Tensor g_adv;
};

// d_loss = mean relu(1 - D(real)) + mean relu(1 + D(fake)); g_adv = -mean D(fake).
// Both are averaged over scorers.
HingeLosses hinge_from_scores(const std::vector<torch::Tensor>& real_scores,
                              const std::vector<torch::Tensor>& fake_scores);
// -mean D(fake), averaged over scorers.
torch::Tensor hinge_generator_loss(const std::vector<torch::Tensor>& fake_scores);
HingeLosses hinge_losses(CondDiscriminator& d, const torch::Tensor& onehot, const torch::Tensor& x_real,
                         const torch::Tensor& x_fake);

// Weighted sum over pyramid levels of the mean absolute feature difference.
torch::Tensor perceptual_l1(SurrogateFeatureExtractor& fx, const torch::Tensor& x_fake,
                            const torch::Tensor& x_real, const std::vector<double>& layer_weights);

// Mean absolute difference of matched intermediate features, averaged over
// layers and scorers. Gradients flow only through `fake`.
torch::Tensor feature_matching_from(const DiscriminatorOutput& fake, const DiscriminatorOutput& real);
torch::Tensor feature_matching_l1(CondDiscriminator& d, const torch::Tensor& onehot,
                                  const torch::Tensor& x_fake, const torch::Tensor& x_real);

struct SpadeTrainConfig {
  std::int64_t steps = 1000;
  std::int64_t batch_size = 16;
  double lr_g = 1e-4;
  double lr_d = 4e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double lambda_perceptual = 10.0;
  double lambda_feat = 10.0;
  std::vector<double> perceptual_weights = {0.25, 0.5, 1.0};
  std::uint64_t seed = 2;
  std::int64_t log_interval = 50;
};

struct SpadeGeneratorLoss {
  torch::Tensor fake;
  torch::Tensor g_adv;
  torch::Tensor perceptual;
  torch::Tensor feat_match;
  torch::Tensor total;  // g_adv + lambda1 * perceptual + lambda2 * feat_match
};

// Generator objective on real (y, x) pairs.
SpadeGeneratorLoss spade_generator_loss(SpadeGenerator& gen, CondDiscriminator& d,
                                        SurrogateFeatureExtractor& fx, const torch::Tensor& onehot,
                                        const torch::Tensor& x_real, const SpadeTrainConfig& cfg,
                                        const torch::Tensor& z = {});

struct SpadeMetricsRow {
  std::int64_t step = 0;
  double d_loss = 0.0;
  double g_adv = 0.0;
  double perceptual = 0.0;
  double feat_match = 0.0;
  double g_total = 0.0;
};

class SpadeTrainer {
 public:
  SpadeTrainer(SpadeGenerator gen, CondDiscriminator d, SurrogateFeatureExtractor fx,
               data::DatasetTensors data, SpadeTrainConfig cfg);

  std::int64_t step() const { return step_; }
  std::int64_t total_steps() const { return cfg_.steps; }
  bool done() const { return step_ >= cfg_.steps; }

  void run(std::int64_t until, const std::function<void(const SpadeMetricsRow&)>& on_log = {});
  void restore_step(std::int64_t step) { step_ = step; }

  torch::optim::Adam& generator_optimizer() { return gen_opt_; }
  torch::optim::Adam& discriminator_optimizer() { return d_opt_; }

 private:
  SpadeMetricsRow train_step();

  SpadeGenerator gen_;
  CondDiscriminator d_;
  SurrogateFeatureExtractor fx_;
  data::DatasetTensors data_;
  SpadeTrainConfig cfg_;
  torch::optim::Adam gen_opt_;
  torch::optim::Adam d_opt_;
  data::BatchSampler sampler_;
  std::int64_t step_ = 0;
};

struct SpadeTrainResult {
  std::vector<SpadeMetricsRow> log;
};

SpadeTrainResult train_spade(SpadeGenerator& gen, CondDiscriminator& d, SurrogateFeatureExtractor& fx,
                             const data::DatasetTensors& data, const SpadeTrainConfig& cfg);

}  // namespace sbgan::imgsynth
