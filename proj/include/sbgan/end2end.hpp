#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sbgan/data.hpp"
#include "sbgan/eval.hpp"
#include "sbgan/imgsynth.hpp"
#include "sbgan/seggen.hpp"

namespace sbgan::end2end {

// D2: image-only patch discriminator with the same architecture as D_SPD.
class UncondDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit UncondDiscriminatorImpl(imgsynth::PatchDiscriminatorOptions options);
  // Rejects anything but N x 3 x H x W; label channels never reach D2.
  imgsynth::DiscriminatorOutput forward(const torch::Tensor& image);
  const imgsynth::PatchDiscriminatorOptions& options() const { return net_->options(); }

 private:
  imgsynth::PatchDiscriminator net_{nullptr};
};
TORCH_MODULE(UncondDiscriminator);

// All trainable components plus the frozen perceptual feature pyramid.
struct SbganModels {
  seggen::SegGenerator g_sb{nullptr};
  seggen::SegCritic d_sb{nullptr};
  imgsynth::SpadeGenerator g_spd{nullptr};
  imgsynth::CondDiscriminator d_spd{nullptr};
  UncondDiscriminator d2{nullptr};
  imgsynth::SurrogateFeatureExtractor fx{nullptr};

  // Deep copy with identical weights and progress.
  SbganModels clone() const;
};

struct ComposedSample {
  torch::Tensor image;
  seggen::SegSample seg;
};

// G(z) = G_SPD(G_SB(z)) through the straight-through map, so image gradients
// reach the segmentation generator. Throws Config when K or the resolution
// of the two networks disagree.
ComposedSample compose_generate(seggen::SegGenerator& g_sb, imgsynth::SpadeGenerator& g_spd,
                                const torch::Tensor& z, const seggen::GumbelConfig& cfg,
                                std::uint64_t seed,
                                seggen::StraightThrough mode = seggen::StraightThrough::Soft);

struct D2Losses {
  torch::Tensor d2_loss;
  torch::Tensor g_uncond;
};

D2Losses d2_from_scores(const std::vector<torch::Tensor>& real_scores,
                        const std::vector<torch::Tensor>& fake_scores);
D2Losses d2_losses(UncondDiscriminator& d2, const torch::Tensor& x_real, const torch::Tensor& x_fake);

// g_uncond + l_g_spd + lambda_sb * l_g_sb. Non-finite inputs raise Numeric.
torch::Tensor joint_generator_loss(const torch::Tensor& g_uncond, const torch::Tensor& l_g_spd,
                                   const torch::Tensor& l_g_sb, double lambda_sb);
double joint_generator_loss(double g_uncond, double l_g_spd, double l_g_sb, double lambda_sb);

struct FineTuneConfig {
  double lambda_sb = 10.0;
  double lr_sb = 1e-5;
  double lr_d_sb = 1e-5;
  double lr_spd_g = 1e-4;
  double lr_spd_d = 4e-4;
  double lr_d2 = 4e-4;
  double sb_beta1 = 0.0, sb_beta2 = 0.99;
  double spd_beta1 = 0.0, spd_beta2 = 0.9;
  bool ft_sb = true;
  bool ft_spade = true;
  // Both flags false is only legal for the no-fine-tuning baseline.
  bool baseline = false;
  std::int64_t steps = 200;
  std::int64_t batch_size = 16;
  double gp_weight = 10.0;
  double lambda_perceptual = 10.0;
  double lambda_feat = 10.0;
  std::vector<double> perceptual_weights = {0.25, 0.5, 1.0};
  seggen::GumbelConfig gumbel;
  seggen::StraightThrough straight_through = seggen::StraightThrough::Soft;
  std::uint64_t seed = 3;
  std::int64_t log_interval = 25;

  void validate() const;
};

struct FineTuneMetricsRow {
  std::int64_t step = 0;
  double d2_loss = 0.0;
  double d_spd_loss = 0.0;
  double d_sb_loss = 0.0;
  double gp = 0.0;
  double g_uncond = 0.0;
  double l_g_spd = 0.0;
  double l_g_sb = 0.0;
  double l_g_total = 0.0;
};

// Per step: D2, D_SPD (real pairs), D_SB (WGAN-GP), then both generators on
// the joint loss. Generators whose flag is off are never stepped.
class FineTuner {
 public:
  FineTuner(SbganModels models, data::DatasetTensors data, FineTuneConfig cfg);

  std::int64_t step() const { return step_; }
  std::int64_t total_steps() const { return cfg_.steps; }
  bool done() const { return step_ >= cfg_.steps; }

  void run(std::int64_t until, const std::function<void(const FineTuneMetricsRow&)>& on_log = {});
  void restore_step(std::int64_t step) { step_ = step; }

  torch::optim::Adam& g_sb_optimizer() { return g_sb_opt_; }
  torch::optim::Adam& d_sb_optimizer() { return d_sb_opt_; }
  torch::optim::Adam& g_spd_optimizer() { return g_spd_opt_; }
  torch::optim::Adam& d_spd_optimizer() { return d_spd_opt_; }
  torch::optim::Adam& d2_optimizer() { return d2_opt_; }

 private:
  FineTuneMetricsRow train_step();

  SbganModels m_;
  data::DatasetTensors data_;
  FineTuneConfig cfg_;
  imgsynth::SpadeTrainConfig spade_cfg_;
  torch::optim::Adam g_sb_opt_;
  torch::optim::Adam d_sb_opt_;
  torch::optim::Adam g_spd_opt_;
  torch::optim::Adam d_spd_opt_;
  torch::optim::Adam d2_opt_;
  data::BatchSampler sampler_;
  std::int64_t step_ = 0;
};

struct FineTuneResult {
  std::vector<FineTuneMetricsRow> log;
};

FineTuneResult finetune(SbganModels& models, const data::DatasetTensors& data, const FineTuneConfig& cfg);

// Composed-image sampler for FID (no gradients, batched).
eval::ImageSampler composed_sampler(SbganModels& models, const seggen::GumbelConfig& cfg);

// Generated label maps from G_SB at its current stage.
torch::Tensor sample_labels(seggen::SegGenerator& g_sb, std::int64_t n, std::uint64_t seed,
                            const seggen::GumbelConfig& cfg);

struct AblationSetting {
  std::string name;
  bool ft_sb = false;
  bool ft_spade = false;
};

// No FT, FT SB, FT SPADE, FT Both.
const std::array<AblationSetting, 4>& ablation_settings();

struct AblationEvalConfig {
  std::int64_t n_per_trial = 500;
  int trials = 5;
  std::uint64_t seed = 4;
  std::int64_t layout_samples = 500;
};

struct AblationRow {
  std::string setting;
  double fid = 0.0;
  double hist_kl = 0.0;
  std::int64_t steps = 0;
  std::uint64_t seed = 0;
  bool freeze_verified = false;  // frozen generators compared bit-equal
};

// Every setting starts from a copy of `pretrained` with identical seeds.
std::vector<AblationRow> run_ablation(const SbganModels& pretrained, const data::DatasetTensors& train,
                                      const data::Dataset& val, const FineTuneConfig& cfg,
                                      const eval::EmbeddingModel& embedder,
                                      const AblationEvalConfig& eval_cfg);

// Columns: setting,fid,hist_kl,steps,seed.
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows,
                        const std::string& config_hash = {});

}  // namespace sbgan::end2end
