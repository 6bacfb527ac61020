#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "sbgan/data.hpp"
#include "sbgan/end2end.hpp"
#include "sbgan/imgsynth.hpp"
#include "sbgan/seggen.hpp"

namespace sbgan::config {

// Every field has a default; the defaults are the desk-scale preset
// (32 x 64 maps, K = 6, 3000/500 toy samples).
struct DataSection {
  int num_classes = 6;
  std::int64_t height = 32;
  std::int64_t width = 64;
  std::size_t n_train = 3000;
  std::size_t n_val = 500;
  std::uint64_t seed = 0;
  std::uint64_t world_seed = 0;
};

struct SegSection {
  std::int64_t latent_dim = 64;
  int num_stages = 4;
  std::int64_t channels = 64;
  std::int64_t steps_per_stage = 2000;
  double fadein_fraction = 0.5;
  std::int64_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double gp_weight = 10.0;
  int critic_steps = 1;
  double tau = 1.0;
  double gumbel_eps = 1e-20;
  std::uint64_t seed = 1;
  std::int64_t log_interval = 50;
  std::int64_t eval_samples = 64;
  std::int64_t sample_interval = 500;
  std::int64_t checkpoint_interval = 500;
};

struct SpadeSection {
  int num_upsamples = 3;
  std::int64_t channels = 64;
  std::int64_t spade_hidden = 32;
  bool use_latent = false;
  std::int64_t latent_dim = 64;
  std::int64_t disc_channels = 64;
  int disc_downsamples = 2;
  int num_scorers = 1;
  double lambda_perceptual = 10.0;
  double lambda_feat = 10.0;
  std::vector<double> perceptual_weights = {0.25, 0.5, 1.0};
  std::uint64_t feature_seed = 1234;
  std::vector<std::int64_t> feature_channels = {32, 64, 96};
  double lr_g = 1e-4;
  double lr_d = 4e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  std::int64_t batch_size = 16;
  std::int64_t steps = 4000;
  std::uint64_t seed = 2;
  std::int64_t log_interval = 50;
  std::int64_t sample_interval = 500;
  std::int64_t checkpoint_interval = 500;
};

struct FinetuneSection {
  double lambda_sb = 10.0;
  double lr_sb = 1e-5;
  double lr_d_sb = 1e-5;
  double lr_spd_g = 1e-4;
  double lr_spd_d = 4e-4;
  double lr_d2 = 4e-4;
  bool ft_sb = true;
  bool ft_spade = true;
  std::int64_t steps = 1000;
  std::int64_t batch_size = 16;
  std::uint64_t seed = 3;
  std::int64_t log_interval = 25;
  std::int64_t checkpoint_interval = 250;
};

struct EvalSection {
  std::int64_t n_per_trial = 500;
  int trials = 5;
  std::uint64_t seed = 4;
  std::uint64_t embedder_seed = 777;
  std::vector<std::int64_t> embedder_channels = {32, 64, 96};
  std::int64_t layout_samples = 500;
};

struct RunConfig {
  DataSection data;
  SegSection seg;
  SpadeSection spade;
  FinetuneSection finetune;
  EvalSection eval;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// Missing keys take defaults; unknown keys are a Config error.
RunConfig parse(const std::string& text);
RunConfig load(const std::string& path);
std::string dump(const RunConfig& c);

// 16 hex digits of FNV-1a over the canonical JSON text.
std::string hash_text(const std::string& text);
std::string config_hash(const RunConfig& c);
// Hash over a subset of top-level sections, e.g. {"data", "seg"}.
std::string section_hash(const RunConfig& c, const std::vector<std::string>& sections);

data::ToyWorldSpec toy_spec(const RunConfig& c);
seggen::SegNetOptions seg_net_options(const RunConfig& c);
seggen::ProgressiveSchedule seg_schedule(const RunConfig& c);
seggen::SegTrainConfig seg_train_config(const RunConfig& c);
seggen::GumbelConfig gumbel_config(const RunConfig& c);
imgsynth::SpadeGeneratorOptions spade_options(const RunConfig& c);
imgsynth::PatchDiscriminatorOptions disc_options(const RunConfig& c);
imgsynth::SpadeTrainConfig spade_train_config(const RunConfig& c);
end2end::FineTuneConfig finetune_config(const RunConfig& c);
end2end::AblationEvalConfig ablation_eval_config(const RunConfig& c);

// Fresh, seeded models for every component.
end2end::SbganModels build_models(const RunConfig& c);

}  // namespace sbgan::config
