#include "sbgan/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "sbgan/errors.hpp"
#include "sbgan/rng.hpp"

namespace sbgan::config {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataSection, num_classes, height, width, n_train, n_val,
                                                seed, world_seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SegSection, latent_dim, num_stages, channels,
                                                steps_per_stage, fadein_fraction, batch_size, lr, beta1,
                                                beta2, gp_weight, critic_steps, tau, gumbel_eps, seed,
                                                log_interval, eval_samples, sample_interval,
                                                checkpoint_interval)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SpadeSection, num_upsamples, channels, spade_hidden,
                                                use_latent, latent_dim, disc_channels, disc_downsamples,
                                                num_scorers, lambda_perceptual, lambda_feat,
                                                perceptual_weights, feature_seed, feature_channels, lr_g,
                                                lr_d, beta1, beta2, batch_size, steps, seed, log_interval,
                                                sample_interval, checkpoint_interval)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FinetuneSection, lambda_sb, lr_sb, lr_d_sb, lr_spd_g,
                                                lr_spd_d, lr_d2, ft_sb, ft_spade, steps, batch_size, seed,
                                                log_interval, checkpoint_interval)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalSection, n_per_trial, trials, seed, embedder_seed,
                                                embedder_channels, layout_samples)

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"data", c.data},
                     {"seg", c.seg},
                     {"spade", c.spade},
                     {"finetune", c.finetune},
                     {"eval", c.eval}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  RunConfig defaults;
  c.data = j.value("data", defaults.data);
  c.seg = j.value("seg", defaults.seg);
  c.spade = j.value("spade", defaults.spade);
  c.finetune = j.value("finetune", defaults.finetune);
  c.eval = j.value("eval", defaults.eval);
}

namespace {

void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& where) {
  if (!given.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) fail(ErrorKind::Config, "unknown config key '" + where + key + "'");
    if (value.is_object()) reject_unknown_keys(value, known.at(key), where + key + ".");
  }
}

}  // namespace

RunConfig parse(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) fail(ErrorKind::Config, "config must be a JSON object");
    reject_unknown_keys(j, nlohmann::json(RunConfig{}), "");
    return j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("invalid config: ") + e.what());
  }
}

RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Config, "cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string dump(const RunConfig& c) { return nlohmann::json(c).dump(2); }

std::string hash_text(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& c) { return hash_text(nlohmann::json(c).dump()); }

std::string section_hash(const RunConfig& c, const std::vector<std::string>& sections) {
  const nlohmann::json full = c;
  nlohmann::json subset = nlohmann::json::object();
  for (const auto& s : sections) subset[s] = full.at(s);
  return hash_text(subset.dump());
}

data::ToyWorldSpec toy_spec(const RunConfig& c) {
  return data::default_toy_spec(c.data.num_classes, c.data.height, c.data.width, c.data.world_seed);
}

seggen::SegNetOptions seg_net_options(const RunConfig& c) {
  const int shift = c.seg.num_stages - 1;
  if (c.seg.num_stages < 1 || (c.data.height >> shift) << shift != c.data.height ||
      (c.data.width >> shift) << shift != c.data.width || (c.data.height >> shift) < 1 ||
      (c.data.width >> shift) < 1) {
    fail(ErrorKind::Config, "map size must be divisible by 2^(num_stages - 1)");
  }
  seggen::SegNetOptions o;
  o.num_classes = c.data.num_classes;
  o.latent_dim = c.seg.latent_dim;
  o.base = {c.data.height >> shift, c.data.width >> shift};
  o.num_stages = c.seg.num_stages;
  o.channels = c.seg.channels;
  return o;
}

seggen::ProgressiveSchedule seg_schedule(const RunConfig& c) {
  const auto o = seg_net_options(c);
  return seggen::ProgressiveSchedule::growing(o.base, o.num_stages, c.seg.steps_per_stage,
                                              c.seg.fadein_fraction);
}

seggen::GumbelConfig gumbel_config(const RunConfig& c) {
  seggen::GumbelConfig g{c.seg.tau, c.seg.gumbel_eps};
  g.validate();
  return g;
}

seggen::SegTrainConfig seg_train_config(const RunConfig& c) {
  seggen::SegTrainConfig t;
  t.batch_size = c.seg.batch_size;
  t.lr = c.seg.lr;
  t.beta1 = c.seg.beta1;
  t.beta2 = c.seg.beta2;
  t.gp_weight = c.seg.gp_weight;
  t.critic_steps = c.seg.critic_steps;
  t.gumbel = gumbel_config(c);
  t.seed = c.seg.seed;
  t.log_interval = c.seg.log_interval;
  t.eval_samples = c.seg.eval_samples;
  return t;
}

imgsynth::SpadeGeneratorOptions spade_options(const RunConfig& c) {
  imgsynth::SpadeGeneratorOptions o;
  o.num_classes = c.data.num_classes;
  o.height = c.data.height;
  o.width = c.data.width;
  o.num_upsamples = c.spade.num_upsamples;
  o.channels = c.spade.channels;
  o.spade_hidden = c.spade.spade_hidden;
  o.use_latent = c.spade.use_latent;
  o.latent_dim = c.spade.latent_dim;
  return o;
}

imgsynth::PatchDiscriminatorOptions disc_options(const RunConfig& c) {
  imgsynth::PatchDiscriminatorOptions o;
  o.channels = c.spade.disc_channels;
  o.num_downsamples = c.spade.disc_downsamples;
  o.num_scorers = c.spade.num_scorers;
  return o;
}

imgsynth::SpadeTrainConfig spade_train_config(const RunConfig& c) {
  imgsynth::SpadeTrainConfig t;
  t.steps = c.spade.steps;
  t.batch_size = c.spade.batch_size;
  t.lr_g = c.spade.lr_g;
  t.lr_d = c.spade.lr_d;
  t.beta1 = c.spade.beta1;
  t.beta2 = c.spade.beta2;
  t.lambda_perceptual = c.spade.lambda_perceptual;
  t.lambda_feat = c.spade.lambda_feat;
  t.perceptual_weights = c.spade.perceptual_weights;
  t.seed = c.spade.seed;
  t.log_interval = c.spade.log_interval;
  return t;
}

end2end::FineTuneConfig finetune_config(const RunConfig& c) {
  end2end::FineTuneConfig f;
  f.lambda_sb = c.finetune.lambda_sb;
  f.lr_sb = c.finetune.lr_sb;
  f.lr_d_sb = c.finetune.lr_d_sb;
  f.lr_spd_g = c.finetune.lr_spd_g;
  f.lr_spd_d = c.finetune.lr_spd_d;
  f.lr_d2 = c.finetune.lr_d2;
  f.sb_beta1 = c.seg.beta1;
  f.sb_beta2 = c.seg.beta2;
  f.spd_beta1 = c.spade.beta1;
  f.spd_beta2 = c.spade.beta2;
  f.ft_sb = c.finetune.ft_sb;
  f.ft_spade = c.finetune.ft_spade;
  f.baseline = !f.ft_sb && !f.ft_spade;
  f.steps = c.finetune.steps;
  f.batch_size = c.finetune.batch_size;
  f.gp_weight = c.seg.gp_weight;
  f.lambda_perceptual = c.spade.lambda_perceptual;
  f.lambda_feat = c.spade.lambda_feat;
  f.perceptual_weights = c.spade.perceptual_weights;
  f.gumbel = gumbel_config(c);
  f.seed = c.finetune.seed;
  f.log_interval = c.finetune.log_interval;
  return f;
}

end2end::AblationEvalConfig ablation_eval_config(const RunConfig& c) {
  return {c.eval.n_per_trial, c.eval.trials, c.eval.seed, c.eval.layout_samples};
}

end2end::SbganModels build_models(const RunConfig& c) {
  end2end::SbganModels m;
  const auto seg = seg_net_options(c);
  m.g_sb = seggen::SegGenerator(seg);
  m.d_sb = seggen::SegCritic(seg);
  m.g_spd = imgsynth::SpadeGenerator(spade_options(c));
  m.d_spd = imgsynth::CondDiscriminator(c.data.num_classes, disc_options(c));
  m.d2 = end2end::UncondDiscriminator(disc_options(c));
  m.fx = imgsynth::SurrogateFeatureExtractor(c.spade.feature_seed, c.spade.feature_channels);
  init_parameters(*m.g_sb, mix_seed(c.seg.seed, 0x6e));
  init_parameters(*m.d_sb, mix_seed(c.seg.seed, 0xd1));
  init_parameters(*m.g_spd, mix_seed(c.spade.seed, 0x6e));
  init_parameters(*m.d_spd, mix_seed(c.spade.seed, 0xd1));
  init_parameters(*m.d2, mix_seed(c.finetune.seed, 0xd2));
  return m;
}

}  // namespace sbgan::config
