#include "sbgan/end2end.hpp"

#include <cmath>
#include <optional>

#include "sbgan/errors.hpp"
#include "sbgan/metrics.hpp"
#include "sbgan/rng.hpp"

namespace sbgan::end2end {
namespace {

torch::optim::AdamOptions adam(double lr, double b1, double b2) {
  return torch::optim::AdamOptions(lr).betas({b1, b2});
}

void require_finite(const torch::Tensor& t, const char* name) {
  if (!t.defined() || t.numel() != 1) fail(ErrorKind::Argument, std::string(name) + " must be a scalar");
  if (!std::isfinite(t.item<double>())) fail(ErrorKind::Numeric, std::string(name) + " is not finite");
}

}  // namespace

UncondDiscriminatorImpl::UncondDiscriminatorImpl(imgsynth::PatchDiscriminatorOptions options) {
  options.in_channels = 3;
  net_ = register_module("net", imgsynth::PatchDiscriminator(options));
}

imgsynth::DiscriminatorOutput UncondDiscriminatorImpl::forward(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3) {
    fail(ErrorKind::Argument, "D2 accepts only N x 3 x H x W images");
  }
  return net_(image);
}

SbganModels SbganModels::clone() const {
  SbganModels out;
  out.g_sb = seggen::SegGenerator(g_sb->options());
  out.d_sb = seggen::SegCritic(d_sb->options());
  out.g_spd = imgsynth::SpadeGenerator(g_spd->options());
  out.d_spd = imgsynth::CondDiscriminator(d_spd->num_classes(), d_spd->options());
  out.d2 = UncondDiscriminator(d2->options());
  out.fx = imgsynth::SurrogateFeatureExtractor(fx->seed(), fx->channels());
  copy_state(*g_sb, *out.g_sb);
  copy_state(*d_sb, *out.d_sb);
  copy_state(*g_spd, *out.g_spd);
  copy_state(*d_spd, *out.d_spd);
  copy_state(*d2, *out.d2);
  out.g_sb->set_progress(g_sb->stage(), g_sb->alpha());
  out.d_sb->set_progress(d_sb->stage(), d_sb->alpha());
  return out;
}

ComposedSample compose_generate(seggen::SegGenerator& g_sb, imgsynth::SpadeGenerator& g_spd,
                                const torch::Tensor& z, const seggen::GumbelConfig& cfg,
                                std::uint64_t seed, seggen::StraightThrough mode) {
  const auto& so = g_sb->options();
  const auto& io = g_spd->options();
  if (so.num_classes != io.num_classes) {
    fail(ErrorKind::Config, "segmentation generator has K = " + std::to_string(so.num_classes) +
                                " but the image generator expects K = " + std::to_string(io.num_classes));
  }
  const auto res = so.resolution_at(g_sb->stage());
  if (res.height != io.height || res.width != io.width) {
    fail(ErrorKind::Config, "segmentation maps do not match the image generator resolution");
  }
  ComposedSample out;
  out.seg = seggen::generate_segmap(g_sb, z, cfg, seed, mode);
  torch::Tensor latent;
  if (io.use_latent) latent = sample_latent(z.size(0), io.latent_dim, mix_seed(seed, 0x1a7e));
  out.image = g_spd(out.seg.hard, latent);
  return out;
}

D2Losses d2_from_scores(const std::vector<torch::Tensor>& real_scores,
                        const std::vector<torch::Tensor>& fake_scores) {
  auto h = imgsynth::hinge_from_scores(real_scores, fake_scores);
  return {h.d_loss, h.g_adv};
}

D2Losses d2_losses(UncondDiscriminator& d2, const torch::Tensor& x_real, const torch::Tensor& x_fake) {
  if (x_real.sizes() != x_fake.sizes()) fail(ErrorKind::Argument, "real and fake images differ in shape");
  return d2_from_scores(d2(x_real).scores, d2(x_fake).scores);
}

torch::Tensor joint_generator_loss(const torch::Tensor& g_uncond, const torch::Tensor& l_g_spd,
                                   const torch::Tensor& l_g_sb, double lambda_sb) {
  require_finite(g_uncond, "g_uncond");
  require_finite(l_g_spd, "l_g_spd");
  require_finite(l_g_sb, "l_g_sb");
  if (!std::isfinite(lambda_sb)) fail(ErrorKind::Numeric, "lambda_sb is not finite");
  return g_uncond + l_g_spd + lambda_sb * l_g_sb;
}

double joint_generator_loss(double g_uncond, double l_g_spd, double l_g_sb, double lambda_sb) {
  for (double v : {g_uncond, l_g_spd, l_g_sb, lambda_sb}) {
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, "joint generator loss input is not finite");
  }
  return g_uncond + l_g_spd + lambda_sb * l_g_sb;
}

void FineTuneConfig::validate() const {
  if (!(lambda_sb >= 0.0)) fail(ErrorKind::Config, "lambda_sb must be >= 0");
  if (!ft_sb && !ft_spade && !baseline) {
    fail(ErrorKind::Config, "enable ft_sb or ft_spade, or mark the run as the no-FT baseline");
  }
  if (steps < 0) fail(ErrorKind::Config, "steps must be >= 0");
  if (batch_size < 1) fail(ErrorKind::Config, "batch size must be >= 1");
  gumbel.validate();
}

FineTuner::FineTuner(SbganModels models, data::DatasetTensors data, FineTuneConfig cfg)
    : m_(std::move(models)),
      data_(std::move(data)),
      cfg_(std::move(cfg)),
      g_sb_opt_(m_.g_sb->parameters(), adam(cfg_.lr_sb, cfg_.sb_beta1, cfg_.sb_beta2)),
      d_sb_opt_(m_.d_sb->parameters(), adam(cfg_.lr_d_sb, cfg_.sb_beta1, cfg_.sb_beta2)),
      g_spd_opt_(m_.g_spd->parameters(), adam(cfg_.lr_spd_g, cfg_.spd_beta1, cfg_.spd_beta2)),
      d_spd_opt_(m_.d_spd->parameters(), adam(cfg_.lr_spd_d, cfg_.spd_beta1, cfg_.spd_beta2)),
      d2_opt_(m_.d2->parameters(), adam(cfg_.lr_d2, cfg_.spd_beta1, cfg_.spd_beta2)),
      sampler_(data_.labels.size(0), cfg_.batch_size, mix_seed(cfg_.seed, 0xda7a)) {
  cfg_.validate();
  spade_cfg_.lambda_perceptual = cfg_.lambda_perceptual;
  spade_cfg_.lambda_feat = cfg_.lambda_feat;
  spade_cfg_.perceptual_weights = cfg_.perceptual_weights;
  const int last = m_.g_sb->options().num_stages - 1;
  m_.g_sb->set_progress(last, 1.0);
  m_.d_sb->set_progress(last, 1.0);
  const auto res = m_.g_sb->options().resolution_at(last);
  if (data_.labels.size(1) != res.height || data_.labels.size(2) != res.width) {
    fail(ErrorKind::Argument, "dataset resolution does not match the final generator stage");
  }
}

FineTuneMetricsRow FineTuner::train_step() {
  const auto t = static_cast<std::uint64_t>(step_);
  const int k = m_.g_sb->options().num_classes;
  auto idx = sampler_.indices(step_);
  auto real_images = data_.images.index_select(0, idx);
  auto real_onehot = data::one_hot(data_.labels.index_select(0, idx), k);
  const auto n = real_images.size(0);

  auto z = sample_latent(n, m_.g_sb->options().latent_dim, mix_seed(cfg_.seed, t, 1));
  auto composed = compose_generate(m_.g_sb, m_.g_spd, z, cfg_.gumbel, mix_seed(cfg_.seed, t, 2),
                                   cfg_.straight_through);

  FineTuneMetricsRow row;

  auto d2 = d2_losses(m_.d2, real_images, composed.image.detach());
  d2_opt_.zero_grad();
  d2.d2_loss.backward();
  d2_opt_.step();
  row.d2_loss = d2.d2_loss.item<double>();

  torch::Tensor pair_fake;
  {
    torch::NoGradGuard no_grad;
    pair_fake = m_.g_spd(real_onehot);
  }
  auto d_spd = imgsynth::hinge_losses(m_.d_spd, real_onehot, real_images, pair_fake);
  d_spd_opt_.zero_grad();
  d_spd.d_loss.backward();
  d_spd_opt_.step();
  row.d_spd_loss = d_spd.d_loss.item<double>();

  auto d_sb = seggen::wgan_gp_losses([this](const torch::Tensor& x) { return m_.d_sb->forward(x); },
                                     real_onehot, composed.seg.hard.detach(), cfg_.gp_weight,
                                     mix_seed(cfg_.seed, t, 3));
  d_sb_opt_.zero_grad();
  d_sb.critic_loss.backward();
  d_sb_opt_.step();
  row.d_sb_loss = d_sb.critic_loss.item<double>();
  row.gp = d_sb.gp_term.item<double>();

  const bool any_trainable = cfg_.ft_sb || cfg_.ft_spade;
  torch::Tensor g_uncond, l_g_spd, l_g_sb, total;
  {
    std::optional<torch::NoGradGuard> frozen;
    if (!any_trainable) frozen.emplace();
    g_uncond = imgsynth::hinge_generator_loss(m_.d2(composed.image).scores);
    l_g_spd = imgsynth::spade_generator_loss(m_.g_spd, m_.d_spd, m_.fx, real_onehot, real_images,
                                             spade_cfg_)
                  .total;
    l_g_sb = -m_.d_sb(composed.seg.hard).mean();
    total = joint_generator_loss(g_uncond, l_g_spd, l_g_sb, cfg_.lambda_sb);
  }
  if (any_trainable) {
    g_sb_opt_.zero_grad();
    g_spd_opt_.zero_grad();
    total.backward();
    if (cfg_.ft_sb) g_sb_opt_.step();
    if (cfg_.ft_spade) g_spd_opt_.step();
  }
  for (auto* opt : {&g_sb_opt_, &g_spd_opt_, &d_sb_opt_, &d_spd_opt_, &d2_opt_}) opt->zero_grad();

  ++step_;
  row.step = step_;
  row.g_uncond = g_uncond.item<double>();
  row.l_g_spd = l_g_spd.item<double>();
  row.l_g_sb = l_g_sb.item<double>();
  row.l_g_total = total.item<double>();
  return row;
}

void FineTuner::run(std::int64_t until, const std::function<void(const FineTuneMetricsRow&)>& on_log) {
  until = std::min(until, cfg_.steps);
  while (step_ < until) {
    auto row = train_step();
    if (row.step % cfg_.log_interval == 0 || row.step == cfg_.steps) {
      for (double v : {row.d2_loss, row.d_spd_loss, row.d_sb_loss, row.l_g_total}) {
        if (!std::isfinite(v)) {
          fail(ErrorKind::Numeric, "non-finite loss at fine-tuning step " + std::to_string(row.step));
        }
      }
      if (on_log) on_log(row);
    }
  }
}

FineTuneResult finetune(SbganModels& models, const data::DatasetTensors& data, const FineTuneConfig& cfg) {
  FineTuner tuner(models, data, cfg);
  FineTuneResult result;
  tuner.run(cfg.steps, [&](const FineTuneMetricsRow& row) { result.log.push_back(row); });
  return result;
}

eval::ImageSampler composed_sampler(SbganModels& models, const seggen::GumbelConfig& cfg) {
  return [&models, cfg](std::int64_t n, std::uint64_t seed) {
    torch::NoGradGuard no_grad;
    constexpr std::int64_t kChunk = 128;
    std::vector<torch::Tensor> parts;
    for (std::int64_t i = 0; i < n; i += kChunk) {
      const auto m = std::min(kChunk, n - i);
      const auto chunk_seed = mix_seed(seed, static_cast<std::uint64_t>(i));
      auto z = sample_latent(m, models.g_sb->options().latent_dim, mix_seed(chunk_seed, 1));
      parts.push_back(compose_generate(models.g_sb, models.g_spd, z, cfg, mix_seed(chunk_seed, 2)).image);
    }
    return torch::cat(parts);
  };
}

torch::Tensor sample_labels(seggen::SegGenerator& g_sb, std::int64_t n, std::uint64_t seed,
                            const seggen::GumbelConfig& cfg) {
  torch::NoGradGuard no_grad;
  auto z = sample_latent(n, g_sb->options().latent_dim, mix_seed(seed, 1));
  return seggen::generate_segmap(g_sb, z, cfg, mix_seed(seed, 2)).labels;
}

const std::array<AblationSetting, 4>& ablation_settings() {
  static const std::array<AblationSetting, 4> settings = {{
      {"No FT", false, false},
      {"FT SB", true, false},
      {"FT SPADE", false, true},
      {"FT Both", true, true},
  }};
  return settings;
}

std::vector<AblationRow> run_ablation(const SbganModels& pretrained, const data::DatasetTensors& train,
                                      const data::Dataset& val, const FineTuneConfig& cfg,
                                      const eval::EmbeddingModel& embedder,
                                      const AblationEvalConfig& eval_cfg) {
  const auto val_tensors = data::to_tensors(val);
  const auto real_maps = val.segmaps();
  std::vector<AblationRow> rows;
  for (const auto& setting : ablation_settings()) {
    auto models = pretrained.clone();
    const auto sb_before = flat_parameters(*models.g_sb);
    const auto spd_before = flat_parameters(*models.g_spd);

    auto run_cfg = cfg;
    run_cfg.ft_sb = setting.ft_sb;
    run_cfg.ft_spade = setting.ft_spade;
    run_cfg.baseline = !setting.ft_sb && !setting.ft_spade;
    finetune(models, train, run_cfg);

    AblationRow row;
    row.setting = setting.name;
    row.steps = run_cfg.steps;
    row.seed = run_cfg.seed;
    row.freeze_verified = true;
    if (!setting.ft_sb) row.freeze_verified &= torch::equal(sb_before, flat_parameters(*models.g_sb));
    if (!setting.ft_spade) row.freeze_verified &= torch::equal(spd_before, flat_parameters(*models.g_spd));

    const auto report = eval::evaluate_fid(composed_sampler(models, run_cfg.gumbel), val_tensors.images,
                                           embedder, eval_cfg.n_per_trial, eval_cfg.trials, eval_cfg.seed);
    row.fid = report.mean;
    const auto labels = sample_labels(models.g_sb, eval_cfg.layout_samples, eval_cfg.seed, run_cfg.gumbel);
    row.hist_kl = eval::kl_divergence(data::class_histogram(labels, val.num_classes),
                                      data::class_histogram(real_maps));
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows,
                        const std::string& config_hash) {
  CsvLog csv(path, {"setting", "fid", "hist_kl", "steps", "seed"}, config_hash);
  for (const auto& r : rows) {
    csv.write_row({r.setting, format_number(r.fid), format_number(r.hist_kl), std::to_string(r.steps),
                   std::to_string(r.seed)});
  }
}

}  // namespace sbgan::end2end
