#include "sbgan/seggen.hpp"

#include <cmath>

#include "sbgan/data.hpp"
#include "sbgan/errors.hpp"
#include "sbgan/eval.hpp"
#include "sbgan/rng.hpp"

namespace sbgan::seggen {
namespace {

namespace F = torch::nn::functional;

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

torch::Tensor pixel_norm(const torch::Tensor& x) {
  return x * torch::rsqrt(x.pow(2).mean(1, /*keepdim=*/true) + 1e-8);
}

torch::Tensor upsample2(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kNearest));
}

torch::Tensor pool2(const torch::Tensor& x) { return F::avg_pool2d(x, F::AvgPool2dFuncOptions(2)); }

torch::nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).padding(k / 2));
}

struct StraightThroughFn : public torch::autograd::Function<StraightThroughFn> {
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx, torch::Tensor relaxed,
                               bool pass_gradient) {
    ctx->saved_data["pass"] = pass_gradient;
    // argmax returns the first maximal index, giving the smallest-class tie-break.
    auto idx = relaxed.argmax(-3, /*keepdim=*/true);
    return torch::zeros_like(relaxed).scatter_(-3, idx, 1.0);
  }

  static torch::autograd::variable_list backward(torch::autograd::AutogradContext* ctx,
                                                 torch::autograd::variable_list grads) {
    const bool pass = ctx->saved_data["pass"].toBool();
    auto g = pass ? grads[0] : torch::zeros_like(grads[0]);
    return {g, torch::Tensor()};
  }
};

}  // namespace

void GumbelConfig::validate() const {
  if (!(tau > 0.0)) fail(ErrorKind::Config, "Gumbel temperature must be positive");
  if (!(eps > 0.0)) fail(ErrorKind::Config, "Gumbel eps must be positive");
}

torch::Tensor gumbel_transform(const torch::Tensor& uniform, double eps) {
  return -torch::log(-torch::log(uniform + eps) + eps);
}

torch::Tensor sample_gumbel(at::IntArrayRef shape, std::uint64_t seed, double eps,
                            torch::Dtype dtype) {
  for (auto d : shape) {
    if (d <= 0) fail(ErrorKind::Argument, "sample_gumbel needs a positive shape");
  }
  auto gen = make_generator(seed);
  auto u = torch::rand(shape, gen, torch::TensorOptions().dtype(dtype));
  return gumbel_transform(u, eps);
}

torch::Tensor gumbel_softmax(const torch::Tensor& probs, const torch::Tensor& noise,
                             const GumbelConfig& cfg) {
  cfg.validate();
  if (probs.dim() < 3) fail(ErrorKind::Argument, "gumbel_softmax expects K x H x W or N x K x H x W");
  {
    torch::NoGradGuard no_grad;
    const double lo = probs.min().item<double>();
    const double dev = (probs.sum(-3) - 1.0).abs().max().item<double>();
    if (lo < 0.0 || !(dev <= 1e-5)) {
      fail(ErrorKind::Argument, "probability map is not on the simplex");
    }
  }
  // clamp keeps log finite (and its gradient defined) on exact zeros.
  auto log_p = torch::log(probs.clamp_min(cfg.eps));
  return torch::softmax((log_p + noise) / cfg.tau, -3);
}

torch::Tensor gumbel_softmax_from_logits(const torch::Tensor& logits, const torch::Tensor& noise,
                                         const GumbelConfig& cfg) {
  cfg.validate();
  return torch::softmax((torch::log_softmax(logits, -3) + noise) / cfg.tau, -3);
}

torch::Tensor straight_through_discretize(const torch::Tensor& relaxed, StraightThrough mode) {
  if (relaxed.dim() < 3) fail(ErrorKind::Argument, "straight_through_discretize expects a class axis at dim -3");
  return StraightThroughFn::apply(relaxed, mode == StraightThrough::Soft);
}

ProgressiveSchedule ProgressiveSchedule::growing(Resolution base, int num_stages,
                                                 std::int64_t steps_per_stage,
                                                 double fadein_fraction) {
  ProgressiveSchedule s;
  for (int i = 0; i < num_stages; ++i) {
    s.stage_resolutions.push_back({base.height << i, base.width << i});
  }
  s.steps_per_stage = steps_per_stage;
  s.fadein_fraction = fadein_fraction;
  s.validate();
  return s;
}

void ProgressiveSchedule::validate() const {
  if (stage_resolutions.empty()) fail(ErrorKind::Config, "schedule needs at least one stage");
  if (steps_per_stage < 0) fail(ErrorKind::Config, "steps_per_stage must be >= 0");
  if (!(fadein_fraction >= 0.0 && fadein_fraction <= 1.0)) {
    fail(ErrorKind::Config, "fadein_fraction must lie in [0, 1]");
  }
  for (std::size_t i = 1; i < stage_resolutions.size(); ++i) {
    const auto& prev = stage_resolutions[i - 1];
    const auto& cur = stage_resolutions[i];
    if (cur.height != 2 * prev.height || cur.width != 2 * prev.width) {
      fail(ErrorKind::Config, "each stage resolution must double the previous one per axis");
    }
  }
}

int ProgressiveSchedule::stage_at(std::int64_t step) const {
  if (steps_per_stage <= 0) return num_stages() - 1;
  const auto s = static_cast<int>(step / steps_per_stage);
  return std::min(s, num_stages() - 1);
}

double ProgressiveSchedule::alpha_at(std::int64_t step) const {
  const int s = stage_at(step);
  if (s == 0 || steps_per_stage <= 0) return 1.0;
  const double local = static_cast<double>(step - static_cast<std::int64_t>(s) * steps_per_stage);
  const double fade_steps = fadein_fraction * static_cast<double>(steps_per_stage);
  if (fade_steps <= 0.0) return 1.0;
  return std::min(1.0, local / fade_steps);
}

void Progress::set(int num_stages, int stage, double alpha) {
  if (stage < 0 || stage >= num_stages) {
    fail(ErrorKind::State, "stage " + std::to_string(stage) + " outside the network's " +
                               std::to_string(num_stages) + " stages");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::State, "fade-in alpha must lie in [0, 1]");
  if (stage == 0 && alpha != 1.0) fail(ErrorKind::State, "the base stage has no fade-in; alpha must be 1");
  stage_ = stage;
  alpha_ = alpha;
}

SegGeneratorImpl::SegGeneratorImpl(SegNetOptions options) : options_(options) {
  if (options_.num_classes < 2) fail(ErrorKind::Config, "generator needs K >= 2");
  if (options_.num_stages < 1) fail(ErrorKind::Config, "generator needs at least one stage");
  const auto c = options_.channels;
  input_ = register_module(
      "input", torch::nn::Linear(options_.latent_dim, c * options_.base.height * options_.base.width));
  base_conv_ = register_module("base_conv", conv(c, c, 3));
  for (int s = 1; s < options_.num_stages; ++s) {
    torch::nn::Sequential block(conv(c, c, 3), torch::nn::Functional(lrelu),
                                torch::nn::Functional(pixel_norm), conv(c, c, 3),
                                torch::nn::Functional(lrelu), torch::nn::Functional(pixel_norm));
    blocks_->push_back(block);
  }
  for (int s = 0; s < options_.num_stages; ++s) to_logits_->push_back(conv(c, options_.num_classes, 1));
  register_module("blocks", blocks_);
  register_module("to_logits", to_logits_);
}

std::pair<torch::Tensor, torch::Tensor> SegGeneratorImpl::features(const torch::Tensor& z,
                                                                  int stage) {
  if (z.dim() != 2 || z.size(1) != options_.latent_dim) {
    fail(ErrorKind::Argument, "latent batch must be N x " + std::to_string(options_.latent_dim));
  }
  auto h = pixel_norm(lrelu(input_(z)).view(
      {z.size(0), options_.channels, options_.base.height, options_.base.width}));
  h = pixel_norm(lrelu(base_conv_(h)));
  torch::Tensor prev;
  for (int s = 1; s <= stage; ++s) {
    prev = h;
    h = blocks_[s - 1]->as<torch::nn::Sequential>()->forward(upsample2(h));
  }
  return {h, prev};
}

torch::Tensor SegGeneratorImpl::stage_logits(const torch::Tensor& z, int stage) {
  auto [h, prev] = features(z, stage);
  return to_logits_[stage]->as<torch::nn::Conv2d>()->forward(h);
}

torch::Tensor SegGeneratorImpl::forward(const torch::Tensor& z) {
  const int stage = progress_.stage();
  const double alpha = progress_.alpha();
  auto [h, prev] = features(z, stage);
  auto out = to_logits_[stage]->as<torch::nn::Conv2d>()->forward(h);
  if (stage > 0 && alpha < 1.0) {
    auto low = upsample2(to_logits_[stage - 1]->as<torch::nn::Conv2d>()->forward(prev));
    out = alpha * out + (1.0 - alpha) * low;
  }
  return out;
}

SegCriticImpl::SegCriticImpl(SegNetOptions options) : options_(options) {
  if (options_.num_stages < 1) fail(ErrorKind::Config, "critic needs at least one stage");
  const auto c = options_.channels;
  for (int s = 0; s < options_.num_stages; ++s) from_onehot_->push_back(conv(options_.num_classes, c, 1));
  for (int s = 1; s < options_.num_stages; ++s) {
    blocks_->push_back(torch::nn::Sequential(conv(c, c, 3), torch::nn::Functional(lrelu), conv(c, c, 3),
                                             torch::nn::Functional(lrelu)));
  }
  register_module("from_onehot", from_onehot_);
  register_module("blocks", blocks_);
  final_conv_ = register_module("final_conv", conv(c, c, 3));
  head_ = register_module("head", torch::nn::Linear(c * options_.base.height * options_.base.width, 1));
}

torch::Tensor SegCriticImpl::forward(const torch::Tensor& x) {
  const int stage = progress_.stage();
  const double alpha = progress_.alpha();
  const auto res = options_.resolution_at(stage);
  if (x.dim() != 4 || x.size(1) != options_.num_classes || x.size(2) != res.height ||
      x.size(3) != res.width) {
    fail(ErrorKind::Argument, "critic input must be N x K x " + std::to_string(res.height) + " x " +
                                  std::to_string(res.width) + " at stage " + std::to_string(stage));
  }
  auto h = lrelu(from_onehot_[stage]->as<torch::nn::Conv2d>()->forward(x));
  if (stage > 0) {
    h = pool2(blocks_[stage - 1]->as<torch::nn::Sequential>()->forward(h));
    if (alpha < 1.0) {
      auto low = lrelu(from_onehot_[stage - 1]->as<torch::nn::Conv2d>()->forward(pool2(x)));
      h = alpha * h + (1.0 - alpha) * low;
    }
    for (int s = stage - 1; s >= 1; --s) {
      h = pool2(blocks_[s - 1]->as<torch::nn::Sequential>()->forward(h));
    }
  }
  h = lrelu(final_conv_(h));
  return head_(h.flatten(1)).squeeze(1);
}

SegSample generate_segmap(SegGenerator& gen, const torch::Tensor& z, const GumbelConfig& cfg,
                          std::uint64_t seed, StraightThrough mode) {
  auto logits = gen->forward(z);
  SegSample out;
  out.probs = torch::softmax(logits, -3);
  auto noise = sample_gumbel(logits.sizes(), seed, cfg.eps, logits.scalar_type());
  out.relaxed = gumbel_softmax_from_logits(logits, noise, cfg);
  out.hard = straight_through_discretize(out.relaxed, mode);
  out.labels = out.relaxed.detach().argmax(-3);
  return out;
}

WganGpLosses wgan_gp_losses(const ScoreFn& critic, const torch::Tensor& real,
                            const torch::Tensor& fake, double gp_weight, std::uint64_t seed) {
  if (real.sizes() != fake.sizes()) fail(ErrorKind::Argument, "real and fake batches differ in shape");
  if (gp_weight < 0.0) fail(ErrorKind::Argument, "gp_weight must be >= 0");
  const auto fake_scores = critic(fake);
  const auto real_scores = critic(real);

  auto gen = make_generator(seed);
  std::vector<std::int64_t> eps_shape(static_cast<std::size_t>(real.dim()), 1);
  eps_shape[0] = real.size(0);
  auto eps = torch::rand(eps_shape, gen, real.options().requires_grad(false));
  auto mixed = (eps * real.detach() + (1.0 - eps) * fake.detach()).requires_grad_(true);
  auto mixed_scores = critic(mixed);
  auto grads = torch::autograd::grad({mixed_scores.sum()}, {mixed}, {}, /*retain_graph=*/true,
                                     /*create_graph=*/true, /*allow_unused=*/true)[0];
  if (!grads.defined()) grads = torch::zeros_like(mixed);
  auto norms = grads.flatten(1).norm(2, 1);
  auto gp = (norms - 1.0).pow(2).mean();

  WganGpLosses out;
  out.gen_loss = -fake_scores.mean();
  out.critic_loss = fake_scores.mean() - real_scores.mean() + gp_weight * gp;
  out.gp_term = gp;
  return out;
}

SegTrainer::SegTrainer(SegGenerator gen, SegCritic critic, torch::Tensor real_labels,
                       ProgressiveSchedule schedule, SegTrainConfig cfg)
    : gen_(std::move(gen)),
      critic_(std::move(critic)),
      real_labels_(std::move(real_labels)),
      schedule_(std::move(schedule)),
      cfg_(cfg),
      gen_opt_(gen_->parameters(), torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2})),
      critic_opt_(critic_->parameters(),
                  torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2})),
      sampler_(real_labels_.size(0), cfg.batch_size, mix_seed(cfg.seed, 0xda7a)) {
  schedule_.validate();
  cfg_.gumbel.validate();
  const auto& opts = gen_->options();
  if (schedule_.num_stages() != opts.num_stages) {
    fail(ErrorKind::State, "schedule stage count does not match the generator");
  }
  for (int s = 0; s < opts.num_stages; ++s) {
    if (!(schedule_.stage_resolutions[s] == opts.resolution_at(s))) {
      fail(ErrorKind::State, "schedule resolutions do not match the generator stages");
    }
  }
  const auto final_res = opts.resolution_at(opts.num_stages - 1);
  if (real_labels_.dim() != 3 || real_labels_.size(1) != final_res.height ||
      real_labels_.size(2) != final_res.width) {
    fail(ErrorKind::Argument, "real maps must match the final stage resolution");
  }
  restore_step(0);
}

void SegTrainer::restore_step(std::int64_t step) {
  step_ = step;
  const auto probe = std::min(step, std::max<std::int64_t>(0, total_steps() - 1));
  const int stage = schedule_.stage_at(probe);
  const double alpha = schedule_.alpha_at(probe);
  gen_->set_progress(stage, alpha);
  critic_->set_progress(stage, alpha);
}

torch::Tensor SegTrainer::real_at_stage(const torch::Tensor& indices, int stage) const {
  const int factor = 1 << (schedule_.num_stages() - 1 - stage);
  auto labels = data::downsample_labels(real_labels_.index_select(0, indices), factor);
  return data::one_hot(labels, gen_->options().num_classes);
}

double SegTrainer::histogram_kl(std::int64_t samples, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  const int k = gen_->options().num_classes;
  const int factor = 1 << (schedule_.num_stages() - 1 - gen_->stage());
  const auto real = data::class_histogram(data::downsample_labels(real_labels_, factor), k);
  auto z = sample_latent(samples, gen_->options().latent_dim, mix_seed(seed, 1));
  auto fake = generate_segmap(gen_, z, cfg_.gumbel, mix_seed(seed, 2));
  return eval::kl_divergence(data::class_histogram(fake.labels, k), real);
}

SegMetricsRow SegTrainer::train_step() {
  const auto t = step_;
  const int stage = schedule_.stage_at(t);
  const double alpha = schedule_.alpha_at(t);
  gen_->set_progress(stage, alpha);
  critic_->set_progress(stage, alpha);
  const auto seed = static_cast<std::uint64_t>(t);
  auto real = real_at_stage(sampler_.indices(t), stage);
  const auto n = real.size(0);
  const auto latent = gen_->options().latent_dim;

  WganGpLosses losses;
  for (int c = 0; c < cfg_.critic_steps; ++c) {
    const auto cs = static_cast<std::uint64_t>(c);
    torch::Tensor fake;
    {
      torch::NoGradGuard no_grad;
      auto z = sample_latent(n, latent, mix_seed(cfg_.seed, seed, 10 + 3 * cs));
      fake = generate_segmap(gen_, z, cfg_.gumbel, mix_seed(cfg_.seed, seed, 11 + 3 * cs)).hard;
    }
    losses = wgan_gp_losses([this](const torch::Tensor& x) { return critic_->forward(x); }, real,
                            fake, cfg_.gp_weight, mix_seed(cfg_.seed, seed, 12 + 3 * cs));
    critic_opt_.zero_grad();
    losses.critic_loss.backward();
    critic_opt_.step();
  }

  auto z = sample_latent(n, latent, mix_seed(cfg_.seed, seed, 1));
  auto fake = generate_segmap(gen_, z, cfg_.gumbel, mix_seed(cfg_.seed, seed, 2));
  auto gen_loss = -critic_->forward(fake.hard).mean();
  gen_opt_.zero_grad();
  gen_loss.backward();
  gen_opt_.step();
  critic_opt_.zero_grad();

  ++step_;
  SegMetricsRow row;
  row.step = step_;
  row.stage = stage;
  row.alpha = alpha;
  row.critic_loss = losses.critic_loss.item<double>();
  row.gen_loss = gen_loss.item<double>();
  row.gp = losses.gp_term.item<double>();
  return row;
}

void SegTrainer::run(std::int64_t until, const std::function<void(const SegMetricsRow&)>& on_log) {
  until = std::min(until, total_steps());
  while (step_ < until) {
    auto row = train_step();
    if (row.step % cfg_.log_interval == 0 || row.step == total_steps()) {
      row.hist_kl = histogram_kl(cfg_.eval_samples, mix_seed(cfg_.seed, 0xe7a1));
      for (double v : {row.critic_loss, row.gen_loss, row.gp, row.hist_kl}) {
        if (!std::isfinite(v)) {
          fail(ErrorKind::Numeric, "non-finite loss at segmentation step " + std::to_string(row.step));
        }
      }
      if (on_log) on_log(row);
    }
  }
}

SegTrainResult train_seg(SegGenerator& gen, SegCritic& critic, const torch::Tensor& real_labels,
                         const ProgressiveSchedule& schedule, const SegTrainConfig& cfg) {
  SegTrainer trainer(gen, critic, real_labels, schedule, cfg);
  SegTrainResult result;
  trainer.run(trainer.total_steps(), [&](const SegMetricsRow& row) { result.log.push_back(row); });
  return result;
}

}  // namespace sbgan::seggen
