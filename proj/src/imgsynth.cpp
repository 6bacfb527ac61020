#include "sbgan/imgsynth.hpp"

#include <cmath>

#include "sbgan/errors.hpp"
#include "sbgan/rng.hpp"

namespace sbgan::imgsynth {
namespace {

namespace F = torch::nn::functional;

torch::Tensor lrelu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
}

torch::Tensor upsample2(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kNearest));
}

torch::nn::Conv2d conv3(std::int64_t in, std::int64_t out, bool bias = true) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1).bias(bias));
}

void check_image_batch(const torch::Tensor& x, const char* what) {
  if (x.dim() != 4 || x.size(1) != 3) {
    fail(ErrorKind::Argument, std::string(what) + " must be N x 3 x H x W");
  }
}

}  // namespace

torch::Tensor instance_normalize(const torch::Tensor& act, double var_floor) {
  auto mean = act.mean({-2, -1}, /*keepdim=*/true);
  auto var = (act - mean).pow(2).mean({-2, -1}, /*keepdim=*/true);
  return (act - mean) * torch::rsqrt(var.clamp_min(var_floor));
}

torch::Tensor resize_onehot(const torch::Tensor& onehot, std::int64_t height, std::int64_t width) {
  if (onehot.size(-2) == height && onehot.size(-1) == width) return onehot;
  return F::interpolate(onehot, F::InterpolateFuncOptions()
                                    .size(std::vector<std::int64_t>{height, width})
                                    .mode(torch::kNearest));
}

SpadeNormImpl::SpadeNormImpl(std::int64_t channels, int num_classes, std::int64_t hidden)
    : channels_(channels) {
  shared_ = register_module("shared", conv3(num_classes, hidden));
  gamma_ = register_module("gamma", conv3(hidden, channels));
  beta_ = register_module("beta", conv3(hidden, channels));
}

std::pair<torch::Tensor, torch::Tensor> SpadeNormImpl::modulation(const torch::Tensor& onehot) {
  auto h = torch::relu(shared_(onehot));
  return {1.0 + gamma_(h), beta_(h)};
}

torch::Tensor SpadeNormImpl::forward(const torch::Tensor& act, const torch::Tensor& onehot) {
  auto [gamma, beta] = modulation(resize_onehot(onehot, act.size(2), act.size(3)));
  return gamma * instance_normalize(act) + beta;
}

torch::Tensor spade_normalize(SpadeNorm& norm, const torch::Tensor& act, const torch::Tensor& onehot) {
  if (act.dim() != 4 || onehot.dim() != 4) fail(ErrorKind::Argument, "spade_normalize expects 4-D tensors");
  if (act.size(1) != norm->channels()) {
    fail(ErrorKind::State, "modulation heads produce " + std::to_string(norm->channels()) +
                               " channels but the activation has " + std::to_string(act.size(1)));
  }
  if (act.size(0) != onehot.size(0)) fail(ErrorKind::Argument, "batch sizes differ");
  return norm->forward(act, onehot);
}

torch::Tensor spade_normalize(SpadeNorm& norm, const torch::Tensor& act, const data::SegMap& segmap) {
  auto onehot = data::one_hot(segmap).unsqueeze(0).to(act.scalar_type());
  return spade_normalize(norm, act.unsqueeze(0), onehot).squeeze(0);
}

SpadeResBlockImpl::SpadeResBlockImpl(std::int64_t in_channels, std::int64_t out_channels,
                                     int num_classes, std::int64_t hidden)
    : learned_skip_(in_channels != out_channels) {
  const auto mid = std::min(in_channels, out_channels);
  norm0_ = register_module("norm0", SpadeNorm(in_channels, num_classes, hidden));
  conv0_ = register_module("conv0", conv3(in_channels, mid));
  norm1_ = register_module("norm1", SpadeNorm(mid, num_classes, hidden));
  conv1_ = register_module("conv1", conv3(mid, out_channels));
  if (learned_skip_) {
    norm_skip_ = register_module("norm_skip", SpadeNorm(in_channels, num_classes, hidden));
    conv_skip_ = register_module(
        "conv_skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1).bias(false)));
  }
}

torch::Tensor SpadeResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& onehot) {
  auto dx = conv0_(lrelu(norm0_(x, onehot)));
  dx = conv1_(lrelu(norm1_(dx, onehot)));
  auto skip = learned_skip_ ? conv_skip_(norm_skip_(x, onehot)) : x;
  return skip + dx;
}

SpadeGeneratorImpl::SpadeGeneratorImpl(SpadeGeneratorOptions options) : options_(options) {
  const auto scale = std::int64_t{1} << options_.num_upsamples;
  if (options_.num_upsamples < 0 || options_.height % scale != 0 || options_.width % scale != 0) {
    fail(ErrorKind::Config, "image size must be divisible by 2^num_upsamples");
  }
  base_height_ = options_.height / scale;
  base_width_ = options_.width / scale;
  const auto c = options_.channels;
  if (options_.use_latent) {
    init_fc_ = register_module("init_fc",
                               torch::nn::Linear(options_.latent_dim, c * base_height_ * base_width_));
  } else {
    init_conv_ = register_module("init_conv", conv3(options_.num_classes, c));
  }
  for (int i = 0; i < options_.num_upsamples; ++i) {
    blocks_->push_back(SpadeResBlock(c, c, options_.num_classes, options_.spade_hidden));
  }
  register_module("blocks", blocks_);
  final_block_ = register_module(
      "final_block", SpadeResBlock(c, std::max<std::int64_t>(1, c / 2), options_.num_classes,
                                   options_.spade_hidden));
  to_rgb_ = register_module("to_rgb", conv3(std::max<std::int64_t>(1, c / 2), 3));
}

torch::Tensor SpadeGeneratorImpl::forward(const torch::Tensor& onehot, const torch::Tensor& z) {
  if (onehot.dim() != 4 || onehot.size(1) != options_.num_classes) {
    fail(ErrorKind::Argument, "SPADE generator expects N x " + std::to_string(options_.num_classes) +
                                  " x H x W one-hot input");
  }
  if (onehot.size(2) != options_.height || onehot.size(3) != options_.width) {
    fail(ErrorKind::Argument, "segmap size does not match the generator resolution");
  }
  torch::Tensor x;
  if (options_.use_latent) {
    if (!z.defined()) fail(ErrorKind::Argument, "this generator requires a latent input");
    x = init_fc_(z).view({z.size(0), options_.channels, base_height_, base_width_});
  } else {
    if (z.defined()) fail(ErrorKind::Argument, "this generator has no latent input");
    x = init_conv_(resize_onehot(onehot, base_height_, base_width_));
  }
  for (const auto& block : *blocks_) {
    x = upsample2(block->as<SpadeResBlock>()->forward(x, onehot));
  }
  x = final_block_(x, onehot);
  return torch::sigmoid(to_rgb_(lrelu(x)));
}

torch::Tensor synthesize(SpadeGenerator& gen, const torch::Tensor& labels,
                         const std::optional<torch::Tensor>& z) {
  if (labels.dim() != 3) fail(ErrorKind::Argument, "synthesize expects N x H x W labels");
  const int k = gen->options().num_classes;
  if (labels.numel() > 0 && labels.max().item<std::int64_t>() >= k) {
    fail(ErrorKind::Argument, "labels exceed the generator's class count");
  }
  auto onehot = data::one_hot(labels, k).to(gen->parameters().front().scalar_type());
  return gen->forward(onehot, z.value_or(torch::Tensor()));
}

torch::Tensor synthesize(SpadeGenerator& gen, const data::SegMap& segmap,
                         const std::optional<torch::Tensor>& z) {
  if (segmap.num_classes != gen->options().num_classes) {
    fail(ErrorKind::Argument, "segmap has K = " + std::to_string(segmap.num_classes) +
                                  " but the generator expects K = " +
                                  std::to_string(gen->options().num_classes));
  }
  return synthesize(gen, segmap.to_tensor().unsqueeze(0), z).squeeze(0);
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(PatchDiscriminatorOptions options)
    : options_(options) {
  if (options_.num_scorers < 1 || options_.num_downsamples < 1) {
    fail(ErrorKind::Config, "discriminator needs at least one scorer and one downsampling layer");
  }
  for (int s = 0; s < options_.num_scorers; ++s) {
    std::vector<torch::nn::Conv2d> layers;
    auto in = options_.in_channels;
    auto out = options_.channels;
    for (int l = 0; l < options_.num_downsamples; ++l) {
      layers.emplace_back(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1));
      in = out;
      out = std::min<std::int64_t>(out * 2, options_.channels * 8);
    }
    layers.emplace_back(torch::nn::Conv2dOptions(in, in, 3).padding(1));
    layers.emplace_back(torch::nn::Conv2dOptions(in, 1, 3).padding(1));
    for (std::size_t l = 0; l < layers.size(); ++l) {
      register_module("scorer" + std::to_string(s) + "_conv" + std::to_string(l), layers[l]);
    }
    scorers_.push_back(std::move(layers));
  }
}

DiscriminatorOutput PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != options_.in_channels) {
    fail(ErrorKind::Argument, "discriminator expects " + std::to_string(options_.in_channels) +
                                  " input channels");
  }
  DiscriminatorOutput out;
  auto input = x;
  for (std::size_t s = 0; s < scorers_.size(); ++s) {
    if (s > 0) {
      input = F::avg_pool2d(input, F::AvgPool2dFuncOptions(3).stride(2).padding(1).count_include_pad(false));
    }
    std::vector<torch::Tensor> feats;
    auto h = input;
    auto& layers = scorers_[s];
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
      h = lrelu(layers[l]->forward(h));
      feats.push_back(h);
    }
    out.scores.push_back(layers.back()->forward(h));
    out.features.push_back(std::move(feats));
  }
  return out;
}

CondDiscriminatorImpl::CondDiscriminatorImpl(int num_classes, PatchDiscriminatorOptions options)
    : num_classes_(num_classes) {
  options.in_channels = num_classes + 3;
  net_ = register_module("net", PatchDiscriminator(options));
}

DiscriminatorOutput CondDiscriminatorImpl::forward(const torch::Tensor& onehot, const torch::Tensor& image) {
  check_image_batch(image, "conditional discriminator image");
  if (onehot.dim() != 4 || onehot.size(1) != num_classes_ || onehot.size(0) != image.size(0) ||
      onehot.size(2) != image.size(2) || onehot.size(3) != image.size(3)) {
    fail(ErrorKind::Argument, "segmap and image shapes are inconsistent");
  }
  return net_(torch::cat({onehot, image}, 1));
}

SurrogateFeatureExtractorImpl::SurrogateFeatureExtractorImpl(std::uint64_t seed,
                                                             std::vector<std::int64_t> channels)
    : seed_(seed), channels_(channels) {
  if (channels.empty()) fail(ErrorKind::Config, "feature pyramid needs at least one level");
  std::int64_t in = 3;
  for (std::size_t l = 0; l < channels.size(); ++l) {
    convs_.push_back(register_module("level" + std::to_string(l), conv3(in, channels[l])));
    in = channels[l];
  }
  init_parameters(*this, seed_);
  {
    // Small random biases break the symmetry of ReLU on constant regions.
    torch::NoGradGuard no_grad;
    auto gen = make_generator(mix_seed(seed_, 0xb1a5));
    for (auto& c : convs_) c->bias.uniform_(-0.1, 0.1, gen);
  }
  for (auto& p : parameters()) p.set_requires_grad(false);
}

std::vector<torch::Tensor> SurrogateFeatureExtractorImpl::forward(const torch::Tensor& images) {
  check_image_batch(images, "feature extractor input");
  std::vector<torch::Tensor> feats;
  auto h = images * 2.0 - 1.0;
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    if (l > 0) h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2));
    h = torch::relu(convs_[l]->forward(h));
    feats.push_back(h);
  }
  return feats;
}

torch::Tensor SurrogateFeatureExtractorImpl::pooled(const torch::Tensor& images) {
  std::vector<torch::Tensor> parts;
  for (const auto& f : forward(images)) parts.push_back(f.mean({2, 3}));
  return torch::cat(parts, 1);
}

HingeLosses hinge_from_scores(const std::vector<torch::Tensor>& real_scores,
                              const std::vector<torch::Tensor>& fake_scores) {
  if (real_scores.size() != fake_scores.size() || real_scores.empty()) {
    fail(ErrorKind::Argument, "score lists must be non-empty and aligned");
  }
  torch::Tensor d_loss, g_adv;
  for (std::size_t i = 0; i < real_scores.size(); ++i) {
    auto d = torch::relu(1.0 - real_scores[i]).mean() + torch::relu(1.0 + fake_scores[i]).mean();
    auto g = -fake_scores[i].mean();
    d_loss = d_loss.defined() ? d_loss + d : d;
    g_adv = g_adv.defined() ? g_adv + g : g;
  }
  const double n = static_cast<double>(real_scores.size());
  return {d_loss / n, g_adv / n};
}

torch::Tensor hinge_generator_loss(const std::vector<torch::Tensor>& fake_scores) {
  if (fake_scores.empty()) fail(ErrorKind::Argument, "score list must be non-empty");
  torch::Tensor g;
  for (const auto& s : fake_scores) g = g.defined() ? g - s.mean() : -s.mean();
  return g / static_cast<double>(fake_scores.size());
}

HingeLosses hinge_losses(CondDiscriminator& d, const torch::Tensor& onehot, const torch::Tensor& x_real,
                         const torch::Tensor& x_fake) {
  if (x_real.sizes() != x_fake.sizes()) fail(ErrorKind::Argument, "real and fake images differ in shape");
  return hinge_from_scores(d(onehot, x_real).scores, d(onehot, x_fake).scores);
}

torch::Tensor perceptual_l1(SurrogateFeatureExtractor& fx, const torch::Tensor& x_fake,
                            const torch::Tensor& x_real, const std::vector<double>& layer_weights) {
  if (x_fake.sizes() != x_real.sizes()) fail(ErrorKind::Argument, "perceptual loss inputs differ in shape");
  if (layer_weights.size() != fx->num_levels()) {
    fail(ErrorKind::Argument, "need one perceptual weight per pyramid level");
  }
  const auto a = fx(x_fake);
  const auto b = fx(x_real);
  auto total = torch::zeros({}, x_fake.options());
  for (std::size_t l = 0; l < a.size(); ++l) {
    total = total + layer_weights[l] * (a[l] - b[l]).abs().mean();
  }
  return total;
}

torch::Tensor feature_matching_from(const DiscriminatorOutput& fake, const DiscriminatorOutput& real) {
  if (fake.features.size() != real.features.size()) {
    fail(ErrorKind::Argument, "feature lists are not aligned");
  }
  torch::Tensor total;
  std::int64_t terms = 0;
  for (std::size_t s = 0; s < fake.features.size(); ++s) {
    if (fake.features[s].size() != real.features[s].size()) {
      fail(ErrorKind::Argument, "feature lists are not aligned");
    }
    for (std::size_t l = 0; l < fake.features[s].size(); ++l) {
      auto term = (fake.features[s][l] - real.features[s][l].detach()).abs().mean();
      total = total.defined() ? total + term : term;
      ++terms;
    }
  }
  if (terms == 0) fail(ErrorKind::Argument, "discriminator exposed no features");
  return total / static_cast<double>(terms);
}

torch::Tensor feature_matching_l1(CondDiscriminator& d, const torch::Tensor& onehot,
                                  const torch::Tensor& x_fake, const torch::Tensor& x_real) {
  if (x_fake.sizes() != x_real.sizes()) fail(ErrorKind::Argument, "feature matching inputs differ in shape");
  return feature_matching_from(d(onehot, x_fake), d(onehot, x_real));
}

SpadeGeneratorLoss spade_generator_loss(SpadeGenerator& gen, CondDiscriminator& d,
                                        SurrogateFeatureExtractor& fx, const torch::Tensor& onehot,
                                        const torch::Tensor& x_real, const SpadeTrainConfig& cfg,
                                        const torch::Tensor& z) {
  SpadeGeneratorLoss out;
  out.fake = gen(onehot, z);
  auto fake_out = d(onehot, out.fake);
  auto real_out = d(onehot, x_real);
  out.g_adv = hinge_generator_loss(fake_out.scores);
  out.perceptual = perceptual_l1(fx, out.fake, x_real, cfg.perceptual_weights);
  out.feat_match = feature_matching_from(fake_out, real_out);
  out.total = out.g_adv + cfg.lambda_perceptual * out.perceptual + cfg.lambda_feat * out.feat_match;
  return out;
}

SpadeTrainer::SpadeTrainer(SpadeGenerator gen, CondDiscriminator d, SurrogateFeatureExtractor fx,
                           data::DatasetTensors data, SpadeTrainConfig cfg)
    : gen_(std::move(gen)),
      d_(std::move(d)),
      fx_(std::move(fx)),
      data_(std::move(data)),
      cfg_(std::move(cfg)),
      gen_opt_(gen_->parameters(), torch::optim::AdamOptions(cfg_.lr_g).betas({cfg_.beta1, cfg_.beta2})),
      d_opt_(d_->parameters(), torch::optim::AdamOptions(cfg_.lr_d).betas({cfg_.beta1, cfg_.beta2})),
      sampler_(data_.labels.size(0), cfg_.batch_size, mix_seed(cfg_.seed, 0xda7a)) {
  if (cfg_.steps < 0) fail(ErrorKind::Config, "steps must be >= 0");
  if (data_.labels.size(1) != gen_->options().height || data_.labels.size(2) != gen_->options().width) {
    fail(ErrorKind::Argument, "dataset resolution does not match the SPADE generator");
  }
}

SpadeMetricsRow SpadeTrainer::train_step() {
  const auto t = static_cast<std::uint64_t>(step_);
  auto idx = sampler_.indices(step_);
  auto onehot = data::one_hot(data_.labels.index_select(0, idx), gen_->options().num_classes);
  auto real = data_.images.index_select(0, idx);
  torch::Tensor z;
  if (gen_->options().use_latent) {
    z = sample_latent(real.size(0), gen_->options().latent_dim, mix_seed(cfg_.seed, t, 1));
  }

  torch::Tensor fake;
  {
    torch::NoGradGuard no_grad;
    fake = gen_(onehot, z);
  }
  auto d_losses = hinge_losses(d_, onehot, real, fake);
  d_opt_.zero_grad();
  d_losses.d_loss.backward();
  d_opt_.step();

  auto g = spade_generator_loss(gen_, d_, fx_, onehot, real, cfg_, z);
  gen_opt_.zero_grad();
  g.total.backward();
  gen_opt_.step();
  d_opt_.zero_grad();

  ++step_;
  return {step_,
          d_losses.d_loss.item<double>(),
          g.g_adv.item<double>(),
          g.perceptual.item<double>(),
          g.feat_match.item<double>(),
          g.total.item<double>()};
}

void SpadeTrainer::run(std::int64_t until, const std::function<void(const SpadeMetricsRow&)>& on_log) {
  until = std::min(until, cfg_.steps);
  while (step_ < until) {
    auto row = train_step();
    if (row.step % cfg_.log_interval == 0 || row.step == cfg_.steps) {
      for (double v : {row.d_loss, row.g_adv, row.perceptual, row.feat_match}) {
        if (!std::isfinite(v)) {
          fail(ErrorKind::Numeric, "non-finite loss at SPADE step " + std::to_string(row.step));
        }
      }
      if (on_log) on_log(row);
    }
  }
}

SpadeTrainResult train_spade(SpadeGenerator& gen, CondDiscriminator& d, SurrogateFeatureExtractor& fx,
                             const data::DatasetTensors& data, const SpadeTrainConfig& cfg) {
  SpadeTrainer trainer(gen, d, fx, data, cfg);
  SpadeTrainResult result;
  trainer.run(cfg.steps, [&](const SpadeMetricsRow& row) { result.log.push_back(row); });
  return result;
}

}  // namespace sbgan::imgsynth
