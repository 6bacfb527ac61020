#include "sbgan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "sbgan/errors.hpp"
#include "sbgan/imgsynth.hpp"
#include "sbgan/rng.hpp"

namespace sbgan::eval {
namespace {

constexpr double kNegativeEigenTolerance = -1e-6;

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
  auto d = t.detach().to(torch::kFloat64).contiguous();
  if (d.dim() != 2) fail(ErrorKind::Argument, "expected an n x d feature matrix");
  Eigen::MatrixXd m(d.size(0), d.size(1));
  const auto* p = d.data_ptr<double>();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = p[i * m.cols() + j];
  }
  return m;
}

// Square root of a symmetric PSD matrix; small negative eigenvalues clamp to 0.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (m + m.transpose()));
  const auto& vals = solver.eigenvalues();
  if (vals.size() > 0 && vals.minCoeff() < kNegativeEigenTolerance) {
    std::cerr << "warning: covariance eigenvalue " << vals.minCoeff() << " below tolerance; clamped to 0\n";
  }
  Eigen::VectorXd roots = vals.cwiseMax(0.0).cwiseSqrt();
  return solver.eigenvectors() * roots.asDiagonal() * solver.eigenvectors().transpose();
}

class SurrogateEmbedder final : public EmbeddingModel {
 public:
  SurrogateEmbedder(std::uint64_t seed, std::vector<std::int64_t> channels)
      : dim_(std::accumulate(channels.begin(), channels.end(), std::int64_t{0})),
        seed_(seed),
        net_(seed, std::move(channels)) {}

  Eigen::MatrixXd embed(const torch::Tensor& images) const override {
    torch::NoGradGuard no_grad;
    constexpr std::int64_t kChunk = 256;
    std::vector<torch::Tensor> parts;
    auto input = images.detach().to(torch::kFloat32);
    for (std::int64_t i = 0; i < input.size(0); i += kChunk) {
      parts.push_back(net_->pooled(input.slice(0, i, std::min(i + kChunk, input.size(0)))));
    }
    return to_eigen(torch::cat(parts));
  }

  std::int64_t dim() const override { return dim_; }
  std::string id() const override { return "surrogate-pyramid-" + std::to_string(dim_) + "-seed" + std::to_string(seed_); }

 private:
  std::int64_t dim_;
  std::uint64_t seed_;
  // forward() is logically const: the weights are frozen.
  mutable imgsynth::SurrogateFeatureExtractor net_;
};

}  // namespace

void GaussianStats::validate() const {
  if (sigma.rows() != mu.size() || sigma.cols() != mu.size()) {
    fail(ErrorKind::Argument, "mean and covariance dimensions disagree");
  }
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-8) {
    fail(ErrorKind::Numeric, "covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sigma, Eigen::EigenvaluesOnly);
  if (solver.eigenvalues().minCoeff() < kNegativeEigenTolerance) {
    fail(ErrorKind::Numeric, "covariance is not positive semidefinite");
  }
}

GaussianStats fit_gaussian(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) fail(ErrorKind::Argument, "fit_gaussian needs at least two samples");
  GaussianStats stats;
  stats.mu = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - stats.mu.transpose();
  stats.sigma = (centered.transpose() * centered) / static_cast<double>(features.rows() - 1);
  stats.sigma = 0.5 * (stats.sigma + stats.sigma.transpose());
  return stats;
}

GaussianStats fit_gaussian(const torch::Tensor& features) { return fit_gaussian(to_eigen(features)); }

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mu.size() != b.mu.size() || a.sigma.rows() != b.sigma.rows()) {
    fail(ErrorKind::Argument, "Gaussian dimensions differ");
  }
  const Eigen::MatrixXd root_a = psd_sqrt(a.sigma);
  const Eigen::MatrixXd inner = root_a * b.sigma * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (inner + inner.transpose()),
                                                        Eigen::EigenvaluesOnly);
  const auto& vals = solver.eigenvalues();
  if (vals.size() > 0 && vals.minCoeff() < kNegativeEigenTolerance) {
    std::cerr << "warning: product eigenvalue " << vals.minCoeff() << " below tolerance; clamped to 0\n";
  }
  const double trace_sqrt = vals.cwiseMax(0.0).cwiseSqrt().sum();
  const double mean_term = (a.mu - b.mu).squaredNorm();
  const double value = mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * trace_sqrt;
  return std::max(0.0, value);
}

std::unique_ptr<EmbeddingModel> make_surrogate_embedder(std::uint64_t seed,
                                                        std::vector<std::int64_t> channels) {
  return std::make_unique<SurrogateEmbedder>(seed, std::move(channels));
}

FidReport evaluate_fid(const ImageSampler& sampler, const torch::Tensor& real_images,
                       const EmbeddingModel& embedder, std::int64_t n_per_trial, int trials,
                       std::uint64_t seed) {
  if (trials < 1) fail(ErrorKind::Argument, "need at least one trial");
  if (n_per_trial < 2) fail(ErrorKind::Argument, "need at least two images per trial");
  if (real_images.size(0) < n_per_trial) {
    fail(ErrorKind::Argument, "only " + std::to_string(real_images.size(0)) +
                                  " real images for " + std::to_string(n_per_trial) + " per trial");
  }
  FidReport report;
  report.n_per_trial = n_per_trial;
  report.seed = seed;
  report.embedder_id = embedder.id();
  for (int t = 0; t < trials; ++t) {
    auto gen = make_generator(mix_seed(seed, static_cast<std::uint64_t>(t), 1));
    auto idx = torch::randperm(real_images.size(0), gen, torch::kInt64).slice(0, 0, n_per_trial);
    const auto real = fit_gaussian(embedder.embed(real_images.index_select(0, idx)));
    auto fake_images = sampler(n_per_trial, mix_seed(seed, static_cast<std::uint64_t>(t), 2));
    if (fake_images.size(0) != n_per_trial) fail(ErrorKind::Argument, "sampler returned the wrong count");
    const auto fake = fit_gaussian(embedder.embed(fake_images));
    report.trials.push_back(frechet_distance(real, fake));
  }
  report.mean = std::accumulate(report.trials.begin(), report.trials.end(), 0.0) /
                static_cast<double>(report.trials.size());
  return report;
}

double eval_conditioned_on_gt(const ConditionalSynth& synth, const data::Dataset& val,
                              const EmbeddingModel& embedder, std::int64_t batch_size) {
  const auto tensors = data::to_tensors(val);
  const auto n = tensors.labels.size(0);
  std::vector<torch::Tensor> fakes;
  for (std::int64_t i = 0; i < n; i += batch_size) {
    torch::NoGradGuard no_grad;
    fakes.push_back(synth(tensors.labels.slice(0, i, std::min(i + batch_size, n))).detach());
  }
  const auto real = fit_gaussian(embedder.embed(tensors.images));
  const auto fake = fit_gaussian(embedder.embed(torch::cat(fakes)));
  return frechet_distance(real, fake);
}

double kl_divergence(std::span<const double> p, std::span<const double> q, double smoothing) {
  if (p.size() != q.size() || p.empty()) fail(ErrorKind::Argument, "distributions differ in support size");
  const double zp = std::accumulate(p.begin(), p.end(), 0.0) + smoothing * static_cast<double>(p.size());
  const double zq = std::accumulate(q.begin(), q.end(), 0.0) + smoothing * static_cast<double>(q.size());
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = (p[i] + smoothing) / zp;
    const double qi = (q[i] + smoothing) / zq;
    kl += pi * std::log(pi / qi);
  }
  return std::max(0.0, kl);
}

namespace {

std::vector<AreaStats> area_stats(std::span<const data::SegMap> maps, int k) {
  std::vector<AreaStats> out(static_cast<std::size_t>(k));
  std::vector<std::vector<double>> fractions(static_cast<std::size_t>(k));
  for (const auto& m : maps) {
    std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
    for (auto v : m.labels) counts[v] += 1.0;
    for (int c = 0; c < k; ++c) fractions[c].push_back(counts[c] / static_cast<double>(m.labels.size()));
  }
  for (int c = 0; c < k; ++c) {
    const auto& f = fractions[c];
    const double mean = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
    double var = 0.0;
    for (double x : f) var += (x - mean) * (x - mean);
    out[c] = {mean, var / static_cast<double>(f.size())};
  }
  return out;
}

}  // namespace

LayoutDivergence layout_divergence(std::span<const data::SegMap> generated,
                                   std::span<const data::SegMap> real) {
  if (generated.empty() || real.empty()) fail(ErrorKind::Argument, "layout_divergence needs maps on both sides");
  const int k = generated.front().num_classes;
  if (real.front().num_classes != k) fail(ErrorKind::Argument, "generated and real maps differ in K");
  LayoutDivergence out;
  out.kl_class_freq = kl_divergence(data::class_histogram(generated), data::class_histogram(real));
  out.generated_areas = area_stats(generated, k);
  out.real_areas = area_stats(real, k);
  return out;
}

}  // namespace sbgan::eval
