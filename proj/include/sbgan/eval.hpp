#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <torch/torch.h>

#include "sbgan/data.hpp"

namespace sbgan::eval {

struct GaussianStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;

  // Throws Numeric if sigma is asymmetric beyond 1e-8 or has an eigenvalue
  // below -1e-6.
  void validate() const;
};

// Empirical mean and unbiased (n - 1) covariance of the rows.
GaussianStats fit_gaussian(const Eigen::MatrixXd& features);
GaussianStats fit_gaussian(const torch::Tensor& features);

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the trace of the
// square root taken from the eigenvalues of S_a^{1/2} S_b S_a^{1/2}.
// Eigenvalues in [-1e-6, 0) clamp to zero; more negative ones also clamp but
// emit a warning. The result is clamped at zero.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// Fixed image -> feature-vector map used for FID.
class EmbeddingModel {
 public:
  virtual ~EmbeddingModel() = default;
  // N x 3 x H x W images in [0, 1] -> N x d features.
  virtual Eigen::MatrixXd embed(const torch::Tensor& images) const = 0;
  virtual std::int64_t dim() const = 0;
  virtual std::string id() const = 0;
};

// Global-average-pooled multi-scale features from a seeded random
// convolutional pyramid (32 + 64 + 96 = 192 dims by default).
std::unique_ptr<EmbeddingModel> make_surrogate_embedder(std::uint64_t seed,
                                                        std::vector<std::int64_t> channels = {32, 64, 96});

// Returns `n` generated images for a given seed.
using ImageSampler = std::function<torch::Tensor(std::int64_t n, std::uint64_t seed)>;

struct FidReport {
  double mean = 0.0;
  std::vector<double> trials;
  std::int64_t n_per_trial = 0;
  std::uint64_t seed = 0;
  std::string embedder_id;
};

// Each trial draws n_per_trial real images without replacement and
// n_per_trial samples, and computes FID between their embeddings.
FidReport evaluate_fid(const ImageSampler& sampler, const torch::Tensor& real_images,
                       const EmbeddingModel& embedder, std::int64_t n_per_trial, int trials,
                       std::uint64_t seed);

// Maps a batch of N x H x W labels to N images.
using ConditionalSynth = std::function<torch::Tensor(const torch::Tensor& labels)>;

// Synthesizes one image per ground-truth val map (in dataset order, in
// batches of `batch_size`) and returns FID against the val images.
double eval_conditioned_on_gt(const ConditionalSynth& synth, const data::Dataset& val,
                              const EmbeddingModel& embedder, std::int64_t batch_size = 64);

// KL(p || q) after adding `smoothing` to every entry and renormalizing.
double kl_divergence(std::span<const double> p, std::span<const double> q,
                     double smoothing = 1e-8);

struct AreaStats {
  double mean = 0.0;      // mean per-map pixel fraction of the class
  double variance = 0.0;  // population variance of that fraction
};

struct LayoutDivergence {
  double kl_class_freq = 0.0;
  std::vector<AreaStats> generated_areas;
  std::vector<AreaStats> real_areas;
};

LayoutDivergence layout_divergence(std::span<const data::SegMap> generated,
                                   std::span<const data::SegMap> real);

}  // namespace sbgan::eval
