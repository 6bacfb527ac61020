#pragma once

#include <cstdint>
#include <random>

#include <torch/torch.h>

namespace sbgan {

// splitmix64 finalizer; used to derive independent streams from a root seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// Uniform double in [0, 1) built from the top 53 bits, identical on every
// standard library (std::uniform_real_distribution is not).
inline double uniform01(std::mt19937_64& engine) {
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

// Uniform integer in [lo, hi].
std::int64_t uniform_int(std::mt19937_64& engine, std::int64_t lo, std::int64_t hi);

torch::Generator make_generator(std::uint64_t seed);

// Draws a batch of standard normal latent vectors, shape n x dim.
torch::Tensor sample_latent(std::int64_t n, std::int64_t dim, std::uint64_t seed,
                            torch::Dtype dtype = torch::kFloat32);

// Re-initializes every parameter of `module` from `seed`: He-normal for
// weights, zeros for biases. Independent of torch's global generator.
void init_parameters(torch::nn::Module& module, std::uint64_t seed);

// Copies parameters and buffers of `src` into `dst` (same architecture).
void copy_state(const torch::nn::Module& src, torch::nn::Module& dst);

// Flattened copy of every parameter, for bit-exact comparisons.
torch::Tensor flat_parameters(const torch::nn::Module& module);

}  // namespace sbgan
