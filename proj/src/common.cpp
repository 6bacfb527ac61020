#include "sbgan/errors.hpp"
#include "sbgan/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>

namespace sbgan {

std::string_view error_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "E_CONFIG";
    case ErrorKind::Argument: return "E_ARGUMENT";
    case ErrorKind::State: return "E_STATE";
    case ErrorKind::Numeric: return "E_NUMERIC";
    case ErrorKind::Load: return "E_LOAD";
    case ErrorKind::Io: return "E_IO";
  }
  return "E_UNKNOWN";
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(splitmix(seed) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

std::int64_t uniform_int(std::mt19937_64& engine, std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(uniform01(engine) * static_cast<double>(span));
}

torch::Generator make_generator(std::uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

torch::Tensor sample_latent(std::int64_t n, std::int64_t dim, std::uint64_t seed,
                            torch::Dtype dtype) {
  auto gen = make_generator(seed);
  return torch::randn({n, dim}, gen, torch::TensorOptions().dtype(dtype));
}

void init_parameters(torch::nn::Module& module, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = make_generator(seed);
  for (auto& item : module.named_parameters(/*recurse=*/true)) {
    auto& p = item.value();
    if (p.dim() >= 2) {
      const auto fan_in = p.numel() / p.size(0);
      p.normal_(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)), gen);
    } else {
      p.zero_();
    }
  }
}

void copy_state(const torch::nn::Module& src, torch::nn::Module& dst) {
  torch::NoGradGuard no_grad;
  auto src_params = src.named_parameters(true);
  for (auto& item : dst.named_parameters(true)) {
    item.value().copy_(src_params[item.key()]);
  }
  auto src_buffers = src.named_buffers(true);
  for (auto& item : dst.named_buffers(true)) {
    item.value().copy_(src_buffers[item.key()]);
  }
}

torch::Tensor flat_parameters(const torch::nn::Module& module) {
  std::vector<torch::Tensor> parts;
  for (const auto& p : module.parameters(true)) {
    parts.push_back(p.detach().reshape({-1}).clone());
  }
  if (parts.empty()) return torch::empty({0});
  return torch::cat(parts);
}

}  // namespace sbgan
