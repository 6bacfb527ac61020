#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace sbgan::io {

struct PngText {
  std::string key;
  std::string value;
};

// 8-bit images. RGB tensors are 3 x H x W floats in [0, 1]; values are
// rounded to the nearest 1/255 step on write.
void write_rgb_png(const std::filesystem::path& path, const torch::Tensor& image,
                   const std::vector<PngText>& text = {});
torch::Tensor read_rgb_png(const std::filesystem::path& path);

struct GrayImage {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;
};

void write_gray_png(const std::filesystem::path& path, const GrayImage& image,
                    const std::vector<PngText>& text = {});
GrayImage read_gray_png(const std::filesystem::path& path);

std::vector<PngText> read_png_text(const std::filesystem::path& path);

// Tiles N x C x H x W into C x (rows*H) x (cols*W), row-major, no padding.
torch::Tensor make_grid(const torch::Tensor& images, std::int64_t columns);

}  // namespace sbgan::io
