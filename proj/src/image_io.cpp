#include "sbgan/image_io.hpp"

#include <cstdio>
#include <memory>

#include <png.h>

#include "sbgan/errors.hpp"

namespace sbgan::io {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
  return f;
}

void write_png(const std::filesystem::path& path, const std::uint8_t* data, std::int64_t height,
               std::int64_t width, int color_type, int channels,
               const std::vector<PngText>& text) {
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::Io, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::Io, "failed writing '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_text> chunks(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = const_cast<char*>(text[i].key.c_str());
    chunks[i].text = const_cast<char*>(text[i].value.c_str());
    chunks[i].text_length = text[i].value.size();
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  png_write_info(png, info);
  const auto stride = width * channels;
  for (std::int64_t r = 0; r < height; ++r) {
    png_write_row(png, const_cast<png_bytep>(data + r * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct Decoded {
  std::int64_t height = 0;
  std::int64_t width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<PngText> text;
};

Decoded read_png(const std::filesystem::path& path, int wanted_channels) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::Io, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::Io, "failed reading '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  Decoded out;
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::Io, "'" + path.string() + "' is not 8-bit");
  }
  out.channels = png_get_channels(png, info);
  const int expected_type = wanted_channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  if (color_type != expected_type || out.channels != wanted_channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::Io, "'" + path.string() + "' has unexpected color type");
  }
  out.pixels.resize(static_cast<std::size_t>(out.height * out.width * out.channels));
  for (std::int64_t r = 0; r < out.height; ++r) {
    png_read_row(png, out.pixels.data() + r * out.width * out.channels, nullptr);
  }
  png_read_end(png, info);
  png_textp chunks = nullptr;
  int count = 0;
  png_get_text(png, info, &chunks, &count);
  for (int i = 0; i < count; ++i) {
    out.text.push_back({chunks[i].key, std::string(chunks[i].text, chunks[i].text_length)});
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void write_rgb_png(const std::filesystem::path& path, const torch::Tensor& image,
                   const std::vector<PngText>& text) {
  if (image.dim() != 3 || image.size(0) != 3) {
    fail(ErrorKind::Argument, "write_rgb_png expects a 3 x H x W tensor");
  }
  auto bytes = image.detach()
                   .to(torch::kFloat64)
                   .clamp(0.0, 1.0)
                   .mul(255.0)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
  write_png(path, bytes.data_ptr<std::uint8_t>(), image.size(1), image.size(2),
            PNG_COLOR_TYPE_RGB, 3, text);
}

torch::Tensor read_rgb_png(const std::filesystem::path& path) {
  auto decoded = read_png(path, 3);
  auto hwc = torch::from_blob(decoded.pixels.data(), {decoded.height, decoded.width, 3},
                              torch::kUInt8);
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

void write_gray_png(const std::filesystem::path& path, const GrayImage& image,
                    const std::vector<PngText>& text) {
  if (static_cast<std::int64_t>(image.pixels.size()) != image.height * image.width) {
    fail(ErrorKind::Argument, "gray image size mismatch");
  }
  write_png(path, image.pixels.data(), image.height, image.width, PNG_COLOR_TYPE_GRAY, 1, text);
}

GrayImage read_gray_png(const std::filesystem::path& path) {
  auto decoded = read_png(path, 1);
  return {decoded.height, decoded.width, std::move(decoded.pixels)};
}

std::vector<PngText> read_png_text(const std::filesystem::path& path) {
  // Accept either layout; only the text chunks matter here.
  try {
    return read_png(path, 3).text;
  } catch (const Error&) {
    return read_png(path, 1).text;
  }
}

torch::Tensor make_grid(const torch::Tensor& images, std::int64_t columns) {
  if (images.dim() != 4) fail(ErrorKind::Argument, "make_grid expects N x C x H x W");
  const auto n = images.size(0);
  columns = std::max<std::int64_t>(1, std::min(columns, n));
  const auto rows = (n + columns - 1) / columns;
  const auto c = images.size(1), h = images.size(2), w = images.size(3);
  auto grid = torch::zeros({c, rows * h, columns * w}, images.options());
  for (std::int64_t i = 0; i < n; ++i) {
    const auto r = i / columns, col = i % columns;
    grid.slice(1, r * h, (r + 1) * h).slice(2, col * w, (col + 1) * w).copy_(images[i]);
  }
  return grid;
}

}  // namespace sbgan::io
