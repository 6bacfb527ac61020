#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <torch/torch.h>

namespace sbgan::data {

// Integer class map. Labels are stored row-major as bytes, which caps the
// class count at 256.
struct SegMap {
  std::int64_t height = 0;
  std::int64_t width = 0;
  int num_classes = 0;
  std::vector<std::uint8_t> labels;

  SegMap() = default;
  SegMap(std::int64_t h, std::int64_t w, int k, std::uint8_t fill = 0);

  std::uint8_t at(std::int64_t i, std::int64_t j) const { return labels[i * width + j]; }
  std::uint8_t& at(std::int64_t i, std::int64_t j) { return labels[i * width + j]; }

  // Throws Argument if any entry is outside [0, K) or the size is wrong.
  void validate() const;

  // H x W int64 tensor.
  torch::Tensor to_tensor() const;
  static SegMap from_tensor(const torch::Tensor& labels, int num_classes);

  bool operator==(const SegMap&) const = default;
};

using Color = std::array<std::uint8_t, 3>;

struct SceneSample {
  torch::Tensor image;  // 3 x H x W, float32 in [0, 1]
  SegMap segmap;
};

// Paints rows [top, H) with `cls`.
struct BandRule {
  int cls = 1;
  double top_min = 0.5;
  double top_max = 0.7;
};

// Axis-aligned rectangle, present with probability `presence`. Extents and
// offsets are fractions of the map size; sampled offsets are integer rows and
// columns drawn uniformly between the rounded bounds.
struct RectRule {
  int cls = 2;
  double presence = 1.0;
  double height_min = 0.2, height_max = 0.4;
  double width_min = 0.2, width_max = 0.4;
  double top_min = 0.2, top_max = 0.6;
  double left_min = 0.0, left_max = 0.8;
};

using LayoutRule = std::variant<BandRule, RectRule>;

struct ToyWorldSpec {
  int num_classes = 4;
  std::vector<LayoutRule> rules;  // painted in order over a class-0 background
  std::vector<Color> class_colors;
  std::int64_t height = 16;
  std::int64_t width = 16;
  std::uint64_t seed = 0;

  // Throws Config on K < 2, K > 256, duplicate or too-close colors, rules
  // referencing unknown classes, or rules able to paint row 0.
  void validate() const;
};

// The fixed reference palette; entries are pairwise >= 0.2 apart in RGB.
const std::vector<Color>& default_palette();

// Street-scene-like rules (sky background, ground band, then object
// rectangles) for K in [2, 12].
ToyWorldSpec default_toy_spec(int num_classes, std::int64_t height, std::int64_t width,
                              std::uint64_t seed = 0);

enum class Split { Train, Val };
std::string_view split_name(Split split);

struct Dataset {
  std::vector<SceneSample> samples;
  Split split = Split::Train;
  int num_classes = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;

  std::size_t size() const { return samples.size(); }
  std::vector<SegMap> segmaps() const;
};

// Samples one layout from the rule distribution.
SegMap sample_layout(const ToyWorldSpec& spec, std::mt19937_64& engine);

// Paints class colors plus uniform noise in [-0.05, 0.05], clamped to [0, 1].
torch::Tensor render_scene(const ToyWorldSpec& spec, const SegMap& segmap,
                           std::mt19937_64& engine);

// Pure function of (spec, n, seed, split).
Dataset generate_toy_dataset(const ToyWorldSpec& spec, std::size_t n, std::uint64_t seed,
                             Split split = Split::Train);

// K x H x W float tensor.
torch::Tensor one_hot(const SegMap& segmap);
// N x H x W integer labels -> N x K x H x W float.
torch::Tensor one_hot(const torch::Tensor& labels, int num_classes);

// Nearest-neighbor: keeps the top-left entry of every factor x factor cell.
SegMap downsample_labels(const SegMap& segmap, int factor);
torch::Tensor downsample_labels(const torch::Tensor& labels, int factor);

std::vector<double> class_histogram(std::span<const SegMap> maps);
std::vector<double> class_histogram(const torch::Tensor& labels, int num_classes);

struct DatasetTensors {
  torch::Tensor images;  // N x 3 x H x W float32
  torch::Tensor labels;  // N x H x W int64
};
DatasetTensors to_tensors(const Dataset& dataset);

// Palette rendering of labels (N x H x W or H x W) to RGB in [0, 1].
torch::Tensor colorize(const torch::Tensor& labels, const std::vector<Color>& palette);
// Inverse of colorize on 8-bit-exact colors; throws Argument on unknown colors.
torch::Tensor decolorize(const torch::Tensor& image, const std::vector<Color>& palette);

struct DatasetMeta {
  int num_classes = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<Color> class_colors;
  std::uint64_t spec_seed = 0;
  std::uint64_t data_seed = 0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::string config_hash;
};

// Layout: root/{train,val}/{img,seg}/NNNNN.png plus root/meta.json.
void save_dataset(const std::filesystem::path& root, const Dataset& train, const Dataset& val,
                  const DatasetMeta& meta);
DatasetMeta load_meta(const std::filesystem::path& root);
Dataset load_split(const std::filesystem::path& root, Split split);

// Deterministic epoch-shuffled minibatches: indices for step t depend only on
// (seed, t), so training can resume at any step.
class BatchSampler {
 public:
  BatchSampler(std::int64_t dataset_size, std::int64_t batch_size, std::uint64_t seed);
  torch::Tensor indices(std::int64_t step);

 private:
  std::int64_t size_;
  std::int64_t batch_;
  std::uint64_t seed_;
  std::int64_t cached_epoch_ = -1;
  std::vector<std::int64_t> permutation_;
};

}  // namespace sbgan::data
