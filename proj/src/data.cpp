#include "sbgan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "sbgan/errors.hpp"
#include "sbgan/image_io.hpp"
#include "sbgan/rng.hpp"

namespace sbgan::data {
namespace {

constexpr double kMinColorSeparation = 0.2;
constexpr double kNoiseAmplitude = 0.05;

std::int64_t rows_of(double fraction, std::int64_t extent) {
  return static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(extent)));
}

double color_distance(const Color& a, const Color& b) {
  double sum = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double d = (static_cast<double>(a[c]) - static_cast<double>(b[c])) / 255.0;
    sum += d * d;
  }
  return std::sqrt(sum);
}

std::string file_stem(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05zu", index);
  return buf;
}

void check_fraction_range(double lo, double hi, const char* what) {
  if (!(lo >= 0.0 && hi <= 1.0 && lo <= hi)) {
    fail(ErrorKind::Config, std::string("rule range '") + what + "' must satisfy 0 <= min <= max <= 1");
  }
}

}  // namespace

SegMap::SegMap(std::int64_t h, std::int64_t w, int k, std::uint8_t fill)
    : height(h), width(w), num_classes(k), labels(static_cast<std::size_t>(h * w), fill) {}

void SegMap::validate() const {
  if (height <= 0 || width <= 0 || static_cast<std::int64_t>(labels.size()) != height * width) {
    fail(ErrorKind::Argument, "segmap size does not match its dimensions");
  }
  if (num_classes < 1 || num_classes > 256) fail(ErrorKind::Argument, "segmap class count out of range");
  for (auto v : labels) {
    if (v >= num_classes) fail(ErrorKind::Argument, "segmap label outside [0, K)");
  }
}

torch::Tensor SegMap::to_tensor() const {
  auto t = torch::empty({height, width}, torch::kInt64);
  auto acc = t.accessor<std::int64_t, 2>();
  for (std::int64_t i = 0; i < height; ++i) {
    for (std::int64_t j = 0; j < width; ++j) acc[i][j] = at(i, j);
  }
  return t;
}

SegMap SegMap::from_tensor(const torch::Tensor& labels, int num_classes) {
  if (labels.dim() != 2) fail(ErrorKind::Argument, "SegMap::from_tensor expects H x W");
  auto t = labels.to(torch::kInt64).contiguous();
  SegMap m(t.size(0), t.size(1), num_classes);
  const auto* p = t.data_ptr<std::int64_t>();
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    if (p[i] < 0 || p[i] >= num_classes) fail(ErrorKind::Argument, "label outside [0, K)");
    m.labels[i] = static_cast<std::uint8_t>(p[i]);
  }
  return m;
}

const std::vector<Color>& default_palette() {
  static const std::vector<Color> palette = {
      {70, 130, 180},  {128, 64, 128}, {220, 120, 40}, {0, 0, 142},
      {107, 142, 35},  {220, 20, 60},  {250, 250, 250}, {30, 30, 30},
      {0, 200, 200},   {250, 170, 160}, {150, 100, 50}, {120, 120, 120},
  };
  return palette;
}

void ToyWorldSpec::validate() const {
  if (num_classes < 2) fail(ErrorKind::Config, "toy world needs at least 2 classes");
  if (num_classes > 256) fail(ErrorKind::Config, "toy world supports at most 256 classes");
  if (height < 2 || width < 1) fail(ErrorKind::Config, "toy world resolution too small");
  if (static_cast<int>(class_colors.size()) != num_classes) {
    fail(ErrorKind::Config, "class_colors must have exactly K entries");
  }
  for (std::size_t a = 0; a < class_colors.size(); ++a) {
    for (std::size_t b = a + 1; b < class_colors.size(); ++b) {
      if (color_distance(class_colors[a], class_colors[b]) < kMinColorSeparation) {
        fail(ErrorKind::Config, "class colors " + std::to_string(a) + " and " + std::to_string(b) +
                                    " are closer than 0.2");
      }
    }
  }
  for (const auto& rule : rules) {
    std::visit(
        [&](const auto& r) {
          if (r.cls < 1 || r.cls >= num_classes) {
            fail(ErrorKind::Config, "rule class must lie in [1, K)");
          }
          check_fraction_range(r.top_min, r.top_max, "top");
          // Row 0 is reserved for the background so every layout contains class 0.
          if (rows_of(r.top_min, height) < 1) {
            fail(ErrorKind::Config, "rule may paint row 0; background must stay present");
          }
          if constexpr (std::is_same_v<std::decay_t<decltype(r)>, RectRule>) {
            if (r.presence < 0.0 || r.presence > 1.0) fail(ErrorKind::Config, "presence must be in [0, 1]");
            check_fraction_range(r.height_min, r.height_max, "height");
            check_fraction_range(r.width_min, r.width_max, "width");
            check_fraction_range(r.left_min, r.left_max, "left");
          }
        },
        rule);
  }
}

ToyWorldSpec default_toy_spec(int num_classes, std::int64_t height, std::int64_t width,
                              std::uint64_t seed) {
  const auto& palette = default_palette();
  if (num_classes < 2) fail(ErrorKind::Config, "toy world needs at least 2 classes");
  if (num_classes > static_cast<int>(palette.size())) {
    fail(ErrorKind::Config, "default toy world supports at most " + std::to_string(palette.size()) +
                                " classes");
  }
  ToyWorldSpec spec;
  spec.num_classes = num_classes;
  spec.height = height;
  spec.width = width;
  spec.seed = seed;
  spec.class_colors.assign(palette.begin(), palette.begin() + num_classes);

  spec.rules.push_back(BandRule{1, 0.5, 0.7});
  // cls, presence, h range, w range, top range, left range
  const std::vector<RectRule> objects = {
      {2, 0.8, 0.30, 0.60, 0.20, 0.50, 0.10, 0.30, 0.0, 0.8},
      {3, 0.7, 0.10, 0.25, 0.15, 0.35, 0.60, 0.80, 0.0, 0.8},
      {4, 0.5, 0.20, 0.50, 0.10, 0.20, 0.15, 0.40, 0.0, 0.9},
      {5, 0.5, 0.15, 0.30, 0.05, 0.12, 0.45, 0.70, 0.0, 0.95},
  };
  for (int cls = 2; cls < num_classes; ++cls) {
    if (cls - 2 < static_cast<int>(objects.size())) {
      spec.rules.push_back(objects[cls - 2]);
    } else {
      spec.rules.push_back(RectRule{cls, 0.4, 0.1, 0.3, 0.1, 0.3, 0.1, 0.8, 0.0, 0.9});
    }
  }
  spec.validate();
  return spec;
}

std::string_view split_name(Split split) { return split == Split::Train ? "train" : "val"; }

std::vector<SegMap> Dataset::segmaps() const {
  std::vector<SegMap> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.segmap);
  return out;
}

SegMap sample_layout(const ToyWorldSpec& spec, std::mt19937_64& engine) {
  const auto h = spec.height, w = spec.width;
  SegMap map(h, w, spec.num_classes, 0);
  for (const auto& rule : spec.rules) {
    if (const auto* band = std::get_if<BandRule>(&rule)) {
      const auto top = uniform_int(engine, rows_of(band->top_min, h), rows_of(band->top_max, h));
      for (auto i = top; i < h; ++i) {
        for (std::int64_t j = 0; j < w; ++j) map.at(i, j) = static_cast<std::uint8_t>(band->cls);
      }
      continue;
    }
    const auto& rect = std::get<RectRule>(rule);
    // The presence draw is always consumed so that stream positions do not
    // depend on earlier outcomes.
    const bool present = uniform01(engine) < rect.presence;
    const auto rh = std::max<std::int64_t>(
        1, uniform_int(engine, rows_of(rect.height_min, h), rows_of(rect.height_max, h)));
    const auto rw = std::max<std::int64_t>(
        1, uniform_int(engine, rows_of(rect.width_min, w), rows_of(rect.width_max, w)));
    const auto top = uniform_int(engine, rows_of(rect.top_min, h), rows_of(rect.top_max, h));
    const auto left = uniform_int(engine, rows_of(rect.left_min, w), rows_of(rect.left_max, w));
    if (!present) continue;
    for (auto i = top; i < std::min(h, top + rh); ++i) {
      for (auto j = left; j < std::min(w, left + rw); ++j) {
        map.at(i, j) = static_cast<std::uint8_t>(rect.cls);
      }
    }
  }
  return map;
}

torch::Tensor render_scene(const ToyWorldSpec& spec, const SegMap& segmap,
                           std::mt19937_64& engine) {
  auto image = torch::empty({3, segmap.height, segmap.width}, torch::kFloat32);
  auto acc = image.accessor<float, 3>();
  for (std::int64_t i = 0; i < segmap.height; ++i) {
    for (std::int64_t j = 0; j < segmap.width; ++j) {
      const auto& color = spec.class_colors[segmap.at(i, j)];
      for (int c = 0; c < 3; ++c) {
        const double noise = (2.0 * uniform01(engine) - 1.0) * kNoiseAmplitude;
        const double v = static_cast<double>(color[c]) / 255.0 + noise;
        acc[c][i][j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return image;
}

Dataset generate_toy_dataset(const ToyWorldSpec& spec, std::size_t n, std::uint64_t seed,
                             Split split) {
  spec.validate();
  if (n < 1) fail(ErrorKind::Argument, "generate_toy_dataset needs n >= 1");
  Dataset ds;
  ds.split = split;
  ds.num_classes = spec.num_classes;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.samples.reserve(n);
  const auto split_tag = static_cast<std::uint64_t>(split);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 engine(mix_seed(mix_seed(spec.seed, seed, split_tag), i));
    auto segmap = sample_layout(spec, engine);
    auto image = render_scene(spec, segmap, engine);
    ds.samples.push_back({std::move(image), std::move(segmap)});
  }
  return ds;
}

torch::Tensor one_hot(const SegMap& segmap) {
  return one_hot(segmap.to_tensor().unsqueeze(0), segmap.num_classes).squeeze(0);
}

torch::Tensor one_hot(const torch::Tensor& labels, int num_classes) {
  if (labels.dim() != 3) fail(ErrorKind::Argument, "one_hot expects N x H x W labels");
  auto idx = labels.to(torch::kInt64);
  auto out = torch::zeros({labels.size(0), num_classes, labels.size(1), labels.size(2)},
                          torch::kFloat32);
  return out.scatter_(1, idx.unsqueeze(1), 1.0);
}

SegMap downsample_labels(const SegMap& segmap, int factor) {
  if (factor < 1 || segmap.height % factor != 0 || segmap.width % factor != 0) {
    fail(ErrorKind::Argument, "downsample factor must divide both map dimensions");
  }
  SegMap out(segmap.height / factor, segmap.width / factor, segmap.num_classes);
  for (std::int64_t i = 0; i < out.height; ++i) {
    for (std::int64_t j = 0; j < out.width; ++j) out.at(i, j) = segmap.at(i * factor, j * factor);
  }
  return out;
}

torch::Tensor downsample_labels(const torch::Tensor& labels, int factor) {
  const auto h = labels.size(-2), w = labels.size(-1);
  if (factor < 1 || h % factor != 0 || w % factor != 0) {
    fail(ErrorKind::Argument, "downsample factor must divide both map dimensions");
  }
  return labels.slice(-2, 0, h, factor).slice(-1, 0, w, factor).contiguous();
}

std::vector<double> class_histogram(std::span<const SegMap> maps) {
  if (maps.empty()) fail(ErrorKind::Argument, "class_histogram needs at least one map");
  const int k = maps.front().num_classes;
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  double total = 0.0;
  for (const auto& m : maps) {
    if (m.num_classes != k) fail(ErrorKind::Argument, "maps disagree on class count");
    for (auto v : m.labels) counts[v] += 1.0;
    total += static_cast<double>(m.labels.size());
  }
  for (auto& c : counts) c /= total;
  return counts;
}

std::vector<double> class_histogram(const torch::Tensor& labels, int num_classes) {
  if (labels.numel() == 0) fail(ErrorKind::Argument, "class_histogram needs at least one map");
  auto counts = torch::bincount(labels.reshape({-1}).to(torch::kInt64), {}, num_classes)
                    .to(torch::kFloat64);
  counts = counts / static_cast<double>(labels.numel());
  std::vector<double> out(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) out[k] = counts[k].item<double>();
  return out;
}

DatasetTensors to_tensors(const Dataset& dataset) {
  if (dataset.samples.empty()) fail(ErrorKind::Argument, "dataset is empty");
  std::vector<torch::Tensor> images, labels;
  images.reserve(dataset.size());
  labels.reserve(dataset.size());
  for (const auto& s : dataset.samples) {
    images.push_back(s.image);
    labels.push_back(s.segmap.to_tensor());
  }
  return {torch::stack(images), torch::stack(labels)};
}

torch::Tensor colorize(const torch::Tensor& labels, const std::vector<Color>& palette) {
  auto table = torch::empty({static_cast<std::int64_t>(palette.size()), 3}, torch::kFloat32);
  for (std::size_t k = 0; k < palette.size(); ++k) {
    for (int c = 0; c < 3; ++c) table[k][c] = static_cast<float>(palette[k][c]) / 255.0f;
  }
  auto rgb = table.index_select(0, labels.reshape({-1}).to(torch::kInt64));
  auto shape = labels.sizes().vec();
  shape.push_back(3);
  rgb = rgb.reshape(shape);
  // ... x H x W x 3 -> ... x 3 x H x W
  return rgb.movedim(-1, -3).contiguous();
}

torch::Tensor decolorize(const torch::Tensor& image, const std::vector<Color>& palette) {
  if (image.dim() != 3 || image.size(0) != 3) fail(ErrorKind::Argument, "decolorize expects 3 x H x W");
  auto bytes = image.mul(255.0).round().to(torch::kInt64);
  auto code = bytes[0] * 65536 + bytes[1] * 256 + bytes[2];
  auto out = torch::full(code.sizes(), -1, torch::kInt64);
  for (std::size_t k = 0; k < palette.size(); ++k) {
    const std::int64_t key = palette[k][0] * 65536 + palette[k][1] * 256 + palette[k][2];
    out.masked_fill_(code == key, static_cast<std::int64_t>(k));
  }
  if ((out < 0).any().item<bool>()) fail(ErrorKind::Argument, "pixel color not in palette");
  return out;
}

void save_dataset(const std::filesystem::path& root, const Dataset& train, const Dataset& val,
                  const DatasetMeta& meta) {
  namespace fs = std::filesystem;
  const std::vector<io::PngText> text = {{"config_hash", meta.config_hash}};
  for (const Dataset* ds : {&train, &val}) {
    const auto base = root / std::string(split_name(ds->split));
    fs::create_directories(base / "img");
    fs::create_directories(base / "seg");
    for (std::size_t i = 0; i < ds->size(); ++i) {
      const auto& s = ds->samples[i];
      io::write_rgb_png(base / "img" / (file_stem(i) + ".png"), s.image, text);
      io::write_gray_png(base / "seg" / (file_stem(i) + ".png"),
                         {s.segmap.height, s.segmap.width, s.segmap.labels}, text);
    }
  }
  nlohmann::json j;
  j["K"] = meta.num_classes;
  j["H"] = meta.height;
  j["W"] = meta.width;
  j["class_colors"] = meta.class_colors;
  j["spec_seed"] = meta.spec_seed;
  j["data_seed"] = meta.data_seed;
  j["n_train"] = meta.n_train;
  j["n_val"] = meta.n_val;
  j["config_hash"] = meta.config_hash;
  std::ofstream out(root / "meta.json");
  if (!out) fail(ErrorKind::Io, "cannot write meta.json under '" + root.string() + "'");
  out << j.dump(2) << "\n";
}

DatasetMeta load_meta(const std::filesystem::path& root) {
  std::ifstream in(root / "meta.json");
  if (!in) fail(ErrorKind::Io, "missing '" + (root / "meta.json").string() + "'");
  nlohmann::json j;
  try {
    in >> j;
    DatasetMeta meta;
    meta.num_classes = j.at("K").get<int>();
    meta.height = j.at("H").get<std::int64_t>();
    meta.width = j.at("W").get<std::int64_t>();
    meta.class_colors = j.at("class_colors").get<std::vector<Color>>();
    meta.spec_seed = j.at("spec_seed").get<std::uint64_t>();
    meta.data_seed = j.at("data_seed").get<std::uint64_t>();
    meta.n_train = j.at("n_train").get<std::size_t>();
    meta.n_val = j.at("n_val").get<std::size_t>();
    meta.config_hash = j.value("config_hash", "");
    return meta;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Load, std::string("malformed meta.json: ") + e.what());
  }
}

Dataset load_split(const std::filesystem::path& root, Split split) {
  const auto meta = load_meta(root);
  const auto base = root / std::string(split_name(split));
  if (!std::filesystem::is_directory(base / "img") || !std::filesystem::is_directory(base / "seg")) {
    fail(ErrorKind::Argument, "missing split directory '" + base.string() + "'");
  }
  const auto n = split == Split::Train ? meta.n_train : meta.n_val;
  Dataset ds;
  ds.split = split;
  ds.num_classes = meta.num_classes;
  ds.height = meta.height;
  ds.width = meta.width;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto image = io::read_rgb_png(base / "img" / (file_stem(i) + ".png"));
    auto gray = io::read_gray_png(base / "seg" / (file_stem(i) + ".png"));
    SegMap m(gray.height, gray.width, meta.num_classes);
    m.labels = std::move(gray.pixels);
    m.validate();
    if (image.size(1) != m.height || image.size(2) != m.width || m.height != meta.height ||
        m.width != meta.width) {
      fail(ErrorKind::Load, "sample " + file_stem(i) + " has mismatched dimensions");
    }
    ds.samples.push_back({std::move(image), std::move(m)});
  }
  return ds;
}

BatchSampler::BatchSampler(std::int64_t dataset_size, std::int64_t batch_size, std::uint64_t seed)
    : size_(dataset_size), batch_(batch_size), seed_(seed) {
  if (size_ < 1) fail(ErrorKind::Argument, "cannot sample batches from an empty dataset");
  if (batch_ < 1) fail(ErrorKind::Config, "batch size must be >= 1");
}

torch::Tensor BatchSampler::indices(std::int64_t step) {
  auto out = torch::empty({batch_}, torch::kInt64);
  auto* p = out.data_ptr<std::int64_t>();
  for (std::int64_t b = 0; b < batch_; ++b) {
    const auto flat = step * batch_ + b;
    const auto epoch = flat / size_;
    if (epoch != cached_epoch_) {
      permutation_.resize(static_cast<std::size_t>(size_));
      std::iota(permutation_.begin(), permutation_.end(), 0);
      std::mt19937_64 engine(mix_seed(seed_, static_cast<std::uint64_t>(epoch), 0xba7c));
      for (auto i = size_ - 1; i > 0; --i) {
        std::swap(permutation_[i], permutation_[uniform_int(engine, 0, i)]);
      }
      cached_epoch_ = epoch;
    }
    p[b] = permutation_[static_cast<std::size_t>(flat % size_)];
  }
  return out;
}

}  // namespace sbgan::data
