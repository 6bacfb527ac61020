#include <fstream>

#include "doctest.h"
#include "sbgan/checkpoint.hpp"
#include "sbgan/config.hpp"
#include "sbgan/image_io.hpp"
#include "sbgan/metrics.hpp"
#include "sbgan/rng.hpp"
#include "support.hpp"

using namespace sbgan;
using testing::bit_equal;
using testing::temp_dir;

namespace {

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("png: rgb round trip is exact on the 1/255 grid, with text chunks") {
  const auto dir = temp_dir("png");
  const auto img = torch::randint(0, 256, {3, 5, 7}, make_generator(1)).to(torch::kFloat32) / 255.0;
  io::write_rgb_png(dir / "a.png", img, {{"config_hash", "abc"}, {"step", "12"}});
  const auto back = io::read_rgb_png(dir / "a.png");
  CHECK(back.sizes() == img.sizes());
  CHECK((back - img).abs().max().item<float>() <= 1e-6f);
  const auto text = io::read_png_text(dir / "a.png");
  REQUIRE(text.size() == 2);
  CHECK(text[0].key == "config_hash");
  CHECK(text[0].value == "abc");
  CHECK(text[1].value == "12");

  // out-of-range values clamp, off-grid values round to nearest
  const auto off = torch::tensor({-1.0f, 2.0f, 0.5f}).view({3, 1, 1});
  io::write_rgb_png(dir / "b.png", off);
  const auto ob = io::read_rgb_png(dir / "b.png");
  CHECK(ob[0][0][0].item<float>() == 0.0f);
  CHECK(ob[1][0][0].item<float>() == 1.0f);
  CHECK(ob[2][0][0].item<float>() == doctest::Approx(128.0 / 255.0));

  CHECK_THROWS_KIND(io::write_rgb_png(dir / "c.png", torch::zeros({1, 4, 4})), ErrorKind::Argument);
  CHECK_THROWS_KIND(io::read_rgb_png(dir / "missing.png"), ErrorKind::Io);
}

TEST_CASE("png: gray round trip and size validation") {
  const auto dir = temp_dir("gray");
  io::GrayImage g{2, 3, {0, 1, 2, 3, 4, 255}};
  io::write_gray_png(dir / "g.png", g);
  const auto back = io::read_gray_png(dir / "g.png");
  CHECK(back.height == 2);
  CHECK(back.width == 3);
  CHECK(back.pixels == g.pixels);
  io::GrayImage bad{2, 3, {0, 1}};
  CHECK_THROWS_KIND(io::write_gray_png(dir / "h.png", bad), ErrorKind::Argument);
}

TEST_CASE("make_grid: row-major tiling with zero fill") {
  const auto imgs = torch::arange(5, torch::kFloat32).view({5, 1, 1, 1}).expand({5, 1, 2, 2}).contiguous();
  const auto grid = io::make_grid(imgs, 2);
  CHECK(grid.sizes() == torch::IntArrayRef({1, 6, 4}));
  CHECK(grid[0][0][0].item<float>() == 0.0f);
  CHECK(grid[0][0][2].item<float>() == 1.0f);
  CHECK(grid[0][2][0].item<float>() == 2.0f);
  CHECK(grid[0][4][0].item<float>() == 4.0f);
  CHECK(grid[0][4][2].item<float>() == 0.0f);
  CHECK(io::make_grid(imgs, 100).sizes() == torch::IntArrayRef({1, 2, 10}));
  CHECK_THROWS_KIND(io::make_grid(torch::zeros({2, 2, 2}), 2), ErrorKind::Argument);
}

TEST_CASE("format_number: round-trips doubles") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789, 0.0}) {
    CHECK(std::stod(format_number(v)) == v);
  }
}

TEST_CASE("CsvLog: comment, header, rows, append and truncation") {
  const auto dir = temp_dir("csv");
  const auto path = dir / "m.csv";
  {
    CsvLog log(path, {"step", "loss"}, "h1");
    for (int s = 1; s <= 4; ++s) log.write_row({std::to_string(s), format_number(s * 0.5)});
    CHECK_THROWS_KIND(log.write_row({"1"}), ErrorKind::Argument);
  }
  auto lines = lines_of(path);
  REQUIRE(lines.size() == 6);
  CHECK(lines[0] == "# config_hash=h1");
  CHECK(lines[1] == "step,loss");
  CHECK(lines[5] == "4,2");

  CsvLog::truncate_after(path, 2);
  lines = lines_of(path);
  REQUIRE(lines.size() == 4);
  CHECK(lines[3] == "2,1");
  {
    CsvLog log(path, {"step", "loss"}, "h1", true);
    log.write_row({"3", "9"});
  }
  lines = lines_of(path);
  REQUIRE(lines.size() == 5);
  CHECK(lines[4] == "3,9");
  // without append the file starts over
  { CsvLog log(path, {"step", "loss"}, "h2"); }
  lines = lines_of(path);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "# config_hash=h2");
}

TEST_CASE("config: defaults, partial override, unknown keys, bad types") {
  const auto def = config::parse("{}");
  CHECK(def.data.num_classes == 6);
  CHECK(def.seg.num_stages == 4);
  const auto c = config::parse(R"({"data": {"num_classes": 4}, "spade": {"steps": 7}})");
  CHECK(c.data.num_classes == 4);
  CHECK(c.data.height == 32);
  CHECK(c.spade.steps == 7);
  CHECK_THROWS_KIND(config::parse(R"({"data": {"num_clases": 4}})"), ErrorKind::Config);
  CHECK_THROWS_KIND(config::parse(R"({"extra": 1})"), ErrorKind::Config);
  CHECK_THROWS_KIND(config::parse(R"({"data": {"num_classes": "four"}})"), ErrorKind::Config);
  CHECK_THROWS_KIND(config::parse("[1, 2]"), ErrorKind::Config);
  CHECK_THROWS_KIND(config::parse("{not json"), ErrorKind::Config);
  CHECK_THROWS_KIND(config::load("/nonexistent/config.json"), ErrorKind::Config);
}

TEST_CASE("config: dump round trip and hashing") {
  auto c = config::parse(R"({"seg": {"lr": 0.002}})");
  const auto text = config::dump(c);
  CHECK(config::dump(config::parse(text)) == text);
  CHECK(config::config_hash(c) == config::config_hash(config::parse(text)));
  CHECK(config::config_hash(c).size() == 16);
  // FNV-1a 64 reference values
  CHECK(config::hash_text("") == "cbf29ce484222325");
  CHECK(config::hash_text("a") == "af63dc4c8601ec8c");

  auto d = c;
  d.seg.lr = 0.003;
  CHECK(config::config_hash(c) != config::config_hash(d));
  CHECK(config::section_hash(c, {"data"}) == config::section_hash(d, {"data"}));
  CHECK(config::section_hash(c, {"seg"}) != config::section_hash(d, {"seg"}));
}

TEST_CASE("config: builders map sections onto module options") {
  auto c = config::parse(R"({"data": {"num_classes": 5, "height": 16, "width": 32},
                             "seg": {"num_stages": 3}, "finetune": {"ft_sb": false, "ft_spade": false}})");
  const auto seg = config::seg_net_options(c);
  CHECK(seg.num_classes == 5);
  CHECK(seg.base.height == 4);
  CHECK(seg.base.width == 8);
  CHECK(seg.num_stages == 3);
  CHECK(config::finetune_config(c).baseline);
  CHECK(config::toy_spec(c).num_classes == 5);
  c.data.height = 18;
  CHECK_THROWS_KIND(config::seg_net_options(c), ErrorKind::Config);
}

TEST_CASE("checkpoint: module and optimizer round trip, metadata, error paths") {
  const auto dir = temp_dir("ckpt");
  torch::nn::Linear a(3, 2), b(3, 2);
  init_parameters(*a, 1);
  init_parameters(*b, 2);
  torch::optim::Adam opt(a->parameters(), torch::optim::AdamOptions(1e-3));
  a(torch::ones({1, 3})).sum().backward();
  opt.step();

  CheckpointMeta meta{"seg", "0123456789abcdef", "{}", 42, 2, 0.25};
  CheckpointWriter w(meta);
  w.add("net", *a);
  w.add("opt", opt);
  w.save(dir / "x.ckpt");
  CHECK_FALSE(std::filesystem::exists(dir / "x.ckpt.tmp"));

  CheckpointReader r(dir / "x.ckpt", "0123456789abcdef");
  CHECK(r.meta().kind == "seg");
  CHECK(r.meta().step == 42);
  CHECK(r.meta().stage == 2);
  CHECK(r.meta().alpha == 0.25);
  CHECK(r.has_module("net"));
  CHECK_FALSE(r.has_module("other"));
  CHECK(r.has_optimizer("opt"));
  r.load("net", *b);
  CHECK(bit_equal(flat_parameters(*a), flat_parameters(*b)));
  torch::optim::Adam opt2(b->parameters(), torch::optim::AdamOptions(1e-3));
  r.load("opt", opt2);
  // identical next steps prove the moment estimates came back
  a->zero_grad();
  b->zero_grad();
  a(torch::ones({1, 3})).sum().backward();
  b(torch::ones({1, 3})).sum().backward();
  opt.step();
  opt2.step();
  CHECK(bit_equal(flat_parameters(*a), flat_parameters(*b)));

  CHECK_THROWS_KIND(r.load("other", *b), ErrorKind::Load);
  CHECK_THROWS_KIND(r.load("missing", opt2), ErrorKind::Load);
  torch::nn::Linear wrong(4, 2);
  const auto before = flat_parameters(*wrong);
  CHECK_THROWS_KIND(r.load("net", *wrong), ErrorKind::Load);
  CHECK(bit_equal(flat_parameters(*wrong), before));
  CHECK_THROWS_KIND(CheckpointReader(dir / "x.ckpt", "ffffffffffffffff"), ErrorKind::Load);
  CHECK_THROWS_KIND(CheckpointReader(dir / "none.ckpt"), ErrorKind::Load);
  {
    std::ofstream junk(dir / "junk.ckpt", std::ios::binary);
    junk << "not a checkpoint";
  }
  CHECK_THROWS_KIND(CheckpointReader(dir / "junk.ckpt"), ErrorKind::Load);
  CheckpointWriter w2(meta);
  w2.add("net", *a);
  w2.save(dir / "y.ckpt");
  // a regular file where a directory should be
  CHECK_THROWS_KIND(w2.save(dir / "y.ckpt" / "q.ckpt"), ErrorKind::Io);
}
