#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <torch/torch.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "sbgan/checkpoint.hpp"
#include "sbgan/config.hpp"
#include "sbgan/data.hpp"
#include "sbgan/end2end.hpp"
#include "sbgan/errors.hpp"
#include "sbgan/eval.hpp"
#include "sbgan/image_io.hpp"
#include "sbgan/metrics.hpp"
#include "sbgan/rng.hpp"

namespace fs = std::filesystem;
using namespace sbgan;

namespace {

struct Common {
  std::string workdir = ".";
  std::string config_path;
  std::vector<std::string> overrides;
  bool deterministic = false;
  std::string device = "cpu";
};

struct RunFlags {
  bool force = false;
  bool resume = false;
  std::optional<std::int64_t> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> stop_after;
  bool from_scratch = false;
  bool ablate = false;
};

struct SampleFlags {
  std::string checkpoint = "checkpoints/sbgan.ckpt";
  std::int64_t n = 16;
  std::uint64_t seed = 0;
  std::string out = "samples/sample";
};

struct EvalFlags {
  std::string checkpoint = "checkpoints/sbgan.ckpt";
  std::string out = "eval.json";
  bool gt_conditioning = false;
  std::optional<std::uint64_t> seed;
};

fs::path under(const Common& c, const fs::path& p) { return p.is_absolute() ? p : fs::path(c.workdir) / p; }

// --set a.b=value; value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) fail(ErrorKind::Argument, "--set expects key.path=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const auto key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) fail(ErrorKind::Config, "unknown config key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

config::RunConfig resolve_config(const Common& c) {
  config::RunConfig cfg;
  if (!c.config_path.empty()) {
    cfg = config::load(under(c, c.config_path).string());
  } else if (fs::exists(under(c, "config.json"))) {
    cfg = config::load(under(c, "config.json").string());
  }
  if (!c.overrides.empty()) {
    nlohmann::json j = cfg;
    for (const auto& o : c.overrides) apply_override(j, o);
    cfg = config::parse(j.dump());
  }
  return cfg;
}

void setup_runtime(const Common& c) {
  if (c.device != "cpu") fail(ErrorKind::Argument, "unsupported device '" + c.device + "' (this build is CPU-only)");
  const char* env = std::getenv("SBGAN_DETERMINISTIC");
  if (c.deterministic || (env && std::string(env) == "1")) {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, false);
  }
}

fs::path data_root(const Common& c) { return under(c, "data"); }

void check_dataset(const Common& c, const config::RunConfig& cfg) {
  const auto root = data_root(c);
  if (!fs::exists(root / "meta.json")) {
    fail(ErrorKind::Argument, "no dataset at " + root.string() + " (run make-toy-data first)");
  }
  const auto meta = data::load_meta(root);
  const auto expected = config::section_hash(cfg, {"data"});
  if (meta.config_hash != expected) {
    fail(ErrorKind::Load, "dataset at " + root.string() + " was made with data config " + meta.config_hash +
                              ", current data config is " + expected);
  }
}

data::Dataset load_split_checked(const Common& c, const config::RunConfig& cfg, data::Split split) {
  check_dataset(c, cfg);
  const auto dir = data_root(c) / std::string(data::split_name(split));
  if (!fs::exists(dir)) fail(ErrorKind::Argument, "missing " + std::string(data::split_name(split)) + " split at " + dir.string());
  return data::load_split(data_root(c), split);
}

CheckpointMeta make_meta(const std::string& kind, const config::RunConfig& cfg, std::int64_t step, int stage = 0,
                         double alpha = 1.0) {
  return {kind, config::config_hash(cfg), config::dump(cfg), step, stage, alpha};
}

// Prerequisites must come from a run over the same data and architecture.
void check_prerequisite(const CheckpointReader& r, const config::RunConfig& cfg,
                        const std::vector<std::string>& sections, const fs::path& path) {
  const auto theirs = config::section_hash(config::parse(r.meta().config_json), sections);
  const auto ours = config::section_hash(cfg, sections);
  if (theirs != ours) {
    fail(ErrorKind::Load, "config hash mismatch for " + path.string() + ": checkpoint sections hash " + theirs +
                              ", current config hashes " + ours);
  }
}

void prepare_output(const fs::path& ckpt, const fs::path& csv, const RunFlags& f) {
  if (fs::exists(ckpt) && !f.resume && !f.force) {
    fail(ErrorKind::State, "checkpoint " + ckpt.string() + " exists; pass --resume to continue or --force to restart");
  }
  if (f.resume && !fs::exists(ckpt)) fail(ErrorKind::Load, "cannot resume: checkpoint not found: " + ckpt.string());
  if (!f.resume && fs::exists(csv)) fs::remove(csv);
}

std::string step_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%06lld.png", static_cast<long long>(step));
  return buf;
}

std::vector<io::PngText> png_text(const config::RunConfig& cfg) { return {{"config_hash", config::config_hash(cfg)}}; }

std::int64_t stop_point(const RunFlags& f, std::int64_t total) {
  return f.stop_after ? std::min(*f.stop_after, total) : total;
}

// Runs `trainer` to its stop point in chunks that end on checkpoint and
// sample boundaries.
template <typename Trainer, typename Row>
void drive(Trainer& trainer, std::int64_t until, std::int64_t checkpoint_interval, std::int64_t sample_interval,
           const std::function<void(const Row&)>& on_log, const std::function<void()>& save,
           const std::function<void(std::int64_t)>& sample) {
  while (trainer.step() < until) {
    std::int64_t next = until;
    for (auto interval : {checkpoint_interval, sample_interval}) {
      if (interval > 0) next = std::min(next, (trainer.step() / interval + 1) * interval);
    }
    trainer.run(next, on_log);
    const auto s = trainer.step();
    if (sample_interval > 0 && s % sample_interval == 0) sample(s);
    if (checkpoint_interval > 0 && s % checkpoint_interval == 0 && s < until) save();
  }
  save();
}

// ---- make-toy-data

int cmd_make_toy_data(const Common& c, const RunFlags& f) {
  auto cfg = resolve_config(c);
  if (f.seed) cfg.data.seed = *f.seed;
  const auto root = data_root(c);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!f.force) fail(ErrorKind::State, "target " + root.string() + " exists and is not empty (use --force)");
    fs::remove_all(root);
  }
  const auto spec = config::toy_spec(cfg);
  const auto train = data::generate_toy_dataset(spec, cfg.data.n_train, cfg.data.seed, data::Split::Train);
  const auto val = data::generate_toy_dataset(spec, cfg.data.n_val, cfg.data.seed, data::Split::Val);
  data::DatasetMeta meta{spec.num_classes,  spec.height,       spec.width,       spec.class_colors,
                         spec.seed,         cfg.data.seed,     cfg.data.n_train, cfg.data.n_val,
                         config::section_hash(cfg, {"data"})};
  data::save_dataset(root, train, val, meta);
  std::cout << "wrote " << train.size() << " train and " << val.size() << " val samples to " << root.string() << "\n";
  return 0;
}

// ---- train-seg

int cmd_train_seg(const Common& c, const RunFlags& f) {
  auto cfg = resolve_config(c);
  if (f.steps) cfg.seg.steps_per_stage = *f.steps;
  if (f.seed) cfg.seg.seed = *f.seed;
  const auto train = load_split_checked(c, cfg, data::Split::Train);
  const auto tensors = data::to_tensors(train);
  const auto ckpt = under(c, "checkpoints/seg.ckpt");
  const auto csv = under(c, "metrics/seg.csv");
  prepare_output(ckpt, csv, f);

  auto models = config::build_models(cfg);
  seggen::SegTrainer trainer(models.g_sb, models.d_sb, tensors.labels, config::seg_schedule(cfg),
                             config::seg_train_config(cfg));
  const auto hash = config::config_hash(cfg);
  if (f.resume) {
    CheckpointReader r(ckpt, hash);
    r.load("g_sb", *models.g_sb);
    r.load("d_sb", *models.d_sb);
    r.load("g_sb", trainer.generator_optimizer());
    r.load("d_sb", trainer.critic_optimizer());
    trainer.restore_step(r.meta().step);
    CsvLog::truncate_after(csv, r.meta().step);
  }
  CsvLog log(csv, {"step", "stage", "alpha", "critic_loss", "gen_loss", "gp", "hist_kl"}, hash, f.resume);
  const auto palette = config::toy_spec(cfg).class_colors;
  const auto gumbel = config::gumbel_config(cfg);
  const auto until = stop_point(f, trainer.total_steps());

  auto save = [&] {
    CheckpointWriter w(make_meta("seg", cfg, trainer.step(), models.g_sb->stage(), models.g_sb->alpha()));
    w.add("g_sb", *models.g_sb);
    w.add("d_sb", *models.d_sb);
    w.add("g_sb", trainer.generator_optimizer());
    w.add("d_sb", trainer.critic_optimizer());
    w.save(ckpt);
  };
  auto sample = [&](std::int64_t step) {
    torch::NoGradGuard ng;
    const auto labels = end2end::sample_labels(models.g_sb, 16, mix_seed(cfg.seg.seed, 0x5a), gumbel);
    io::write_rgb_png(under(c, "samples/seg") / step_name(step), io::make_grid(data::colorize(labels, palette), 4),
                      png_text(cfg));
  };
  fs::create_directories(under(c, "samples/seg"));
  drive<seggen::SegTrainer, seggen::SegMetricsRow>(
      trainer, until, cfg.seg.checkpoint_interval, cfg.seg.sample_interval,
      [&](const seggen::SegMetricsRow& r) {
        log.write_row({std::to_string(r.step), std::to_string(r.stage), format_number(r.alpha),
                       format_number(r.critic_loss), format_number(r.gen_loss), format_number(r.gp),
                       format_number(r.hist_kl)});
      },
      save, sample);
  std::cout << "segmentation generator at step " << trainer.step() << "/" << trainer.total_steps() << "\n";
  return 0;
}

// ---- train-spade

int cmd_train_spade(const Common& c, const RunFlags& f) {
  auto cfg = resolve_config(c);
  if (f.steps) cfg.spade.steps = *f.steps;
  if (f.seed) cfg.spade.seed = *f.seed;
  const auto train = load_split_checked(c, cfg, data::Split::Train);
  const auto val = load_split_checked(c, cfg, data::Split::Val);
  const auto ckpt = under(c, "checkpoints/spade.ckpt");
  const auto csv = under(c, "metrics/spade.csv");
  prepare_output(ckpt, csv, f);

  auto models = config::build_models(cfg);
  imgsynth::SpadeTrainer trainer(models.g_spd, models.d_spd, models.fx, data::to_tensors(train),
                                 config::spade_train_config(cfg));
  const auto hash = config::config_hash(cfg);
  if (f.resume) {
    CheckpointReader r(ckpt, hash);
    r.load("g_spd", *models.g_spd);
    r.load("d_spd", *models.d_spd);
    r.load("g_spd", trainer.generator_optimizer());
    r.load("d_spd", trainer.discriminator_optimizer());
    trainer.restore_step(r.meta().step);
    CsvLog::truncate_after(csv, r.meta().step);
  }
  CsvLog log(csv, {"step", "d_loss", "g_adv", "perceptual", "feat_match", "g_total"}, hash, f.resume);
  const auto val_t = data::to_tensors(val);
  const auto n_show = std::min<std::int64_t>(8, val_t.labels.size(0));
  const auto until = stop_point(f, trainer.total_steps());

  auto save = [&] {
    CheckpointWriter w(make_meta("spade", cfg, trainer.step()));
    w.add("g_spd", *models.g_spd);
    w.add("d_spd", *models.d_spd);
    w.add("g_spd", trainer.generator_optimizer());
    w.add("d_spd", trainer.discriminator_optimizer());
    w.save(ckpt);
  };
  auto sample = [&](std::int64_t step) {
    torch::NoGradGuard ng;
    const auto labels = val_t.labels.slice(0, 0, n_show);
    auto z = cfg.spade.use_latent ? sample_latent(n_show, cfg.spade.latent_dim, mix_seed(cfg.spade.seed, 0x5a))
                                  : torch::Tensor();
    const auto fake = models.g_spd->forward(data::one_hot(labels, cfg.data.num_classes), z);
    const auto rows = torch::cat({data::colorize(labels, config::toy_spec(cfg).class_colors), fake,
                                  val_t.images.slice(0, 0, n_show)});
    io::write_rgb_png(under(c, "samples/spade") / step_name(step), io::make_grid(rows, n_show), png_text(cfg));
  };
  fs::create_directories(under(c, "samples/spade"));
  drive<imgsynth::SpadeTrainer, imgsynth::SpadeMetricsRow>(
      trainer, until, cfg.spade.checkpoint_interval, cfg.spade.sample_interval,
      [&](const imgsynth::SpadeMetricsRow& r) {
        log.write_row({std::to_string(r.step), format_number(r.d_loss), format_number(r.g_adv),
                       format_number(r.perceptual), format_number(r.feat_match), format_number(r.g_total)});
      },
      save, sample);
  std::cout << "image generator at step " << trainer.step() << "/" << trainer.total_steps() << "\n";
  return 0;
}

// ---- finetune

void load_pretrained(const Common& c, const config::RunConfig& cfg, end2end::SbganModels& m) {
  const auto seg_path = under(c, "checkpoints/seg.ckpt");
  const auto spade_path = under(c, "checkpoints/spade.ckpt");
  for (const auto& p : {seg_path, spade_path}) {
    if (!fs::exists(p)) {
      fail(ErrorKind::Load, "missing prerequisite checkpoint: expected " + p.string() +
                                " (train it first or pass --from-scratch)");
    }
  }
  CheckpointReader seg(seg_path);
  check_prerequisite(seg, cfg, {"data"}, seg_path);
  seg.load("g_sb", *m.g_sb);
  seg.load("d_sb", *m.d_sb);
  m.g_sb->set_progress(seg.meta().stage, seg.meta().alpha);
  m.d_sb->set_progress(seg.meta().stage, seg.meta().alpha);
  CheckpointReader spade(spade_path);
  check_prerequisite(spade, cfg, {"data"}, spade_path);
  spade.load("g_spd", *m.g_spd);
  spade.load("d_spd", *m.d_spd);
}

void set_final_stage(end2end::SbganModels& m) {
  const int last = m.g_sb->num_stages() - 1;
  m.g_sb->set_progress(last, 1.0);
  m.d_sb->set_progress(last, 1.0);
}

int cmd_finetune(const Common& c, const RunFlags& f) {
  auto cfg = resolve_config(c);
  if (f.steps) cfg.finetune.steps = *f.steps;
  if (f.seed) cfg.finetune.seed = *f.seed;
  const auto train = load_split_checked(c, cfg, data::Split::Train);
  auto models = config::build_models(cfg);
  set_final_stage(models);
  if (!f.from_scratch) load_pretrained(c, cfg, models);
  const auto hash = config::config_hash(cfg);

  if (f.ablate) {
    const auto val = load_split_checked(c, cfg, data::Split::Val);
    const auto embedder = eval::make_surrogate_embedder(cfg.eval.embedder_seed, cfg.eval.embedder_channels);
    const auto rows = end2end::run_ablation(models, data::to_tensors(train), val, config::finetune_config(cfg),
                                            *embedder, config::ablation_eval_config(cfg));
    end2end::write_ablation_csv(under(c, "ablation.csv"), rows, hash);
    for (const auto& r : rows) {
      std::cout << r.setting << ": fid=" << format_number(r.fid) << " hist_kl=" << format_number(r.hist_kl)
                << (r.freeze_verified ? "" : " (freeze check FAILED)") << "\n";
    }
    for (const auto& r : rows) {
      if (!r.freeze_verified) fail(ErrorKind::State, "frozen parameters changed in setting '" + r.setting + "'");
    }
    return 0;
  }

  const auto ckpt = under(c, "checkpoints/sbgan.ckpt");
  const auto csv = under(c, "metrics/finetune.csv");
  prepare_output(ckpt, csv, f);
  const auto ft_cfg = config::finetune_config(cfg);
  end2end::FineTuner trainer(models, data::to_tensors(train), ft_cfg);
  const std::vector<std::pair<std::string, torch::nn::Module*>> modules = {
      {"g_sb", models.g_sb.get()},   {"d_sb", models.d_sb.get()}, {"g_spd", models.g_spd.get()},
      {"d_spd", models.d_spd.get()}, {"d2", models.d2.get()}};
  const std::vector<std::pair<std::string, torch::optim::Optimizer*>> optims = {
      {"g_sb", &trainer.g_sb_optimizer()},   {"d_sb", &trainer.d_sb_optimizer()},
      {"g_spd", &trainer.g_spd_optimizer()}, {"d_spd", &trainer.d_spd_optimizer()},
      {"d2", &trainer.d2_optimizer()}};
  if (f.resume) {
    CheckpointReader r(ckpt, hash);
    for (auto& [name, m] : modules) r.load(name, *m);
    for (auto& [name, o] : optims) r.load(name, *o);
    trainer.restore_step(r.meta().step);
    CsvLog::truncate_after(csv, r.meta().step);
  }
  CsvLog log(csv, {"step", "d2_loss", "d_spd_loss", "d_sb_loss", "gp", "g_uncond", "l_g_spd", "l_g_sb", "l_g_total"},
             hash, f.resume);
  const auto until = stop_point(f, trainer.total_steps());
  auto save = [&] {
    CheckpointWriter w(make_meta("sbgan", cfg, trainer.step(), models.g_sb->stage(), models.g_sb->alpha()));
    for (auto& [name, m] : modules) w.add(name, *m);
    for (auto& [name, o] : optims) w.add(name, *o);
    w.save(ckpt);
  };
  auto sample = [&](std::int64_t step) {
    torch::NoGradGuard ng;
    const auto z = sample_latent(8, cfg.seg.latent_dim, mix_seed(cfg.finetune.seed, 0x5a));
    const auto s = end2end::compose_generate(models.g_sb, models.g_spd, z, ft_cfg.gumbel,
                                             mix_seed(cfg.finetune.seed, 0x5b));
    const auto rows = torch::cat({data::colorize(s.seg.labels, config::toy_spec(cfg).class_colors), s.image});
    io::write_rgb_png(under(c, "samples/finetune") / step_name(step), io::make_grid(rows, 8), png_text(cfg));
  };
  fs::create_directories(under(c, "samples/finetune"));
  drive<end2end::FineTuner, end2end::FineTuneMetricsRow>(
      trainer, until, cfg.finetune.checkpoint_interval, cfg.spade.sample_interval,
      [&](const end2end::FineTuneMetricsRow& r) {
        log.write_row({std::to_string(r.step), format_number(r.d2_loss), format_number(r.d_spd_loss),
                       format_number(r.d_sb_loss), format_number(r.gp), format_number(r.g_uncond),
                       format_number(r.l_g_spd), format_number(r.l_g_sb), format_number(r.l_g_total)});
      },
      save, sample);
  std::cout << "fine-tuning at step " << trainer.step() << "/" << trainer.total_steps() << "\n";
  return 0;
}

// ---- sample / eval

struct LoadedRun {
  config::RunConfig cfg;
  end2end::SbganModels models;
  std::string kind;
  std::string hash;
};

LoadedRun load_run(const fs::path& path) {
  CheckpointReader r(path);
  LoadedRun run{config::parse(r.meta().config_json), {}, r.meta().kind, r.meta().config_hash};
  if (config::config_hash(run.cfg) != run.hash) {
    fail(ErrorKind::Load, "config hash mismatch in " + path.string() + ": stored " + run.hash + ", recomputed " +
                              config::config_hash(run.cfg));
  }
  run.models = config::build_models(run.cfg);
  if (r.has_module("g_sb")) {
    r.load("g_sb", *run.models.g_sb);
    run.models.g_sb->set_progress(r.meta().stage, r.meta().alpha);
  }
  if (r.has_module("g_spd")) r.load("g_spd", *run.models.g_spd);
  run.models.g_sb->eval();
  run.models.g_spd->eval();
  return run;
}

int cmd_sample(const Common& c, const SampleFlags& f) {
  if (f.n < 1) fail(ErrorKind::Argument, "--n must be >= 1");
  auto run = load_run(under(c, f.checkpoint));
  if (run.kind == "spade") fail(ErrorKind::Argument, "sampling needs a segmentation generator (seg or sbgan checkpoint)");
  torch::NoGradGuard ng;
  const auto gumbel = config::gumbel_config(run.cfg);
  const auto palette = config::toy_spec(run.cfg).class_colors;
  const auto columns = std::min<std::int64_t>(f.n, 8);
  const std::vector<io::PngText> text = {{"config_hash", run.hash}, {"seed", std::to_string(f.seed)}};
  const auto out = under(c, f.out);
  fs::create_directories(out);
  torch::Tensor labels;
  if (run.kind == "sbgan") {
    const auto z = sample_latent(f.n, run.cfg.seg.latent_dim, mix_seed(f.seed, 0));
    const auto s = end2end::compose_generate(run.models.g_sb, run.models.g_spd, z, gumbel, mix_seed(f.seed, 1));
    labels = s.seg.labels;
    io::write_rgb_png(out / "images.png", io::make_grid(s.image, columns), text);
  } else {
    labels = end2end::sample_labels(run.models.g_sb, f.n, f.seed, gumbel);
  }
  io::write_rgb_png(out / "segmaps.png", io::make_grid(data::colorize(labels, palette), columns), text);
  std::cout << "wrote " << f.n << " samples to " << out.string() << "\n";
  return 0;
}

int cmd_eval(const Common& c, const EvalFlags& f) {
  auto run = load_run(under(c, f.checkpoint));
  auto& cfg = run.cfg;
  if (f.seed) cfg.eval.seed = *f.seed;
  const auto val_dir = data_root(c) / "val";
  if (!fs::exists(val_dir)) fail(ErrorKind::Argument, "missing val split at " + val_dir.string());
  const auto val = load_split_checked(c, cfg, data::Split::Val);
  const auto val_t = data::to_tensors(val);
  const auto embedder = eval::make_surrogate_embedder(cfg.eval.embedder_seed, cfg.eval.embedder_channels);
  const auto gumbel = config::gumbel_config(cfg);

  nlohmann::json report;
  report["config_hash"] = run.hash;
  report["checkpoint_kind"] = run.kind;
  nlohmann::json metrics = nlohmann::json::array();
  if (run.kind == "sbgan") {
    const auto n = std::min<std::int64_t>(cfg.eval.n_per_trial, val_t.images.size(0));
    const auto fid = eval::evaluate_fid(end2end::composed_sampler(run.models, gumbel), val_t.images, *embedder, n,
                                        cfg.eval.trials, cfg.eval.seed);
    metrics.push_back({{"metric", "fid"},
                       {"mean", fid.mean},
                       {"trials", fid.trials},
                       {"n_per_trial", fid.n_per_trial},
                       {"seed", fid.seed},
                       {"embedder_id", fid.embedder_id}});
  }
  if (run.kind != "spade") {
    torch::NoGradGuard ng;
    const auto labels = end2end::sample_labels(run.models.g_sb, cfg.eval.layout_samples, cfg.eval.seed, gumbel);
    std::vector<data::SegMap> generated;
    for (std::int64_t i = 0; i < labels.size(0); ++i) {
      generated.push_back(data::SegMap::from_tensor(labels[i], cfg.data.num_classes));
    }
    const auto real = val.segmaps();
    const auto ld = eval::layout_divergence(generated, real);
    nlohmann::json areas = nlohmann::json::array();
    for (std::size_t k = 0; k < ld.generated_areas.size(); ++k) {
      areas.push_back({{"class", k},
                       {"generated_mean", ld.generated_areas[k].mean},
                       {"generated_variance", ld.generated_areas[k].variance},
                       {"real_mean", ld.real_areas[k].mean},
                       {"real_variance", ld.real_areas[k].variance}});
    }
    metrics.push_back({{"metric", "layout_kl"},
                       {"mean", ld.kl_class_freq},
                       {"n_generated", labels.size(0)},
                       {"seed", cfg.eval.seed},
                       {"areas", areas}});
  }
  if (f.gt_conditioning || run.kind == "spade") {
    torch::NoGradGuard ng;
    auto& g = run.models.g_spd;
    const auto K = cfg.data.num_classes;
    const bool latent = cfg.spade.use_latent;
    const auto latent_dim = cfg.spade.latent_dim;
    const auto seed = cfg.eval.seed;
    std::int64_t offset = 0;
    const double fid = eval::eval_conditioned_on_gt(
        [&](const torch::Tensor& labels) {
          auto z = latent ? sample_latent(labels.size(0), latent_dim, mix_seed(seed, 0x67, offset)) : torch::Tensor();
          offset += labels.size(0);
          return g->forward(data::one_hot(labels, K), z);
        },
        val, *embedder);
    metrics.push_back({{"metric", "fid_gt_conditioned"},
                       {"mean", fid},
                       {"trials", {fid}},
                       {"n_per_trial", val.size()},
                       {"seed", seed},
                       {"embedder_id", embedder->id()}});
  }
  report["metrics"] = metrics;
  const auto out = under(c, f.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream os(out);
  if (!os) fail(ErrorKind::Io, "cannot write " + out.string());
  os << report.dump(2) << "\n";
  std::cout << report.dump(2) << "\n";
  return 0;
}

void add_run_flags(CLI::App* cmd, RunFlags& f, bool trainer) {
  cmd->add_flag("--force", f.force, "overwrite existing outputs");
  cmd->add_option("--seed", f.seed, "override the section seed");
  if (!trainer) return;
  cmd->add_option("--steps", f.steps, "override the step budget (steps per stage for train-seg)");
  cmd->add_option("--stop-after", f.stop_after, "stop after this many total steps and checkpoint");
  cmd->add_flag("--resume", f.resume, "continue from the existing checkpoint");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic-bottleneck GAN toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--workdir", common.workdir, "base directory for all paths")->capture_default_str();
  app.add_option("--config", common.config_path, "JSON config (default: <workdir>/config.json if present)");
  app.add_option("--set", common.overrides, "config override, key.path=value (repeatable)");
  app.add_flag("--deterministic", common.deterministic, "single-threaded deterministic kernels");
  app.add_option("--device", common.device, "compute device")->capture_default_str();

  RunFlags data_flags, seg_flags, spade_flags, ft_flags;
  SampleFlags sample_flags;
  EvalFlags eval_flags;
  auto* make = app.add_subcommand("make-toy-data", "generate the toy dataset under <workdir>/data");
  add_run_flags(make, data_flags, false);
  auto* seg = app.add_subcommand("train-seg", "train the segmentation generator");
  add_run_flags(seg, seg_flags, true);
  auto* spade = app.add_subcommand("train-spade", "train the conditional image generator");
  add_run_flags(spade, spade_flags, true);
  auto* ft = app.add_subcommand("finetune", "fine-tune both generators end to end");
  add_run_flags(ft, ft_flags, true);
  ft->add_flag("--from-scratch", ft_flags.from_scratch, "start from fresh weights instead of pretrained checkpoints");
  ft->add_flag("--ablate", ft_flags.ablate, "run the four fine-tuning settings and write ablation.csv");
  auto* sample = app.add_subcommand("sample", "write composed samples and colored segmaps");
  sample->add_option("--checkpoint", sample_flags.checkpoint)->capture_default_str();
  sample->add_option("--n", sample_flags.n)->capture_default_str();
  sample->add_option("--seed", sample_flags.seed)->capture_default_str();
  sample->add_option("--out", sample_flags.out, "output directory")->capture_default_str();
  auto* ev = app.add_subcommand("eval", "write a JSON evaluation report");
  ev->add_option("--checkpoint", eval_flags.checkpoint)->capture_default_str();
  ev->add_option("--out", eval_flags.out)->capture_default_str();
  ev->add_flag("--gt-conditioning", eval_flags.gt_conditioning, "also score synthesis from ground-truth val maps");
  ev->add_option("--seed", eval_flags.seed, "override the eval seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[" << error_code(ErrorKind::Argument) << "]: " << e.what() << "\n";
    return 2;
  }

  try {
    setup_runtime(common);
    if (*make) return cmd_make_toy_data(common, data_flags);
    if (*seg) return cmd_train_seg(common, seg_flags);
    if (*spade) return cmd_train_spade(common, spade_flags);
    if (*ft) return cmd_finetune(common, ft_flags);
    if (*sample) return cmd_sample(common, sample_flags);
    if (*ev) return cmd_eval(common, eval_flags);
  } catch (const Error& e) {
    std::cerr << "error[" << error_code(e.kind()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const c10::Error& e) {
    std::cerr << "error[E_INTERNAL]: " << e.what_without_backtrace() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[E_INTERNAL]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
