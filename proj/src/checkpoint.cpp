#include "sbgan/checkpoint.hpp"

#include <algorithm>

#include "sbgan/errors.hpp"

namespace sbgan {

namespace {

constexpr const char* kFormat = "sbgan-ckpt-1";

torch::Tensor string_tensor(const std::string& s) {
  auto t = torch::empty({static_cast<std::int64_t>(s.size())}, torch::kUInt8);
  std::copy(s.begin(), s.end(), t.data_ptr<std::uint8_t>());
  return t;
}

std::string tensor_string(const torch::Tensor& t) {
  auto c = t.contiguous();
  const auto* p = c.data_ptr<std::uint8_t>();
  return std::string(p, p + c.numel());
}

std::string join(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += n + "\n";
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\n') {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace

void CheckpointWriter::add(const std::string& name, const torch::nn::Module& module) {
  modules_.emplace_back(name, &module);
}

void CheckpointWriter::add(const std::string& name, const torch::optim::Optimizer& optimizer) {
  optimizers_.emplace_back(name, &optimizer);
}

void CheckpointWriter::save(const std::filesystem::path& path) const {
  torch::serialize::OutputArchive root;
  torch::serialize::OutputArchive meta;
  meta.write("format", string_tensor(kFormat));
  meta.write("kind", string_tensor(meta_.kind));
  meta.write("config_hash", string_tensor(meta_.config_hash));
  meta.write("config_json", string_tensor(meta_.config_json));
  meta.write("step", torch::tensor(meta_.step, torch::kInt64));
  meta.write("stage", torch::tensor(static_cast<std::int64_t>(meta_.stage), torch::kInt64));
  meta.write("alpha", torch::tensor(meta_.alpha, torch::kFloat64));
  std::vector<std::string> mod_names, opt_names;
  for (const auto& [name, m] : modules_) mod_names.push_back(name);
  for (const auto& [name, o] : optimizers_) opt_names.push_back(name);
  meta.write("modules", string_tensor(join(mod_names)));
  meta.write("optimizers", string_tensor(join(opt_names)));
  root.write("meta", meta);
  for (const auto& [name, m] : modules_) {
    torch::serialize::OutputArchive a;
    m->save(a);
    root.write("module." + name, a);
  }
  for (const auto& [name, o] : optimizers_) {
    torch::serialize::OutputArchive a;
    o->save(a);
    root.write("optim." + name, a);
  }
  auto tmp = path;
  tmp += ".tmp";
  try {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    root.save_to(tmp.string());
    std::filesystem::rename(tmp, path);
  } catch (const c10::Error& e) {
    fail(ErrorKind::Io, "cannot write checkpoint '" + path.string() + "': " + e.what_without_backtrace());
  } catch (const std::filesystem::filesystem_error& e) {
    fail(ErrorKind::Io, "cannot write checkpoint '" + path.string() + "': " + e.what());
  }
}

CheckpointReader::CheckpointReader(const std::filesystem::path& path, const std::string& expected_hash)
    : path_(path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::Load, "checkpoint not found: " + path.string());
  try {
    archive_.load_from(path.string());
    torch::serialize::InputArchive meta;
    archive_.read("meta", meta);
    // read() into a defined tensor reuses its storage, so always start fresh
    auto get = [&](const char* key) {
      torch::Tensor t;
      meta.read(key, t);
      return t;
    };
    if (tensor_string(get("format")) != kFormat) fail(ErrorKind::Load, "unknown checkpoint format in " + path.string());
    meta_.kind = tensor_string(get("kind"));
    meta_.config_hash = tensor_string(get("config_hash"));
    meta_.config_json = tensor_string(get("config_json"));
    meta_.step = get("step").item<std::int64_t>();
    meta_.stage = static_cast<int>(get("stage").item<std::int64_t>());
    meta_.alpha = get("alpha").item<double>();
    modules_ = split(tensor_string(get("modules")));
    optimizers_ = split(tensor_string(get("optimizers")));
  } catch (const c10::Error& e) {
    fail(ErrorKind::Load, "corrupt checkpoint '" + path.string() + "': " + e.what_without_backtrace());
  }
  if (!expected_hash.empty() && expected_hash != meta_.config_hash) {
    fail(ErrorKind::Load, "config hash mismatch for " + path.string() + ": checkpoint has " +
                              meta_.config_hash + ", current config is " + expected_hash);
  }
}

bool CheckpointReader::has_module(const std::string& name) const {
  return std::find(modules_.begin(), modules_.end(), name) != modules_.end();
}

bool CheckpointReader::has_optimizer(const std::string& name) const {
  return std::find(optimizers_.begin(), optimizers_.end(), name) != optimizers_.end();
}

void CheckpointReader::load(const std::string& name, torch::nn::Module& module) {
  if (!has_module(name)) fail(ErrorKind::Load, "checkpoint " + path_.string() + " has no module '" + name + "'");
  // Module::load does not check shapes; compare afterwards and roll back
  std::vector<std::pair<torch::Tensor, torch::Tensor>> saved;
  for (auto& t : module.parameters()) saved.emplace_back(t, t.detach().clone());
  for (auto& t : module.buffers()) saved.emplace_back(t, t.detach().clone());
  try {
    torch::serialize::InputArchive a;
    archive_.read("module." + name, a);
    module.load(a);
    for (auto& [t, before] : saved) {
      if (t.sizes() != before.sizes() || t.scalar_type() != before.scalar_type()) {
        torch::NoGradGuard guard;
        for (auto& [u, b] : saved) u.set_(b);
        fail(ErrorKind::Load, "module '" + name + "' in " + path_.string() + " has a different shape");
      }
    }
  } catch (const c10::Error& e) {
    fail(ErrorKind::Load, "cannot load module '" + name + "' from " + path_.string() + ": " +
                              e.what_without_backtrace());
  }
}

void CheckpointReader::load(const std::string& name, torch::optim::Optimizer& optimizer) {
  if (!has_optimizer(name)) {
    fail(ErrorKind::Load, "checkpoint " + path_.string() + " has no optimizer '" + name + "'");
  }
  try {
    torch::serialize::InputArchive a;
    archive_.read("optim." + name, a);
    optimizer.load(a);
  } catch (const c10::Error& e) {
    fail(ErrorKind::Load, "cannot load optimizer '" + name + "' from " + path_.string() + ": " +
                              e.what_without_backtrace());
  }
}

}  // namespace sbgan
