#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace sbgan {

struct CheckpointMeta {
  std::string kind;  // "seg", "spade" or "sbgan"
  std::string config_hash;
  std::string config_json;
  std::int64_t step = 0;
  int stage = 0;
  double alpha = 1.0;
};

// Self-describing container: metadata plus named module and optimizer
// archives, serialized with torch's archive format.
class CheckpointWriter {
 public:
  explicit CheckpointWriter(CheckpointMeta meta) : meta_(std::move(meta)) {}

  void add(const std::string& name, const torch::nn::Module& module);
  void add(const std::string& name, const torch::optim::Optimizer& optimizer);

  // Writes to a temporary file and renames it into place.
  void save(const std::filesystem::path& path) const;

 private:
  CheckpointMeta meta_;
  std::vector<std::pair<std::string, const torch::nn::Module*>> modules_;
  std::vector<std::pair<std::string, const torch::optim::Optimizer*>> optimizers_;
};

class CheckpointReader {
 public:
  // Throws Load for unreadable or corrupt files, and for a config hash that
  // differs from `expected_hash` when one is given.
  explicit CheckpointReader(const std::filesystem::path& path, const std::string& expected_hash = {});

  const CheckpointMeta& meta() const { return meta_; }
  bool has_module(const std::string& name) const;
  bool has_optimizer(const std::string& name) const;

  void load(const std::string& name, torch::nn::Module& module);
  void load(const std::string& name, torch::optim::Optimizer& optimizer);

 private:
  std::filesystem::path path_;
  torch::serialize::InputArchive archive_;
  CheckpointMeta meta_;
  std::vector<std::string> modules_;
  std::vector<std::string> optimizers_;
};

}  // namespace sbgan
