#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace segdiff {

inline constexpr std::int64_t kCheckpointFormatVersion = 1;

/// Versioned torch archive tagged with a kind string ("codec", "refiner", ...).
class CheckpointWriter {
 public:
  explicit CheckpointWriter(const std::string& kind);

  void put_json(const std::string& key, const nlohmann::json& value);
  void put_string(const std::string& key, const std::string& value);
  void put_int(const std::string& key, std::int64_t value);
  void put_module(const std::string& key, const torch::nn::Module& module);
  void put_optimizer(const std::string& key, const torch::optim::Optimizer& optimizer);

  void save(const std::filesystem::path& path);

 private:
  torch::serialize::OutputArchive archive_;
};

class CheckpointReader {
 public:
  /// Throws IoError for unreadable files and ValidationError on kind or
  /// version mismatch.
  CheckpointReader(const std::filesystem::path& path, const std::string& expected_kind);

  bool has(const std::string& key);
  nlohmann::json get_json(const std::string& key);
  std::string get_string(const std::string& key);
  std::int64_t get_int(const std::string& key);
  void load_module(const std::string& key, torch::nn::Module& module);
  void load_optimizer(const std::string& key, torch::optim::Optimizer& optimizer);

 private:
  torch::serialize::InputArchive archive_;
  std::string path_;
};

}  // namespace segdiff
