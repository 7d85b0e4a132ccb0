#include "segdiff/checkpoint.hpp"

#include "segdiff/error.hpp"

namespace segdiff {

CheckpointWriter::CheckpointWriter(const std::string& kind) {
  archive_.write("format", c10::IValue(std::string("segdiff")));
  archive_.write("kind", c10::IValue(kind));
  archive_.write("version", c10::IValue(kCheckpointFormatVersion));
}

void CheckpointWriter::put_json(const std::string& key, const nlohmann::json& value) {
  archive_.write(key, c10::IValue(value.dump()));
}

void CheckpointWriter::put_string(const std::string& key, const std::string& value) {
  archive_.write(key, c10::IValue(value));
}

void CheckpointWriter::put_int(const std::string& key, std::int64_t value) { archive_.write(key, c10::IValue(value)); }

void CheckpointWriter::put_module(const std::string& key, const torch::nn::Module& module) {
  torch::serialize::OutputArchive nested;
  module.save(nested);
  archive_.write(key, nested);
}

void CheckpointWriter::put_optimizer(const std::string& key, const torch::optim::Optimizer& optimizer) {
  torch::serialize::OutputArchive nested;
  optimizer.save(nested);
  archive_.write(key, nested);
}

void CheckpointWriter::save(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  try {
    archive_.save_to(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
}

CheckpointReader::CheckpointReader(const std::filesystem::path& path, const std::string& expected_kind)
    : path_(path.string()) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path_);
  try {
    archive_.load_from(path_);
  } catch (const c10::Error& e) {
    throw IoError("cannot read checkpoint " + path_ + ": " + e.what_without_backtrace());
  }
  c10::IValue format, kind, version;
  if (!archive_.try_read("format", format) || !format.isString() || format.toStringRef() != "segdiff") {
    throw ValidationError(path_ + " is not a segdiff checkpoint");
  }
  archive_.read("kind", kind);
  if (kind.toStringRef() != expected_kind) {
    throw ValidationError(path_ + " holds a '" + kind.toStringRef() + "' checkpoint, expected '" + expected_kind + "'");
  }
  archive_.read("version", version);
  if (version.toInt() > kCheckpointFormatVersion) {
    throw ValidationError(path_ + ": unsupported checkpoint version " + std::to_string(version.toInt()));
  }
}

bool CheckpointReader::has(const std::string& key) {
  c10::IValue v;
  if (archive_.try_read(key, v)) return true;
  torch::serialize::InputArchive nested;
  return archive_.try_read(key, nested);
}

nlohmann::json CheckpointReader::get_json(const std::string& key) { return nlohmann::json::parse(get_string(key)); }

std::string CheckpointReader::get_string(const std::string& key) {
  c10::IValue v;
  if (!archive_.try_read(key, v) || !v.isString()) throw ValidationError(path_ + ": missing string entry '" + key + "'");
  return v.toStringRef();
}

std::int64_t CheckpointReader::get_int(const std::string& key) {
  c10::IValue v;
  if (!archive_.try_read(key, v) || !v.isInt()) throw ValidationError(path_ + ": missing integer entry '" + key + "'");
  return v.toInt();
}

void CheckpointReader::load_module(const std::string& key, torch::nn::Module& module) {
  torch::serialize::InputArchive nested;
  if (!archive_.try_read(key, nested)) throw ValidationError(path_ + ": missing module '" + key + "'");
  module.load(nested);
}

void CheckpointReader::load_optimizer(const std::string& key, torch::optim::Optimizer& optimizer) {
  torch::serialize::InputArchive nested;
  if (!archive_.try_read(key, nested)) throw ValidationError(path_ + ": missing optimizer '" + key + "'");
  optimizer.load(nested);
}

}  // namespace segdiff
