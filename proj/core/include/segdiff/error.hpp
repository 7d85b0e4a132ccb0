#pragma once

#include <stdexcept>
#include <string>

namespace segdiff {

/// Invalid configuration values (schedule bounds, scene specs, experiment files).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data that violates an operation's preconditions (shapes, class ranges).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reverse-step timesteps supplied out of order.
class OrderingError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Argument outside the mathematical domain of a closed form.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when training diverges; carries the last checkpoint that was known good.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::string last_good_checkpoint)
      : std::runtime_error(what), last_good_(std::move(last_good_checkpoint)) {}
  const std::string& last_good_checkpoint() const noexcept { return last_good_; }

 private:
  std::string last_good_;
};

}  // namespace segdiff
