#pragma once

#include <stdexcept>
#include <string>

namespace rrhf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An index (token id, axis) is outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation does not hold.
class ContractError : public Error {
 public:
  using Error::Error;
};

// An object is in the wrong lifecycle state (e.g. a consumed tape).
class StateError : public Error {
 public:
  using Error::Error;
};

class ContextOverflowError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf in a loss or gradient, or a runaway PPO ratio.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration. key_path() names the offending key ("rrhf.peak_lr").
class ConfigError : public Error {
 public:
  ConfigError(std::string key_path, const std::string& message)
      : Error(key_path.empty() ? message : key_path + ": " + message), key_path_(std::move(key_path)) {}
  const std::string& key_path() const noexcept { return key_path_; }

 private:
  std::string key_path_;
};

// An upstream artifact the stage depends on does not exist.
class MissingArtifactError : public Error {
 public:
  explicit MissingArtifactError(std::string path)
      : Error("missing artifact: " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// A record in an input file failed validation.
class ValidationError : public Error {
 public:
  ValidationError(std::size_t line, const std::string& message)
      : Error("line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace rrhf
