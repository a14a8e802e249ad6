#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace fedauto {

/// Invalid sizes, counts or probabilities handed to an operation.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input file (IDX data, config documents).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The caller violated an operation's contract, e.g. aggregation weights that
/// reference a model that was never supplied.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when the public set holds no sample of any class that needs
/// compensation. Partial shortfalls are reported softly instead.
class CoverageGap : public std::runtime_error {
 public:
  explicit CoverageGap(std::vector<int> uncovered);

  const std::vector<int>& uncovered() const noexcept { return uncovered_; }

 private:
  std::vector<int> uncovered_;
};

/// Bad experiment configuration. `key()` names the offending dotted path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message);

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace fedauto
