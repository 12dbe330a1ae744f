#pragma once

#include <stdexcept>
#include <string>

namespace jointppo {

// Shape disagreement between operands (message names both shapes).
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error("dimension: " + msg) {}
};

// A caller violated an operation precondition.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error("contract: " + msg) {}
};

// Softmax row with no unmasked entry.
struct InvalidMaskError : std::runtime_error {
  explicit InvalidMaskError(const std::string& msg) : std::runtime_error("invalid-mask: " + msg) {}
};

// Training blew up (non-finite or absurd policy ratio); carries diagnostics.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error("divergence: " + msg) {}
};

// Bad run configuration; message lists every problem found.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config: " + msg) {}
};

// Environment raised mid-rollout; message carries the step index.
struct EnvError : std::runtime_error {
  explicit EnvError(const std::string& msg) : std::runtime_error("env: " + msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error("io: " + msg) {}
};

}  // namespace jointppo
