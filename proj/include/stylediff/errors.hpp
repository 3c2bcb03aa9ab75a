#pragma once

#include <stdexcept>
#include <string>

namespace stylediff {

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct ParameterError : std::runtime_error {
  explicit ParameterError(const std::string& msg) : std::runtime_error("parameter error: " + msg) {}
};

struct VocabularyError : std::runtime_error {
  explicit VocabularyError(const std::string& msg) : std::runtime_error("vocabulary error: " + msg) {}
};

struct InstructionError : std::runtime_error {
  explicit InstructionError(const std::string& msg) : std::runtime_error("instruction error: " + msg) {}
};

struct TaskError : std::runtime_error {
  explicit TaskError(const std::string& msg) : std::runtime_error("task error: " + msg) {}
};

struct DeterminismError : std::runtime_error {
  explicit DeterminismError(const std::string& msg) : std::runtime_error("determinism error: " + msg) {}
};

struct RegistryError : std::runtime_error {
  explicit RegistryError(const std::string& msg) : std::runtime_error("registry error: " + msg) {}
};

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error("checkpoint error: " + msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct CalibrationError : std::runtime_error {
  explicit CalibrationError(const std::string& msg) : std::runtime_error("calibration error: " + msg) {}
};

struct ConsistencyError : std::runtime_error {
  explicit ConsistencyError(const std::string& msg) : std::runtime_error("internal consistency error: " + msg) {}
};

struct PipelineError : std::runtime_error {
  explicit PipelineError(const std::string& msg) : std::runtime_error("pipeline error: " + msg) {}
};

}  // namespace stylediff
