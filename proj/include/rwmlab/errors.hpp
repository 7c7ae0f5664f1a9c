#pragma once

#include <stdexcept>
#include <string>

namespace rwmlab {

// Bad shapes, bad config values, out-of-range selectors. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// API misuse (wrong sequence length, non-scalar loss, empty batch). Exit code 2.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

// NaN state during simulation; carries the episode index when known. Exit code 1.
class SimulationFault : public std::runtime_error {
 public:
  explicit SimulationFault(const std::string& what, long episode = -1)
      : std::runtime_error(what), episode_index(episode) {}
  long episode_index;
};

// Non-finite model prediction; carries the rollout step. Exit code 1.
class ModelFault : public std::runtime_error {
 public:
  explicit ModelFault(const std::string& what, long step = -1)
      : std::runtime_error(what), step_index(step) {}
  long step_index;
};

}  // namespace rwmlab
