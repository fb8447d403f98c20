#pragma once

#include <cstdint>
#include <string>

#include "gmatt/checkpoint.hpp"
#include "gmatt/model.hpp"

namespace gmatt {

// Full run configuration: model shape, schedule, and training knobs.
// Loadable from a `key = value` text file; unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  LrSchedule sched;
  int epochs = 250;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool with_class = false;
};

// Applies one key=value setting. Throws DataError for unknown keys or
// unparseable values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

}  // namespace gmatt
