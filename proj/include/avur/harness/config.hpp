#pragma once

#include "avur/harness/pipeline.hpp"

#include <iosfwd>

namespace avur {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sets one field by name. Lists are comma separated; SNR lists accept
// "clean" and dB values with or without a "dB" suffix. Unknown keys throw.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// "key = value" lines; '#' starts a comment. Applied on top of cfg.
void apply_config(ExperimentConfig& cfg, std::istream& in, const std::string& source = "<config>");
void apply_config_file(ExperimentConfig& cfg, const std::string& path);

// Every known key with its current value, in a form apply_config reads back.
std::string dump_config(const ExperimentConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace avur
