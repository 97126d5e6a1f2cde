#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fmvit/binary_io.hpp"
#include "fmvit/model.hpp"
#include "fmvit/synth.hpp"

namespace fmvit {

/// Malformed config text, unknown key, or a value of the wrong type.
class ConfigError : public FormatError {
 public:
  using FormatError::FormatError;
};

enum class ThresholdRule { eer, bpcer };

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 8;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::size_t eval_every = 1;
  ThresholdRule threshold = ThresholdRule::eer;
  double bpcer_target = 0.01;

  void validate() const;
};

/// Ordered key=value pairs. '#' starts a comment; blank lines are ignored.
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

ConfigEntries parse_config(std::istream& is);
ConfigEntries read_config_file(const std::filesystem::path& path);
std::string render_config(const ConfigEntries& entries);
void write_config_file(const std::filesystem::path& path, const ConfigEntries& entries);

ModelConfig model_config_from(const ConfigEntries& entries);
ConfigEntries model_config_entries(const ModelConfig& config);

TrainConfig train_config_from(const ConfigEntries& entries);
ConfigEntries train_config_entries(const TrainConfig& config);

SyntheticSpec spec_from(const ConfigEntries& entries);
ConfigEntries spec_to_entries(const SyntheticSpec& spec);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

/// FNV-1a over the rendered entries; stable across runs and platforms.
std::uint64_t config_hash(const ConfigEntries& entries);

}  // namespace fmvit
