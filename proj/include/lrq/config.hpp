#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrq/twinlog.hpp"

namespace lrq {

enum class Scheme { uniform, tlq };
enum class RotationMode { none, hadamard, adaptive, dual };

std::string to_string(Scheme s);
std::string to_string(RotationMode m);
Scheme parse_scheme(const std::string& s);
RotationMode parse_rotation_mode(const std::string& s);

/// Invalid configuration value; the CLI reports it as a usage error.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Layers kept at full precision unless the config overrides the list.
std::vector<std::string> default_skip_layers();

struct QuantConfig {
  int bits_w = 3;
  int bits_a = 4;
  Scheme scheme = Scheme::tlq;
  RotationMode rotation_mode = RotationMode::adaptive;
  double threshold = 1.0;
  double migration_strength = 0.5;
  int shift_precision = 7;
  ClipRange clip_alpha;
  ClipRange clip_beta;
  std::size_t block_size = 128;
  int steps_k = 16;
  std::vector<std::string> skip_layers = default_skip_layers();
  std::size_t calibration_batches = 8;
  std::size_t jobs = 0;  // 0: hardware concurrency

  /// Throws ConfigError naming the offending key.
  void validate() const;
  ClipGrid clip_grid() const;
  /// Substring match against skip_layers.
  bool is_skipped(const std::string& layer) const;
};

/// bits_a at or above this skips activation quantization entirely.
inline constexpr int kActivationPassthroughBits = 16;

nlohmann::json to_json(const QuantConfig& c);
/// Merges `j` over `base`; unknown keys are rejected.
QuantConfig config_from_json(const nlohmann::json& j, QuantConfig base = {});
QuantConfig load_config(const std::string& path, QuantConfig base = {});

}  // namespace lrq
