#include "lrq/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "lrq/intpipe.hpp"
#include "lrq/rotation.hpp"
#include "lrq/uniquant.hpp"

using nlohmann::json;

namespace lrq {

std::string to_string(Scheme s) { return s == Scheme::tlq ? "tlq" : "uniform"; }

std::string to_string(RotationMode m) {
  switch (m) {
    case RotationMode::none:
      return "none";
    case RotationMode::hadamard:
      return "hadamard";
    case RotationMode::adaptive:
      return "adaptive";
    case RotationMode::dual:
      return "dual";
  }
  return "?";
}

Scheme parse_scheme(const std::string& s) {
  if (s == "tlq") return Scheme::tlq;
  if (s == "uniform") return Scheme::uniform;
  throw ConfigError("scheme must be 'uniform' or 'tlq', got '" + s + "'");
}

RotationMode parse_rotation_mode(const std::string& s) {
  if (s == "none") return RotationMode::none;
  if (s == "hadamard") return RotationMode::hadamard;
  if (s == "adaptive") return RotationMode::adaptive;
  if (s == "dual") return RotationMode::dual;
  throw ConfigError("rotation_mode must be one of none, hadamard, adaptive, dual; got '" + s + "'");
}

std::vector<std::string> default_skip_layers() {
  return {"embed", "norm_out", "proj_out", "adaln_single", "caption_projection"};
}

void QuantConfig::validate() const {
  const int max_w = scheme == Scheme::tlq ? kMaxTwinLogBits : kMaxUniformBits;
  if (bits_w < 2 || bits_w > max_w) {
    throw ConfigError("bits_w must be in [2, " + std::to_string(max_w) + "] for scheme " + to_string(scheme) +
                      ", got " + std::to_string(bits_w));
  }
  if (bits_a < kMinUniformBits || bits_a > kMaxUniformBits) {
    throw ConfigError("bits_a must be in [2, 16], got " + std::to_string(bits_a));
  }
  if (!(migration_strength >= 0.0 && migration_strength <= 1.0)) {
    throw ConfigError("migration_strength must be in [0, 1]");
  }
  if (!std::isfinite(threshold)) throw ConfigError("threshold must be finite");
  if (shift_precision < 1 || shift_precision > kMaxShiftPrecision) {
    throw ConfigError("shift_precision must be in [1, " + std::to_string(kMaxShiftPrecision) + "]");
  }
  if (!is_power_of_two(block_size)) throw ConfigError("block_size must be a power of two");
  if (steps_k < 0) throw ConfigError("steps_k must be >= 0");
  if (calibration_batches == 0) throw ConfigError("calibration_batches must be positive");
  try {
    clip_grid();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("clip_grid: ") + e.what());
  }
}

ClipGrid QuantConfig::clip_grid() const { return ClipGrid::from_ranges(clip_alpha, clip_beta); }

bool QuantConfig::is_skipped(const std::string& layer) const {
  for (const auto& pattern : skip_layers) {
    if (!pattern.empty() && layer.find(pattern) != std::string::npos) return true;
  }
  return false;
}

namespace {

json range_json(const ClipRange& r) { return {{"start", r.start}, {"stop", r.stop}, {"step", r.step}}; }

ClipRange range_from(const json& j, ClipRange base) {
  for (const auto& [key, value] : j.items()) {
    if (key == "start") {
      base.start = value.get<double>();
    } else if (key == "stop") {
      base.stop = value.get<double>();
    } else if (key == "step") {
      base.step = value.get<double>();
    } else {
      throw ConfigError("unknown clip range key '" + key + "'");
    }
  }
  return base;
}

}  // namespace

json to_json(const QuantConfig& c) {
  return {{"bits_w", c.bits_w},
          {"bits_a", c.bits_a},
          {"scheme", to_string(c.scheme)},
          {"rotation_mode", to_string(c.rotation_mode)},
          {"threshold", c.threshold},
          {"migration_strength", c.migration_strength},
          {"shift_precision", c.shift_precision},
          {"clip_grid", {{"alpha", range_json(c.clip_alpha)}, {"beta", range_json(c.clip_beta)}}},
          {"block_size", c.block_size},
          {"steps_k", c.steps_k},
          {"skip_layers", c.skip_layers},
          {"calibration_batches", c.calibration_batches},
          {"jobs", c.jobs}};
}

QuantConfig config_from_json(const json& j, QuantConfig c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "bits_w") {
        c.bits_w = value.get<int>();
      } else if (key == "bits_a") {
        c.bits_a = value.get<int>();
      } else if (key == "scheme") {
        c.scheme = parse_scheme(value.get<std::string>());
      } else if (key == "rotation_mode") {
        c.rotation_mode = parse_rotation_mode(value.get<std::string>());
      } else if (key == "threshold") {
        c.threshold = value.get<double>();
      } else if (key == "migration_strength") {
        c.migration_strength = value.get<double>();
      } else if (key == "shift_precision") {
        c.shift_precision = value.get<int>();
      } else if (key == "clip_grid") {
        for (const auto& [side, range] : value.items()) {
          if (side == "alpha") {
            c.clip_alpha = range_from(range, c.clip_alpha);
          } else if (side == "beta") {
            c.clip_beta = range_from(range, c.clip_beta);
          } else {
            throw ConfigError("clip_grid keys are 'alpha' and 'beta', got '" + side + "'");
          }
        }
      } else if (key == "block_size") {
        c.block_size = value.get<std::size_t>();
      } else if (key == "steps_k") {
        c.steps_k = value.get<int>();
      } else if (key == "skip_layers") {
        c.skip_layers = value.get<std::vector<std::string>>();
      } else if (key == "calibration_batches") {
        c.calibration_batches = value.get<std::size_t>();
      } else if (key == "jobs") {
        c.jobs = value.get<std::size_t>();
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

QuantConfig load_config(const std::string& path, QuantConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, std::move(base));
}

}  // namespace lrq
