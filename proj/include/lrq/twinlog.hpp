#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrq/tensor.hpp"

namespace lrq {

/// Magnitudes below this go to the zero mask and dequantize to exactly 0.
inline constexpr double kZeroEpsilon = 0x1p-30;

inline constexpr int kMinTwinLogBits = 2;
/// Negative codes reach 2^(bits-1), which must fit one unsigned byte.
inline constexpr int kMaxTwinLogBits = 8;

class InconsistentArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Sign : std::uint8_t { zero = 0, pos = 1, neg = 2 };

Sign classify(float w);

/// Exact partition of a weight matrix by sign; one bit per element per mask.
struct SignMasks {
  BitMatrix pos;
  BitMatrix neg;
  BitMatrix zero;

  Sign at(std::size_t r, std::size_t c) const;
  bool operator==(const SignMasks&) const = default;
};

SignMasks build_sign_masks(const WeightMatrix& w);

/// Twin-log parameters of one output channel.
struct TwinLogChannelParams {
  float s_pos = 1.0f;
  float s_neg = 1.0f;
  std::int32_t z_pos = 0;
  std::int32_t z_neg = 0;
  float alpha = 1.0f;
  float beta = 1.0f;

  bool operator==(const TwinLogChannelParams&) const = default;
};

inline std::int32_t positive_levels(int bits) { return (std::int32_t{1} << (bits - 1)) - 1; }
inline std::int32_t negative_levels(int bits) { return std::int32_t{1} << (bits - 1); }

/// Log2 magnitude represented by `code` on a side with scale s and zero point z.
inline double tlq_exponent(float scale, std::int32_t zero_point, std::int32_t code) {
  return static_cast<double>(scale) * (static_cast<double>(code) + static_cast<double>(zero_point));
}

float tlq_dequantize_value(Sign sign, std::uint8_t code, const TwinLogChannelParams& p);

struct TwinLogChannel {
  std::vector<std::uint8_t> codes;
  std::vector<Sign> signs;
  TwinLogChannelParams params;
};

/// Quantizes one channel with fixed clip factors alpha (positive side) and
/// beta (negative side), both in (0, 1].
TwinLogChannel tlq_quantize_channel(std::span<const float> w_row, int bits, float alpha, float beta);

std::vector<float> tlq_dequantize_channel(const TwinLogChannel& channel);

/// Candidate clip factors. Values live in (0, 1].
struct ClipRange {
  double start = 0.85;
  double stop = 1.00;
  double step = 0.01;

  /// start, start+step, ... up to stop (inclusive within 1e-9 of a step).
  std::vector<float> values() const;
};

struct ClipGrid {
  std::vector<float> alphas;
  std::vector<float> betas;

  static ClipGrid from_ranges(const ClipRange& alpha, const ClipRange& beta);
  /// 0.85, 0.86, ..., 1.00 on both sides.
  static ClipGrid default_grid();
  static ClipGrid singleton(float alpha, float beta);

  void validate() const;
};

struct ClipChoice {
  float alpha = 1.0f;
  float beta = 1.0f;
  double squared_error = 0.0;
};

/// Squared L2 error of the dequantized channel against `w_row`.
double channel_squared_error(std::span<const float> w_row, const TwinLogChannel& channel);

/// Minimizes channel_squared_error over the grid; ties go to the
/// lexicographically largest (alpha, beta).
ClipChoice clip_grid_search(std::span<const float> w_row, int bits, const ClipGrid& grid);

struct TwinLogArtifact {
  int bits = 3;
  Matrix<std::uint8_t> codes;
  SignMasks masks;
  std::vector<TwinLogChannelParams> channels;

  std::size_t rows() const { return codes.rows(); }
  std::size_t cols() const { return codes.cols(); }
  TwinLogChannel channel(std::size_t r) const;
  /// Throws InconsistentArtifact when masks, codes and params disagree.
  void validate() const;

  bool operator==(const TwinLogArtifact&) const = default;
};

TwinLogArtifact tlq_quantize_matrix(const WeightMatrix& w, int bits, const ClipGrid& grid);
WeightMatrix tlq_dequantize(const TwinLogArtifact& artifact);

}  // namespace lrq
