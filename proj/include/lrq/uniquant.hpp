#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lrq/tensor.hpp"

namespace lrq {

enum class Granularity { per_tensor, per_channel, per_token };

/// Asymmetric uniform quantizer parameters: x ~ scale * (code + zero_point).
struct UniformParams {
  int bits = 8;
  float scale = 1.0f;
  std::int32_t zero_point = 0;
  Granularity granularity = Granularity::per_tensor;

  std::int32_t max_code() const { return (std::int32_t{1} << bits) - 1; }
  bool operator==(const UniformParams&) const = default;
};

inline constexpr int kMinUniformBits = 2;
inline constexpr int kMaxUniformBits = 16;

/// Round half away from zero, the one rounding rule used by every quantizer.
inline double round_half_away(double v) { return std::round(v); }

struct UniformQuantized {
  std::vector<std::int32_t> codes;
  UniformParams params;
};

UniformQuantized uniform_quantize(std::span<const float> x, int bits,
                                  Granularity granularity = Granularity::per_tensor);
std::vector<float> uniform_dequantize(std::span<const std::int32_t> codes, const UniformParams& params);

/// Per-row quantization; one parameter set per row.
struct RowQuantized {
  Matrix<std::int32_t> codes;
  std::vector<UniformParams> params;
};

/// Static per-output-channel weight quantization.
RowQuantized per_channel_quantize(const WeightMatrix& w, int bits);
/// Dynamic per-token activation quantization; params recomputed per token.
RowQuantized per_token_quantize(const ActivationBatch& x, int bits);
RowQuantized per_token_quantize(const Matrix<float>& tokens, int bits);

Matrix<float> dequantize_rows(const RowQuantized& q);

}  // namespace lrq
