#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "lrq/tensor.hpp"
#include "lrq/twinlog.hpp"
#include "lrq/uniquant.hpp"

namespace lrq {

inline constexpr int kDefaultShiftPrecision = 7;
/// Keeps round(2^r * 2^I) within 32 bits.
inline constexpr int kMaxShiftPrecision = 30;

/// Residual exponent factors are rounded onto a 2^-I grid.
struct ShiftConfig {
  int shift_precision = kDefaultShiftPrecision;

  void validate() const;
  bool operator==(const ShiftConfig&) const = default;
};

/// Shift-executable form of a twin-log layer: every nonzero weight is
/// sign * residual * 2^(exponent - I), with residual in [2^I, 2^(I+1)].
/// The element's mask selects which side (f+/r+ or f-/r-) it carries.
struct ShiftArtifact {
  Matrix<std::int32_t> exponents;  // f, floor of the log2 magnitude
  Matrix<std::int32_t> residuals;  // integerized 2^r, 0 on zero-mask elements
  SignMasks masks;
  ShiftConfig config;

  std::size_t rows() const { return exponents.rows(); }
  std::size_t cols() const { return exponents.cols(); }
  void validate() const;
  /// Value the shift pipeline actually multiplies by, as a double.
  double weight_value(std::size_t r, std::size_t c) const;

  bool operator==(const ShiftArtifact&) const = default;
};

struct ExponentSplit {
  std::int32_t exponent;  // f
  double residual;        // r in [0, 1)
  std::int32_t integerized;
};

/// f = floor(e), r = e - f, integerized = round(2^r / 2^-I).
ExponentSplit split_exponent(double log2_magnitude, int shift_precision);

ShiftArtifact integerize(const TwinLogArtifact& artifact, const ShiftConfig& config);

/// Worst-case relative error of approximating 2^r by round(2^r * 2^I) * 2^-I.
double residual_error_bound(const ShiftConfig& config);

class AccumulatorOverflow : public std::overflow_error {
 public:
  using std::overflow_error::overflow_error;
};

/// Per-token activation integers: x[t][i] ~ scale[t] * (codes[t][i] + zero_point[t]).
struct TokenCodes {
  Matrix<std::int32_t> codes;
  std::vector<float> scales;
  std::vector<std::int32_t> zero_points;

  static TokenCodes from(const RowQuantized& q);
};

/// Shift-and-mask matmul Y = X * W^T. Products residual * code are shifted
/// by (f - I) and summed exactly in 128-bit integers aligned to the row's
/// smallest shift; zero points enter through precomputed weight row sums;
/// the per-token scale is applied once at the end. Throws
/// AccumulatorOverflow instead of wrapping.
Matrix<double> shift_matmul(const ShiftArtifact& weights, const TokenCodes& activations);

}  // namespace lrq
