#include "lrq/intpipe.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <string>

namespace lrq {

namespace {

using i128 = __int128;

constexpr int kAccumulatorBits = 126;

unsigned magnitude_bits(i128 v) {
  const auto u = static_cast<unsigned __int128>(v < 0 ? -v : v);
  const auto hi = static_cast<std::uint64_t>(u >> 64);
  if (hi != 0) return 64u + static_cast<unsigned>(std::bit_width(hi));
  return static_cast<unsigned>(std::bit_width(static_cast<std::uint64_t>(u)));
}

i128 shifted(i128 v, int shift, const char* what) {
  if (v != 0 && static_cast<int>(magnitude_bits(v)) + shift > kAccumulatorBits) {
    throw AccumulatorOverflow(std::string("shift_matmul: ") + what + " exceeds " +
                              std::to_string(kAccumulatorBits) + "-bit accumulator");
  }
  return v * (i128{1} << shift);
}

i128 add_checked(i128 a, i128 b) {
  i128 out;
  if (__builtin_add_overflow(a, b, &out)) throw AccumulatorOverflow("shift_matmul: accumulator overflow");
  return out;
}

i128 mul_checked(i128 a, i128 b) {
  i128 out;
  if (__builtin_mul_overflow(a, b, &out)) throw AccumulatorOverflow("shift_matmul: zero-point correction overflow");
  return out;
}

}  // namespace

void ShiftConfig::validate() const {
  if (shift_precision < 1 || shift_precision > kMaxShiftPrecision) {
    throw std::invalid_argument("shift precision must be in [1, " + std::to_string(kMaxShiftPrecision) + "], got " +
                                std::to_string(shift_precision));
  }
}

ExponentSplit split_exponent(double log2_magnitude, int shift_precision) {
  const double f = std::floor(log2_magnitude);
  const double r = log2_magnitude - f;
  const double ir = std::round(std::ldexp(std::exp2(r), shift_precision));
  return {static_cast<std::int32_t>(f), r, static_cast<std::int32_t>(ir)};
}

ShiftArtifact integerize(const TwinLogArtifact& artifact, const ShiftConfig& config) {
  config.validate();
  artifact.validate();
  ShiftArtifact s;
  s.exponents = Matrix<std::int32_t>(artifact.rows(), artifact.cols());
  s.residuals = Matrix<std::int32_t>(artifact.rows(), artifact.cols());
  s.masks = artifact.masks;
  s.config = config;
  for (std::size_t r = 0; r < artifact.rows(); ++r) {
    const auto& p = artifact.channels[r];
    for (std::size_t c = 0; c < artifact.cols(); ++c) {
      const Sign sign = artifact.masks.at(r, c);
      if (sign == Sign::zero) continue;
      const double e = sign == Sign::pos ? tlq_exponent(p.s_pos, p.z_pos, artifact.codes(r, c))
                                         : tlq_exponent(p.s_neg, p.z_neg, artifact.codes(r, c));
      const auto split = split_exponent(e, config.shift_precision);
      s.exponents(r, c) = split.exponent;
      s.residuals(r, c) = split.integerized;
    }
  }
  return s;
}

void ShiftArtifact::validate() const {
  config.validate();
  const auto same_shape = [&](const auto& m) { return m.rows() == rows() && m.cols() == cols(); };
  if (!same_shape(residuals) || !same_shape(masks.pos) || !same_shape(masks.neg) || !same_shape(masks.zero)) {
    throw InconsistentArtifact("shift artifact component dims differ");
  }
  const std::int32_t lo = std::int32_t{1} << config.shift_precision;
  const std::int32_t hi = lo << 1;
  for (std::size_t r = 0; r < rows(); ++r) {
    for (std::size_t c = 0; c < cols(); ++c) {
      if (masks.pos(r, c) + masks.neg(r, c) + masks.zero(r, c) != 1) {
        throw InconsistentArtifact("shift artifact masks do not partition the matrix");
      }
      const std::int32_t v = residuals(r, c);
      const bool ok = masks.zero(r, c) ? v == 0 : (v >= lo && v <= hi);
      if (!ok) throw InconsistentArtifact("residual integer " + std::to_string(v) + " outside its range");
    }
  }
}

double ShiftArtifact::weight_value(std::size_t r, std::size_t c) const {
  const Sign sign = masks.at(r, c);
  if (sign == Sign::zero) return 0.0;
  const double mag = std::ldexp(static_cast<double>(residuals(r, c)), exponents(r, c) - config.shift_precision);
  return sign == Sign::pos ? mag : -mag;
}

double residual_error_bound(const ShiftConfig& config) {
  config.validate();
  return std::ldexp(1.0, -config.shift_precision - 1);
}

TokenCodes TokenCodes::from(const RowQuantized& q) {
  TokenCodes t;
  t.codes = q.codes;
  for (const auto& p : q.params) {
    t.scales.push_back(p.scale);
    t.zero_points.push_back(p.zero_point);
  }
  return t;
}

Matrix<double> shift_matmul(const ShiftArtifact& weights, const TokenCodes& activations) {
  weights.validate();
  const std::size_t tokens = activations.codes.rows();
  const std::size_t in = weights.cols();
  if (activations.codes.cols() != in) {
    throw std::invalid_argument("shift_matmul: activation width " + std::to_string(activations.codes.cols()) +
                                " != weight in_channels " + std::to_string(in));
  }
  if (activations.scales.size() != tokens || activations.zero_points.size() != tokens) {
    throw std::invalid_argument("shift_matmul: one scale and zero point per token required");
  }
  const int shift_precision = weights.config.shift_precision;

  Matrix<double> out(tokens, weights.rows(), 0.0);
  std::vector<int> shifts(in);
  std::vector<i128> terms(in);  // signed residual << shift, per input channel
  for (std::size_t o = 0; o < weights.rows(); ++o) {
    // Align the row to its smallest effective shift (f - I) so every term
    // becomes an exact left shift; the common factor 2^base is applied once.
    int base = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i < in; ++i) {
      if (!weights.masks.zero(o, i)) base = std::min(base, weights.exponents(o, i) - shift_precision);
    }
    if (base == std::numeric_limits<int>::max()) continue;  // all-zero row

    i128 row_sum = 0;
    for (std::size_t i = 0; i < in; ++i) {
      terms[i] = 0;
      if (weights.masks.zero(o, i)) continue;
      shifts[i] = weights.exponents(o, i) - shift_precision - base;
      const i128 residual = weights.masks.neg(o, i) ? -i128{weights.residuals(o, i)} : i128{weights.residuals(o, i)};
      terms[i] = residual;
      row_sum = add_checked(row_sum, shifted(residual, shifts[i], "weight row sum"));
    }

    for (std::size_t t = 0; t < tokens; ++t) {
      i128 acc = 0;
      const auto codes = activations.codes.row(t);
      for (std::size_t i = 0; i < in; ++i) {
        if (terms[i] == 0 || codes[i] == 0) continue;
        acc = add_checked(acc, shifted(terms[i] * codes[i], shifts[i], "shifted product"));
      }
      acc = add_checked(acc, mul_checked(row_sum, activations.zero_points[t]));
      out(t, o) = std::ldexp(static_cast<double>(acc), base) * static_cast<double>(activations.scales[t]);
    }
  }
  return out;
}

}  // namespace lrq
