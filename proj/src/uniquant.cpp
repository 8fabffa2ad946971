#include "lrq/uniquant.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace lrq {

namespace {

void check_bits(int bits) {
  if (bits < kMinUniformBits || bits > kMaxUniformBits) {
    throw std::invalid_argument("uniform quantizer bits must be in [" + std::to_string(kMinUniformBits) + ", " +
                                std::to_string(kMaxUniformBits) + "], got " + std::to_string(bits));
  }
}

RowQuantized quantize_rows(const Matrix<float>& m, int bits, Granularity g) {
  check_bits(bits);
  RowQuantized out{Matrix<std::int32_t>(m.rows(), m.cols()), {}};
  out.params.reserve(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto q = uniform_quantize(m.row(r), bits, g);
    std::copy(q.codes.begin(), q.codes.end(), out.codes.row(r).begin());
    out.params.push_back(q.params);
  }
  return out;
}

}  // namespace

UniformQuantized uniform_quantize(std::span<const float> x, int bits, Granularity granularity) {
  if (x.empty()) throw std::invalid_argument("uniform_quantize: empty input");
  check_bits(bits);

  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw std::invalid_argument("uniform_quantize: non-finite input");

  UniformParams p;
  p.bits = bits;
  p.granularity = granularity;
  if (hi == lo) {
    p.scale = 1.0f;
  } else {
    p.scale = static_cast<float>((hi - lo) / static_cast<double>(p.max_code()));
    // A range below float resolution collapses to the constant rule.
    if (!(p.scale > 0.0f)) p.scale = 1.0f;
    // Zero points must stay representable next to any code.
    if (std::fabs(lo / p.scale) > static_cast<double>(std::numeric_limits<std::int32_t>::max() / 2)) p.scale = 1.0f;
  }
  const double s = p.scale;
  if (std::fabs(lo / s) > static_cast<double>(std::numeric_limits<std::int32_t>::max() / 2)) {
    throw std::invalid_argument("uniform_quantize: zero point out of int32 range");
  }
  p.zero_point = static_cast<std::int32_t>(round_half_away(lo / s));

  UniformQuantized out{std::vector<std::int32_t>(x.size()), p};
  const double qmax = p.max_code();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double q = round_half_away(static_cast<double>(x[i]) / s) - p.zero_point;
    out.codes[i] = static_cast<std::int32_t>(std::clamp(q, 0.0, qmax));
  }
  return out;
}

std::vector<float> uniform_dequantize(std::span<const std::int32_t> codes, const UniformParams& p) {
  std::vector<float> out(codes.size());
  const double s = p.scale;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] < 0 || codes[i] > p.max_code()) {
      throw std::out_of_range("uniform_dequantize: code " + std::to_string(codes[i]) + " outside [0, " +
                              std::to_string(p.max_code()) + "]");
    }
    out[i] = static_cast<float>(s * (static_cast<double>(codes[i]) + p.zero_point));
  }
  return out;
}

RowQuantized per_channel_quantize(const WeightMatrix& w, int bits) {
  return quantize_rows(w, bits, Granularity::per_channel);
}

RowQuantized per_token_quantize(const ActivationBatch& x, int bits) { return per_token_quantize(x.values, bits); }

RowQuantized per_token_quantize(const Matrix<float>& tokens, int bits) {
  if (tokens.empty()) throw std::invalid_argument("per_token_quantize: empty batch");
  return quantize_rows(tokens, bits, Granularity::per_token);
}

Matrix<float> dequantize_rows(const RowQuantized& q) {
  Matrix<float> out(q.codes.rows(), q.codes.cols());
  for (std::size_t r = 0; r < q.codes.rows(); ++r) {
    auto v = uniform_dequantize(q.codes.row(r), q.params[r]);
    std::copy(v.begin(), v.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace lrq
