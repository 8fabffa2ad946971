#include "lrq/twinlog.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "lrq/uniquant.hpp"

namespace lrq {

namespace {

void check_bits(int bits) {
  if (bits < kMinTwinLogBits || bits > kMaxTwinLogBits) {
    throw std::invalid_argument("twin-log bits must be in [" + std::to_string(kMinTwinLogBits) + ", " +
                                std::to_string(kMaxTwinLogBits) + "], got " + std::to_string(bits));
  }
}

void check_clip(float v, const char* name) {
  if (!(v > 0.0f && v <= 1.0f)) {
    throw std::invalid_argument(std::string("clip factor ") + name + " must be in (0, 1], got " + std::to_string(v));
  }
}

struct SideParams {
  float scale = 1.0f;
  std::int32_t zero_point = 0;
};

/// Scale and zero point of one log-magnitude side. `clip` multiplies the
/// side's maximum log value before the range is spread over `levels` steps.
SideParams fit_side(std::span<const double> logs, std::int32_t levels, float clip) {
  if (logs.empty()) return {};
  const auto [lo_it, hi_it] = std::minmax_element(logs.begin(), logs.end());
  const double lo = *lo_it, hi = *hi_it;
  const SideParams degenerate{1.0f, static_cast<std::int32_t>(round_half_away(lo))};
  if (hi == lo) return degenerate;

  SideParams p;
  p.scale = static_cast<float>((static_cast<double>(clip) * hi - lo) / static_cast<double>(levels));
  // Clipping can fold the top of the range below the minimum.
  if (!(p.scale > 0.0f) || !std::isfinite(p.scale)) return degenerate;
  const double z = round_half_away(lo / static_cast<double>(p.scale));
  if (std::fabs(z) > static_cast<double>(std::numeric_limits<std::int32_t>::max() / 2)) return degenerate;
  p.zero_point = static_cast<std::int32_t>(z);
  return p;
}

std::uint8_t side_code(double log_mag, const SideParams& p, std::int32_t levels) {
  const double q = round_half_away(log_mag / static_cast<double>(p.scale)) - p.zero_point;
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, static_cast<double>(levels)));
}

struct SplitRow {
  std::vector<Sign> signs;
  std::vector<double> logs;  // log2|w| per element, 0 for zero-mask elements
  std::vector<double> pos_logs;
  std::vector<double> neg_logs;
};

SplitRow split_row(std::span<const float> w_row) {
  SplitRow s;
  s.signs.resize(w_row.size());
  s.logs.assign(w_row.size(), 0.0);
  for (std::size_t i = 0; i < w_row.size(); ++i) {
    s.signs[i] = classify(w_row[i]);
    if (s.signs[i] == Sign::zero) continue;
    s.logs[i] = std::log2(std::fabs(static_cast<double>(w_row[i])));
    (s.signs[i] == Sign::pos ? s.pos_logs : s.neg_logs).push_back(s.logs[i]);
  }
  return s;
}

/// Dequantized magnitudes of every element on one side for a given clip.
std::vector<float> side_values(const SplitRow& row, Sign side, int bits, float clip) {
  const bool pos = side == Sign::pos;
  const std::int32_t levels = pos ? positive_levels(bits) : negative_levels(bits);
  const SideParams p = fit_side(pos ? row.pos_logs : row.neg_logs, levels, clip);
  TwinLogChannelParams cp;
  (pos ? cp.s_pos : cp.s_neg) = p.scale;
  (pos ? cp.z_pos : cp.z_neg) = p.zero_point;
  std::vector<float> out(row.signs.size(), 0.0f);
  for (std::size_t i = 0; i < row.signs.size(); ++i) {
    if (row.signs[i] != side) continue;
    out[i] = tlq_dequantize_value(side, side_code(row.logs[i], p, levels), cp);
  }
  return out;
}

}  // namespace

Sign classify(float w) {
  if (!std::isfinite(w)) throw std::invalid_argument("twin-log quantizer: non-finite weight");
  if (std::fabs(static_cast<double>(w)) < kZeroEpsilon) return Sign::zero;
  return w > 0.0f ? Sign::pos : Sign::neg;
}

Sign SignMasks::at(std::size_t r, std::size_t c) const {
  if (pos(r, c)) return Sign::pos;
  if (neg(r, c)) return Sign::neg;
  return Sign::zero;
}

SignMasks build_sign_masks(const WeightMatrix& w) {
  SignMasks m{BitMatrix(w.rows(), w.cols()), BitMatrix(w.rows(), w.cols()), BitMatrix(w.rows(), w.cols())};
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) {
      switch (classify(w(r, c))) {
        case Sign::pos:
          m.pos(r, c) = 1;
          break;
        case Sign::neg:
          m.neg(r, c) = 1;
          break;
        case Sign::zero:
          m.zero(r, c) = 1;
          break;
      }
    }
  }
  return m;
}

float tlq_dequantize_value(Sign sign, std::uint8_t code, const TwinLogChannelParams& p) {
  switch (sign) {
    case Sign::pos:
      return static_cast<float>(std::exp2(tlq_exponent(p.s_pos, p.z_pos, code)));
    case Sign::neg:
      return static_cast<float>(-std::exp2(tlq_exponent(p.s_neg, p.z_neg, code)));
    case Sign::zero:
      break;
  }
  return 0.0f;
}

TwinLogChannel tlq_quantize_channel(std::span<const float> w_row, int bits, float alpha, float beta) {
  check_bits(bits);
  check_clip(alpha, "alpha");
  check_clip(beta, "beta");

  const SplitRow row = split_row(w_row);
  const std::int32_t lp = positive_levels(bits), ln = negative_levels(bits);
  const SideParams pos = fit_side(row.pos_logs, lp, alpha);
  const SideParams neg = fit_side(row.neg_logs, ln, beta);

  TwinLogChannel ch;
  ch.params = {pos.scale, neg.scale, pos.zero_point, neg.zero_point, alpha, beta};
  ch.signs = row.signs;
  ch.codes.assign(w_row.size(), 0);
  for (std::size_t i = 0; i < w_row.size(); ++i) {
    if (row.signs[i] == Sign::pos) ch.codes[i] = side_code(row.logs[i], pos, lp);
    if (row.signs[i] == Sign::neg) ch.codes[i] = side_code(row.logs[i], neg, ln);
  }
  return ch;
}

std::vector<float> tlq_dequantize_channel(const TwinLogChannel& ch) {
  std::vector<float> out(ch.codes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = tlq_dequantize_value(ch.signs[i], ch.codes[i], ch.params);
  return out;
}

double channel_squared_error(std::span<const float> w_row, const TwinLogChannel& channel) {
  const auto deq = tlq_dequantize_channel(channel);
  double err = 0.0;
  for (std::size_t i = 0; i < deq.size(); ++i) {
    const double d = static_cast<double>(deq[i]) - static_cast<double>(w_row[i]);
    err += d * d;
  }
  return err;
}

std::vector<float> ClipRange::values() const {
  if (!(step > 0.0) || !(stop >= start)) throw std::invalid_argument("clip range needs step > 0 and stop >= start");
  const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<float> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(static_cast<float>(start + static_cast<double>(i) * step));
  return out;
}

ClipGrid ClipGrid::from_ranges(const ClipRange& alpha, const ClipRange& beta) {
  ClipGrid g{alpha.values(), beta.values()};
  g.validate();
  return g;
}

ClipGrid ClipGrid::default_grid() { return from_ranges(ClipRange{}, ClipRange{}); }

ClipGrid ClipGrid::singleton(float alpha, float beta) {
  ClipGrid g{{alpha}, {beta}};
  g.validate();
  return g;
}

void ClipGrid::validate() const {
  if (alphas.empty() || betas.empty()) throw std::invalid_argument("clip grid must be nonempty");
  for (float a : alphas) check_clip(a, "alpha");
  for (float b : betas) check_clip(b, "beta");
}

ClipChoice clip_grid_search(std::span<const float> w_row, int bits, const ClipGrid& grid) {
  check_bits(bits);
  grid.validate();

  // The two sides are fitted independently, so each candidate's per-element
  // dequantized values are computed once per factor and combined per pair.
  std::vector<float> alphas = grid.alphas, betas = grid.betas;
  std::sort(alphas.begin(), alphas.end(), std::greater<>());
  std::sort(betas.begin(), betas.end(), std::greater<>());
  alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());
  betas.erase(std::unique(betas.begin(), betas.end()), betas.end());

  const SplitRow row = split_row(w_row);
  std::vector<std::vector<float>> pos_tables, neg_tables;
  for (float a : alphas) pos_tables.push_back(side_values(row, Sign::pos, bits, a));
  for (float b : betas) neg_tables.push_back(side_values(row, Sign::neg, bits, b));

  ClipChoice best{alphas.front(), betas.front(), std::numeric_limits<double>::infinity()};
  for (std::size_t ia = 0; ia < alphas.size(); ++ia) {
    for (std::size_t ib = 0; ib < betas.size(); ++ib) {
      double err = 0.0;
      for (std::size_t i = 0; i < w_row.size(); ++i) {
        float deq = 0.0f;
        if (row.signs[i] == Sign::pos) deq = pos_tables[ia][i];
        if (row.signs[i] == Sign::neg) deq = neg_tables[ib][i];
        const double d = static_cast<double>(deq) - static_cast<double>(w_row[i]);
        err += d * d;
      }
      if (err < best.squared_error) best = {alphas[ia], betas[ib], err};
    }
  }
  return best;
}

TwinLogChannel TwinLogArtifact::channel(std::size_t r) const {
  TwinLogChannel ch;
  ch.params = channels.at(r);
  ch.codes.assign(codes.row(r).begin(), codes.row(r).end());
  ch.signs.resize(cols());
  for (std::size_t c = 0; c < cols(); ++c) ch.signs[c] = masks.at(r, c);
  return ch;
}

void TwinLogArtifact::validate() const {
  if (bits < kMinTwinLogBits || bits > kMaxTwinLogBits) throw InconsistentArtifact("artifact bits out of range");
  const auto same_shape = [&](const BitMatrix& m) { return m.rows() == rows() && m.cols() == cols(); };
  if (!same_shape(masks.pos) || !same_shape(masks.neg) || !same_shape(masks.zero)) {
    throw InconsistentArtifact("mask dims differ from code dims");
  }
  if (channels.size() != rows()) throw InconsistentArtifact("one parameter set per channel required");
  const std::int32_t lp = positive_levels(bits), ln = negative_levels(bits);
  for (std::size_t r = 0; r < rows(); ++r) {
    for (std::size_t c = 0; c < cols(); ++c) {
      const int set = masks.pos(r, c) + masks.neg(r, c) + masks.zero(r, c);
      if (set != 1) {
        throw InconsistentArtifact("masks do not partition element (" + std::to_string(r) + ", " +
                                   std::to_string(c) + ")");
      }
      const std::int32_t code = codes(r, c);
      const bool ok = masks.pos(r, c) ? code <= lp : masks.neg(r, c) ? code <= ln : code == 0;
      if (!ok) {
        throw InconsistentArtifact("code " + std::to_string(code) + " invalid for mask at (" + std::to_string(r) +
                                   ", " + std::to_string(c) + ")");
      }
    }
  }
}

TwinLogArtifact tlq_quantize_matrix(const WeightMatrix& w, int bits, const ClipGrid& grid) {
  check_bits(bits);
  grid.validate();
  TwinLogArtifact a;
  a.bits = bits;
  a.masks = build_sign_masks(w);
  a.codes = Matrix<std::uint8_t>(w.rows(), w.cols());
  a.channels.reserve(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const ClipChoice choice = clip_grid_search(w.row(r), bits, grid);
    TwinLogChannel ch = tlq_quantize_channel(w.row(r), bits, choice.alpha, choice.beta);
    std::copy(ch.codes.begin(), ch.codes.end(), a.codes.row(r).begin());
    a.channels.push_back(ch.params);
  }
  return a;
}

WeightMatrix tlq_dequantize(const TwinLogArtifact& artifact) {
  artifact.validate();
  WeightMatrix out(artifact.rows(), artifact.cols());
  for (std::size_t r = 0; r < artifact.rows(); ++r) {
    const auto& p = artifact.channels[r];
    for (std::size_t c = 0; c < artifact.cols(); ++c) {
      out(r, c) = tlq_dequantize_value(artifact.masks.at(r, c), artifact.codes(r, c), p);
    }
  }
  return out;
}

}  // namespace lrq
