#include "lrq/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lrq {

namespace {

constexpr double kOrthogonalityTolerance = 1e-5;

double max_abs(const Matrix<double>& m) {
  double out = 0.0;
  for (double v : m.flat()) out = std::max(out, std::fabs(v));
  return out;
}

std::vector<double> channel_ranges(const Matrix<float>& x) {
  std::vector<double> lo(x.cols(), 0.0), hi(x.cols(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double v = x(r, c);
      if (r == 0 || v < lo[c]) lo[c] = v;
      if (r == 0 || v > hi[c]) hi[c] = v;
    }
  }
  std::vector<double> out(x.cols());
  for (std::size_t c = 0; c < x.cols(); ++c) out[c] = hi[c] - lo[c];
  return out;
}

double population_variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / static_cast<double>(v.size());
}

void check_width(const Matrix<float>& x, const BlockLayout& layout) {
  if (x.cols() != layout.channels()) {
    throw std::invalid_argument("calibration width " + std::to_string(x.cols()) + " != layout channels " +
                                std::to_string(layout.channels()));
  }
}

}  // namespace

// --- statistics ---------------------------------------------------------------

OutlierProfile outlier_profile(const Matrix<float>& tokens) {
  OutlierProfile p;
  p.channel_max_abs.assign(tokens.cols(), 0.0f);
  std::size_t over5 = 0, over10 = 0, over100 = 0;
  for (std::size_t r = 0; r < tokens.rows(); ++r) {
    for (std::size_t c = 0; c < tokens.cols(); ++c) {
      const float a = std::fabs(tokens(r, c));
      p.channel_max_abs[c] = std::max(p.channel_max_abs[c], a);
      over5 += a > 5.0f;
      over10 += a > 10.0f;
      over100 += a > 100.0f;
      p.peak = std::max(p.peak, static_cast<double>(a));
    }
  }
  const double n = tokens.empty() ? 1.0 : static_cast<double>(tokens.size());
  p.fraction_over_5 = static_cast<double>(over5) / n;
  p.fraction_over_10 = static_cast<double>(over10) / n;
  p.fraction_over_100 = static_cast<double>(over100) / n;
  return p;
}

LayerStats compute_J(const ActivationBatch& x) {
  if (x.empty()) throw std::invalid_argument("compute_J: empty activation batch");
  double sum_sq = 0.0;
  for (float v : x.values.flat()) sum_sq += static_cast<double>(v) * static_cast<double>(v);
  LayerStats s;
  s.batches = x.batches;
  s.tokens = x.tokens;
  s.channels = x.channels;
  const double count = static_cast<double>(x.batches) * static_cast<double>(x.tokens) * static_cast<double>(x.channels);
  s.J = std::sqrt(sum_sq) / std::sqrt(count);
  s.profile = outlier_profile(x.values);
  return s;
}

// --- greedy rotation ----------------------------------------------------------

void spread_pivot(std::span<double> row, std::size_t pivot) {
  std::swap(row[0], row[pivot]);
  hadamard_transform(row);
  std::swap(row[0], row[pivot]);
}

GreedyRotation greedy_rotation(const Matrix<float>& x_cal, const BlockLayout& layout, int steps_k) {
  check_width(x_cal, layout);
  if (steps_k < 0) throw std::invalid_argument("greedy_rotation: steps_k must be >= 0");

  GreedyRotation out{BlockDiagonal{layout, {}}, {}};
  const auto offs = layout.offsets();
  for (std::size_t b = 0; b < layout.sizes.size(); ++b) {
    const std::size_t n = layout.sizes[b], off = offs[b];
    Matrix<double> xb(x_cal.rows(), n);
    for (std::size_t t = 0; t < x_cal.rows(); ++t) {
      for (std::size_t j = 0; j < n; ++j) xb(t, j) = x_cal(t, off + j);
    }
    Matrix<double> rot(n, n);
    for (std::size_t i = 0; i < n; ++i) rot(i, i) = 1.0;

    GreedyTrace trace;
    double current = max_abs(xb);
    trace.max_abs.push_back(current);
    for (int step = 0; step < steps_k && n > 1; ++step) {
      std::size_t pivot = 0;
      double pivot_mag = -1.0;
      for (std::size_t t = 0; t < xb.rows(); ++t) {
        for (std::size_t j = 0; j < n; ++j) {
          const double a = std::fabs(xb(t, j));
          if (a > pivot_mag || (a == pivot_mag && j < pivot)) {
            pivot_mag = a;
            pivot = j;
          }
        }
      }
      Matrix<double> candidate = xb;
      for (std::size_t t = 0; t < candidate.rows(); ++t) spread_pivot(candidate.row(t), pivot);
      const double next = max_abs(candidate);
      if (!(next < current)) break;
      xb = std::move(candidate);
      for (std::size_t i = 0; i < n; ++i) spread_pivot(rot.row(i), pivot);
      current = next;
      trace.pivots.push_back(pivot);
      trace.max_abs.push_back(current);
    }

    Matrix<float> block(n, n);
    for (std::size_t i = 0; i < rot.size(); ++i) block.flat()[i] = static_cast<float>(rot.flat()[i]);
    out.rotation.blocks.push_back(std::move(block));
    out.traces.push_back(std::move(trace));
  }
  return out;
}

// --- zigzag permutation -------------------------------------------------------

double block_range_variance(const Matrix<float>& x_cal, const BlockLayout& layout, const Permutation& p) {
  check_width(x_cal, layout);
  const auto ranges = channel_ranges(x_cal);
  const auto offs = layout.offsets();
  std::vector<double> block_max(layout.sizes.size(), 0.0);
  for (std::size_t b = 0; b < layout.sizes.size(); ++b) {
    for (std::size_t j = 0; j < layout.sizes[b]; ++j) {
      block_max[b] = std::max(block_max[b], ranges[p.source[offs[b] + j]]);
    }
  }
  return population_variance(block_max);
}

Permutation zigzag_permutation(const Matrix<float>& x_cal, const BlockLayout& layout) {
  check_width(x_cal, layout);
  const std::size_t channels = x_cal.cols();
  const std::size_t blocks = layout.sizes.size();
  const auto ranges = channel_ranges(x_cal);

  std::vector<std::size_t> order(channels);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ranges[a] > ranges[b]; });

  std::vector<std::vector<std::size_t>> assigned(blocks);
  std::size_t k = 0;
  for (std::size_t ch : order) {
    for (;; ++k) {
      const std::size_t phase = k % (2 * blocks);
      const std::size_t b = phase < blocks ? phase : 2 * blocks - 1 - phase;
      if (assigned[b].size() < layout.sizes[b]) {
        assigned[b].push_back(ch);
        ++k;
        break;
      }
    }
  }

  Permutation zig;
  for (const auto& members : assigned) zig.source.insert(zig.source.end(), members.begin(), members.end());

  const Permutation id = Permutation::identity(channels);
  if (block_range_variance(x_cal, layout, zig) < block_range_variance(x_cal, layout, id)) return zig;
  return id;
}

DualTransform build_dual_transform(const Matrix<float>& x_cal, const BlockLayout& layout, int steps_k) {
  DualTransform d;
  auto first = greedy_rotation(x_cal, layout, steps_k);
  const Matrix<float> x1 = multiply_right(x_cal, first.rotation);
  d.perm = zigzag_permutation(x1, layout);
  const Matrix<float> x2 = multiply_right(x1, d.perm);
  auto second = greedy_rotation(x2, layout, steps_k);
  d.r1 = std::move(first.rotation);
  d.r1_traces = std::move(first.traces);
  d.r2 = std::move(second.rotation);
  d.r2_traces = std::move(second.traces);
  return d;
}

// --- plans --------------------------------------------------------------------

std::string to_string(PlanKind kind) {
  switch (kind) {
    case PlanKind::identity:
      return "identity";
    case PlanKind::hadamard:
      return "hadamard";
    case PlanKind::dual:
      return "dual";
  }
  return "?";
}

PlanKind parse_plan_kind(const std::string& name) {
  if (name == "identity") return PlanKind::identity;
  if (name == "hadamard") return PlanKind::hadamard;
  if (name == "dual") return PlanKind::dual;
  throw std::invalid_argument("unknown rotation plan kind '" + name + "'");
}

void RotationConfig::validate() const {
  if (!is_power_of_two(block_size)) {
    throw std::invalid_argument("block_size must be a power of two, got " + std::to_string(block_size));
  }
  if (steps_k < 0) throw std::invalid_argument("steps_k must be >= 0");
}

RotationPlan RotationPlan::identity(std::size_t channels) {
  RotationPlan p;
  p.kind = PlanKind::identity;
  p.channels = channels;
  return p;
}

void RotationPlan::validate() const {
  const auto check_block = [&](const BlockDiagonal& b, const char* name) {
    if (b.dim() != channels) throw std::invalid_argument(std::string(name) + " dim does not match plan channels");
    if (b.blocks.size() != b.layout.sizes.size()) throw std::invalid_argument(std::string(name) + " block count mismatch");
    for (std::size_t i = 0; i < b.blocks.size(); ++i) {
      if (b.blocks[i].rows() != b.layout.sizes[i] || b.blocks[i].cols() != b.layout.sizes[i]) {
        throw std::invalid_argument(std::string(name) + " block shape mismatch");
      }
    }
    const double err = b.orthogonality_error();
    if (!(err < kOrthogonalityTolerance)) {
      throw std::invalid_argument(std::string(name) + " is not orthogonal (error " + std::to_string(err) + ")");
    }
  };
  switch (kind) {
    case PlanKind::identity:
      break;
    case PlanKind::hadamard:
      check_block(r1, "R1");
      break;
    case PlanKind::dual:
      check_block(r1, "R1");
      check_block(r2, "R2");
      if (perm.source.size() != channels || !perm.is_valid()) throw std::invalid_argument("P is not a permutation");
      break;
  }
}

Matrix<double> RotationPlan::dense() const {
  const auto product = [](const Matrix<double>& a, const Matrix<double>& b) {
    Matrix<double> out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
      for (std::size_t k = 0; k < a.cols(); ++k) {
        const double v = a(i, k);
        if (v == 0.0) continue;
        for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += v * b(k, j);
      }
    }
    return out;
  };
  switch (kind) {
    case PlanKind::identity:
      return Permutation::identity(channels).dense();
    case PlanKind::hadamard:
      return r1.dense();
    case PlanKind::dual:
      return product(product(r1.dense(), perm.dense()), r2.dense());
  }
  return {};
}

RotationPlan hadamard_plan(std::size_t channels, const RotationConfig& config) {
  config.validate();
  RotationPlan p;
  p.kind = PlanKind::hadamard;
  p.channels = channels;
  p.block_size = config.block_size;
  p.r1 = BlockDiagonal::hadamard(BlockLayout::for_channels(channels, config.block_size));
  return p;
}

RotationPlan dual_plan(const Matrix<float>& x_cal, const RotationConfig& config) {
  config.validate();
  RotationPlan p;
  p.kind = PlanKind::dual;
  p.channels = x_cal.cols();
  p.block_size = config.block_size;
  auto d = build_dual_transform(x_cal, BlockLayout::for_channels(x_cal.cols(), config.block_size), config.steps_k);
  p.r1 = std::move(d.r1);
  p.perm = std::move(d.perm);
  p.r2 = std::move(d.r2);
  return p;
}

PlanKind dispatch_kind(double J, double threshold) { return J < threshold ? PlanKind::hadamard : PlanKind::dual; }

RotationPlan select_rotation_plan(const LayerStats& stats, double threshold, const Matrix<float>& x_cal,
                                  const RotationConfig& config) {
  RotationPlan p = dispatch_kind(stats.J, threshold) == PlanKind::hadamard ? hadamard_plan(x_cal.cols(), config)
                                                                           : dual_plan(x_cal, config);
  p.threshold = threshold;
  p.J = stats.J;
  return p;
}

Matrix<float> apply_rotation(const Matrix<float>& m, const RotationPlan& plan, Side /*side*/) {
  // Both sides are right-multiplied: weights compensate as W T, i.e. T^T W^T.
  if (m.cols() != plan.channels) {
    throw std::invalid_argument("apply_rotation: input width " + std::to_string(m.cols()) + " != plan channels " +
                                std::to_string(plan.channels));
  }
  switch (plan.kind) {
    case PlanKind::identity:
      return m;
    case PlanKind::hadamard:
      return multiply_right(m, plan.r1);
    case PlanKind::dual:
      return multiply_right(multiply_right(multiply_right(m, plan.r1), plan.perm), plan.r2);
  }
  return m;
}

// --- smoothing ----------------------------------------------------------------

SmoothingVector SmoothingVector::unit(std::size_t channels) {
  return SmoothingVector{std::vector<float>(channels, 1.0f), kDefaultMigrationStrength};
}

SmoothingVector compute_smoothing(const Matrix<float>& x_cal, const WeightMatrix& w, double strength) {
  if (!(strength >= 0.0 && strength <= 1.0)) throw std::invalid_argument("migration strength must be in [0, 1]");
  if (x_cal.cols() != w.cols()) {
    throw std::invalid_argument("smoothing: activation channels " + std::to_string(x_cal.cols()) +
                                " != weight in_channels " + std::to_string(w.cols()));
  }
  std::vector<double> ax(x_cal.cols(), 0.0), aw(w.cols(), 0.0);
  for (std::size_t r = 0; r < x_cal.rows(); ++r) {
    for (std::size_t c = 0; c < x_cal.cols(); ++c) ax[c] = std::max(ax[c], std::fabs(static_cast<double>(x_cal(r, c))));
  }
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) aw[c] = std::max(aw[c], std::fabs(static_cast<double>(w(r, c))));
  }
  SmoothingVector s;
  s.migration_strength = strength;
  s.d.resize(w.cols());
  for (std::size_t c = 0; c < w.cols(); ++c) {
    const double num = std::pow(std::max(ax[c], kSmoothingFloor), strength);
    const double den = std::pow(std::max(aw[c], kSmoothingFloor), 1.0 - strength);
    s.d[c] = static_cast<float>(num / den);
  }
  return s;
}

Matrix<float> smooth_activations(const Matrix<float>& x, const SmoothingVector& s) {
  if (x.cols() != s.d.size()) throw std::invalid_argument("smoothing vector size != activation channels");
  Matrix<float> out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      out(r, c) = static_cast<float>(static_cast<double>(x(r, c)) / static_cast<double>(s.d[c]));
    }
  }
  return out;
}

WeightMatrix smooth_weights(const WeightMatrix& w, const SmoothingVector& s) {
  if (w.cols() != s.d.size()) throw std::invalid_argument("smoothing vector size != weight in_channels");
  WeightMatrix out(w.rows(), w.cols());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) {
      out(r, c) = static_cast<float>(static_cast<double>(w(r, c)) * static_cast<double>(s.d[c]));
    }
  }
  return out;
}

SmoothMigration smooth_migrate(const Matrix<float>& x_cal, const WeightMatrix& w, double strength) {
  SmoothMigration m;
  m.smoothing = compute_smoothing(x_cal, w, strength);
  m.x = smooth_activations(x_cal, m.smoothing);
  m.w = smooth_weights(w, m.smoothing);
  return m;
}

}  // namespace lrq
