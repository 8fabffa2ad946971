#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lrq/tensor.hpp"

namespace lrq {

// --- layer statistics -------------------------------------------------------

struct OutlierProfile {
  std::vector<float> channel_max_abs;
  double fraction_over_5 = 0.0;
  double fraction_over_10 = 0.0;
  double fraction_over_100 = 0.0;
  double peak = 0.0;
};

/// J = ||X||_F / sqrt(B*N*C) plus the magnitude profile, in one pass.
struct LayerStats {
  double J = 0.0;
  std::size_t batches = 0;
  std::size_t tokens = 0;
  std::size_t channels = 0;
  OutlierProfile profile;
};

LayerStats compute_J(const ActivationBatch& x);
OutlierProfile outlier_profile(const Matrix<float>& tokens);

// --- Hadamard ---------------------------------------------------------------

bool is_power_of_two(std::size_t n);

/// Normalized Sylvester-Hadamard matrix; n must be a power of two.
Matrix<double> hadamard_matrix(std::size_t n);

/// In-place v <- v * H_n / sqrt(n) for power-of-two n.
void hadamard_transform(std::span<double> v);

// --- block-diagonal transforms ----------------------------------------------

/// Channel partition into power-of-two blocks: full blocks of block_size,
/// then the remainder split into descending powers of two.
struct BlockLayout {
  std::vector<std::size_t> sizes;

  static BlockLayout for_channels(std::size_t channels, std::size_t block_size);
  std::size_t channels() const;
  std::vector<std::size_t> offsets() const;
  bool operator==(const BlockLayout&) const = default;
};

struct BlockDiagonal {
  BlockLayout layout;
  std::vector<Matrix<float>> blocks;

  static BlockDiagonal identity(const BlockLayout& layout);
  static BlockDiagonal hadamard(const BlockLayout& layout);

  std::size_t dim() const { return layout.channels(); }
  bool is_identity() const;
  Matrix<double> dense() const;
  /// max |B * B^T - I| over all blocks.
  double orthogonality_error() const;
  bool operator==(const BlockDiagonal&) const = default;
};

/// Column reorder: (X * P)[:, j] = X[:, source[j]].
struct Permutation {
  std::vector<std::size_t> source;

  static Permutation identity(std::size_t n);
  bool is_identity() const;
  bool is_valid() const;
  Matrix<double> dense() const;
  bool operator==(const Permutation&) const = default;
};

/// X * B, accumulated in double, for a token-major matrix X.
Matrix<float> multiply_right(const Matrix<float>& x, const BlockDiagonal& b);
Matrix<float> multiply_right(const Matrix<float>& x, const Permutation& p);

// --- greedy outlier-aware rotation ------------------------------------------

/// Per block: pivot channel of every accepted step and the block max-abs
/// before the first step and after each accepted step.
struct GreedyTrace {
  std::vector<std::size_t> pivots;
  std::vector<double> max_abs;
};

struct GreedyRotation {
  BlockDiagonal rotation;
  std::vector<GreedyTrace> traces;
};

/// Each step swaps the block's largest max-abs channel c* to position 0,
/// applies the normalized Hadamard spreading matrix and swaps back
/// (E_c* H E_c*). A step is kept only if the block max-abs strictly drops;
/// the first rejected step ends the block.
GreedyRotation greedy_rotation(const Matrix<float>& x_cal, const BlockLayout& layout, int steps_k);

/// The single greedy step with pivot c applied to one row of a block.
void spread_pivot(std::span<double> row, std::size_t pivot);

/// Channels sorted by descending range (max - min), ties by index, dealt
/// across blocks in serpentine order. Falls back to identity unless the
/// variance of per-block maximum ranges strictly drops.
Permutation zigzag_permutation(const Matrix<float>& x_cal, const BlockLayout& layout);

/// Variance of per-block maximum channel range when channels are placed by `p`.
double block_range_variance(const Matrix<float>& x_cal, const BlockLayout& layout, const Permutation& p);

struct DualTransform {
  BlockDiagonal r1;
  Permutation perm;
  BlockDiagonal r2;
  std::vector<GreedyTrace> r1_traces;
  std::vector<GreedyTrace> r2_traces;
};

DualTransform build_dual_transform(const Matrix<float>& x_cal, const BlockLayout& layout, int steps_k);

// --- plans ------------------------------------------------------------------

enum class PlanKind { identity, hadamard, dual };

std::string to_string(PlanKind kind);
PlanKind parse_plan_kind(const std::string& name);

struct RotationConfig {
  std::size_t block_size = 128;
  int steps_k = 16;

  void validate() const;
};

/// Frozen per-layer transform T. identity: T = I; hadamard: T = r1;
/// dual: T = r1 * perm * r2.
struct RotationPlan {
  PlanKind kind = PlanKind::identity;
  std::size_t channels = 0;
  std::size_t block_size = 128;
  double threshold = 1.0;
  double J = 0.0;
  BlockDiagonal r1;
  Permutation perm;
  BlockDiagonal r2;

  static RotationPlan identity(std::size_t channels);
  /// Throws std::invalid_argument when a matrix is not orthogonal within
  /// 1e-5 or the permutation is invalid.
  void validate() const;
  Matrix<double> dense() const;
  bool operator==(const RotationPlan&) const = default;
};

RotationPlan hadamard_plan(std::size_t channels, const RotationConfig& config);
RotationPlan dual_plan(const Matrix<float>& x_cal, const RotationConfig& config);

/// J < threshold -> hadamard, otherwise dual.
RotationPlan select_rotation_plan(const LayerStats& stats, double threshold, const Matrix<float>& x_cal,
                                  const RotationConfig& config);
PlanKind dispatch_kind(double J, double threshold);

enum class Side { activations, weights };

/// Activations (tokens x C) become X * T; weights (out x C) become W * T so
/// that (X T)(W T)^T = X W^T.
Matrix<float> apply_rotation(const Matrix<float>& m, const RotationPlan& plan, Side side);

// --- smoothing --------------------------------------------------------------

inline constexpr double kDefaultMigrationStrength = 0.5;
inline constexpr double kSmoothingFloor = 1e-5;

struct SmoothingVector {
  std::vector<float> d;
  double migration_strength = kDefaultMigrationStrength;

  static SmoothingVector unit(std::size_t channels);
  bool operator==(const SmoothingVector&) const = default;
};

/// d_j = max|X_j|^a / max|W_j|^(1-a), column maxima floored at 1e-5.
SmoothingVector compute_smoothing(const Matrix<float>& x_cal, const WeightMatrix& w, double strength);
Matrix<float> smooth_activations(const Matrix<float>& x, const SmoothingVector& s);
WeightMatrix smooth_weights(const WeightMatrix& w, const SmoothingVector& s);

struct SmoothMigration {
  SmoothingVector smoothing;
  Matrix<float> x;
  WeightMatrix w;
};

SmoothMigration smooth_migrate(const Matrix<float>& x_cal, const WeightMatrix& w, double strength);

}  // namespace lrq
