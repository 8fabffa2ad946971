#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lrq/artifact_io.hpp"
#include "lrq/config.hpp"
#include "lrq/intpipe.hpp"
#include "lrq/rotation.hpp"
#include "lrq/twinlog.hpp"
#include "lrq/uniquant.hpp"

namespace lrq {

struct Calibration {
  SmoothingVector smoothing;
  RotationPlan plan;
  LayerStats stats;  // on smoothed calibration activations
};

/// First `config.calibration_batches` batches of `x` as a token matrix.
Matrix<float> calibration_tokens(const ActivationBatch& x, const QuantConfig& config);

/// Smoothing, then J on the smoothed activations, then the plan for
/// config.rotation_mode (adaptive dispatches on J against the threshold).
Calibration calibrate_layer(const ActivationBatch& x_cal, const WeightMatrix& w, const QuantConfig& config);

struct QuantizedLayer {
  std::string name;
  Scheme scheme = Scheme::tlq;
  /// Skip-listed layers keep their float weights and bypass quantization.
  bool passthrough = false;
  WeightMatrix float_weight;
  SmoothingVector smoothing;
  RotationPlan plan;
  std::optional<TwinLogArtifact> twinlog;
  std::optional<ShiftArtifact> shift;
  std::optional<RowQuantized> uniform;
};

/// W * diag(d) followed by the plan's weight-side transform.
WeightMatrix fold_weights(const WeightMatrix& w, const SmoothingVector& smoothing, const RotationPlan& plan);
/// X * diag(d)^-1 followed by the plan's activation-side transform.
Matrix<float> transform_activations(const Matrix<float>& x, const SmoothingVector& smoothing,
                                    const RotationPlan& plan);

QuantizedLayer quantize_layer(const std::string& name, const WeightMatrix& w, const SmoothingVector& smoothing,
                              const RotationPlan& plan, const QuantConfig& config);

/// Dequantized weights as the integer kernels see them (folded space).
WeightMatrix dequantized_weights(const QuantizedLayer& layer);

/// Float oracle: X * W^T in double precision.
Matrix<double> reference_matmul(const Matrix<float>& x, const WeightMatrix& w);

double relative_frobenius_error(const Matrix<double>& got, const Matrix<double>& want);

struct LayerReport {
  std::string name;
  std::string scheme;
  std::string plan;  // identity / hadamard / dual, or "skip"
  double J = 0.0;
  double weight_error_uniform = 0.0;  // ||W_q - W||_2, per-channel uniform at bits_w
  double weight_error_tlq = 0.0;      // ||W_f - W||_2, twin-log at bits_w
  double act_mse_pre = 0.0;           // per-token quantization MSE before rotation
  double act_mse_post = 0.0;          // and after
  double fraction_over_5 = 0.0;
  double fraction_over_10 = 0.0;
  double fraction_over_100 = 0.0;
  double peak = 0.0;
  double shift_max_deviation = 0.0;  // |shift matmul - dequantized float matmul|_max
  double output_rel_error = 0.0;     // ||Y - X W^T||_F / ||X W^T||_F
};

struct Simulation {
  Matrix<double> output;
  LayerReport report;
};

/// Runs the quantized layer on `x` and measures it against the float layer.
Simulation simulate_layer(const QuantizedLayer& layer, const WeightMatrix& w, const ActivationBatch& x,
                          const QuantConfig& config);

/// Calibrate, quantize and simulate one corpus layer.
Simulation run_layer(const CorpusLayer& layer, const QuantConfig& config);

struct AblationRow {
  std::string layer;
  bool tlq = false;
  bool ars = false;
  double output_rel_error = 0.0;
};

/// TLQ on/off x ARS on/off: (off, off), (off, on), (on, off), (on, on).
/// TLQ off means per-channel uniform weights; ARS off means rotation_mode none.
std::vector<AblationRow> run_ablation(const CorpusLayer& layer, const QuantConfig& base);

/// Applies `fn` to every index in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

/// Writes `layers.csv` and `summary.json` (plus `ablation.csv` when rows are
/// given) into `out`, ordered by layer name.
void report_errors(std::vector<LayerReport> layers, const std::filesystem::path& out,
                   std::vector<AblationRow> ablation = {});

// --- on-disk layer artifacts ------------------------------------------------

/// Writes a quantized layer under `dir/<layer name>/`.
void save_quantized_layer(const QuantizedLayer& layer, const std::filesystem::path& dir);
QuantizedLayer load_quantized_layer(const std::filesystem::path& dir, const std::string& name);

}  // namespace lrq
