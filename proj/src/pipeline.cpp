#include "lrq/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;

namespace lrq {

namespace {

using i128 = __int128;

double squared_error(std::span<const float> got, std::span<const float> want) {
  double acc = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double d = static_cast<double>(got[i]) - static_cast<double>(want[i]);
    acc += d * d;
  }
  return acc;
}

double per_token_mse(const Matrix<float>& x, int bits) {
  if (x.empty()) return 0.0;
  const Matrix<float> deq = dequantize_rows(per_token_quantize(x, bits));
  return squared_error(deq.flat(), x.flat()) / static_cast<double>(x.size());
}

/// Y = X * W^T for uniform per-channel weights and per-token activations,
/// integer products summed exactly, both scales applied once per output.
Matrix<double> uniform_integer_matmul(const RowQuantized& w, const RowQuantized& x) {
  if (w.codes.cols() != x.codes.cols()) throw std::invalid_argument("uniform matmul: width mismatch");
  Matrix<double> out(x.codes.rows(), w.codes.rows());
  for (std::size_t t = 0; t < x.codes.rows(); ++t) {
    const auto xr = x.codes.row(t);
    const i128 zx = x.params[t].zero_point;
    for (std::size_t o = 0; o < w.codes.rows(); ++o) {
      const auto wr = w.codes.row(o);
      const i128 zw = w.params[o].zero_point;
      i128 acc = 0;
      for (std::size_t i = 0; i < xr.size(); ++i) acc += (wr[i] + zw) * (xr[i] + zx);
      out(t, o) = static_cast<double>(acc) * static_cast<double>(w.params[o].scale) *
                  static_cast<double>(x.params[t].scale);
    }
  }
  return out;
}

void check_layer_name(const std::string& name) {
  if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..") {
    throw std::invalid_argument("layer name '" + name + "' cannot be used as a directory name");
  }
}

}  // namespace

Matrix<float> calibration_tokens(const ActivationBatch& x, const QuantConfig& config) {
  const std::size_t batches = std::min(x.batches, config.calibration_batches);
  const std::size_t rows = batches * x.tokens;
  std::vector<float> data(x.values.values().begin(),
                          x.values.values().begin() + static_cast<std::ptrdiff_t>(rows * x.channels));
  return Matrix<float>(rows, x.channels, std::move(data));
}

Calibration calibrate_layer(const ActivationBatch& x_cal, const WeightMatrix& w, const QuantConfig& config) {
  config.validate();
  if (x_cal.empty()) throw std::invalid_argument("calibrate_layer: empty calibration set");
  const Matrix<float> tokens = calibration_tokens(x_cal, config);

  Calibration cal;
  cal.smoothing = compute_smoothing(tokens, w, config.migration_strength);
  const Matrix<float> smoothed = smooth_activations(tokens, cal.smoothing);
  cal.stats = compute_J(ActivationBatch::from_tokens(smoothed));

  const RotationConfig rc{config.block_size, config.steps_k};
  switch (config.rotation_mode) {
    case RotationMode::none:
      cal.plan = RotationPlan::identity(w.cols());
      break;
    case RotationMode::hadamard:
      cal.plan = hadamard_plan(w.cols(), rc);
      break;
    case RotationMode::dual:
      cal.plan = dual_plan(smoothed, rc);
      break;
    case RotationMode::adaptive:
      cal.plan = select_rotation_plan(cal.stats, config.threshold, smoothed, rc);
      break;
  }
  cal.plan.block_size = config.block_size;
  cal.plan.threshold = config.threshold;
  cal.plan.J = cal.stats.J;
  return cal;
}

WeightMatrix fold_weights(const WeightMatrix& w, const SmoothingVector& smoothing, const RotationPlan& plan) {
  return apply_rotation(smooth_weights(w, smoothing), plan, Side::weights);
}

Matrix<float> transform_activations(const Matrix<float>& x, const SmoothingVector& smoothing,
                                    const RotationPlan& plan) {
  return apply_rotation(smooth_activations(x, smoothing), plan, Side::activations);
}

QuantizedLayer quantize_layer(const std::string& name, const WeightMatrix& w, const SmoothingVector& smoothing,
                              const RotationPlan& plan, const QuantConfig& config) {
  config.validate();
  QuantizedLayer q;
  q.name = name;
  q.scheme = config.scheme;
  q.smoothing = smoothing;
  q.plan = plan;
  if (config.is_skipped(name)) {
    q.passthrough = true;
    q.float_weight = w;
    q.smoothing = SmoothingVector::unit(w.cols());
    q.plan = RotationPlan::identity(w.cols());
    return q;
  }

  const WeightMatrix folded = fold_weights(w, smoothing, plan);
  if (config.scheme == Scheme::tlq) {
    q.twinlog = tlq_quantize_matrix(folded, config.bits_w, config.clip_grid());
    q.shift = integerize(*q.twinlog, ShiftConfig{config.shift_precision});
  } else {
    q.uniform = per_channel_quantize(folded, config.bits_w);
  }
  return q;
}

WeightMatrix dequantized_weights(const QuantizedLayer& layer) {
  if (layer.passthrough) return layer.float_weight;
  if (layer.twinlog) return tlq_dequantize(*layer.twinlog);
  if (layer.uniform) return dequantize_rows(*layer.uniform);
  throw std::invalid_argument("quantized layer '" + layer.name + "' holds no weights");
}

Matrix<double> reference_matmul(const Matrix<float>& x, const WeightMatrix& w) {
  if (x.cols() != w.cols()) {
    throw std::invalid_argument("matmul: activation width " + std::to_string(x.cols()) + " != weight in_channels " +
                                std::to_string(w.cols()));
  }
  Matrix<double> out(x.rows(), w.rows());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto xr = x.row(t);
    for (std::size_t o = 0; o < w.rows(); ++o) {
      const auto wr = w.row(o);
      double acc = 0.0;
      for (std::size_t i = 0; i < xr.size(); ++i) acc += static_cast<double>(xr[i]) * static_cast<double>(wr[i]);
      out(t, o) = acc;
    }
  }
  return out;
}

double relative_frobenius_error(const Matrix<double>& got, const Matrix<double>& want) {
  if (got.rows() != want.rows() || got.cols() != want.cols()) throw std::invalid_argument("shape mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double d = got.flat()[i] - want.flat()[i];
    num += d * d;
    den += want.flat()[i] * want.flat()[i];
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::sqrt(num);
  return std::sqrt(num / den);
}

Simulation simulate_layer(const QuantizedLayer& layer, const WeightMatrix& w, const ActivationBatch& x,
                          const QuantConfig& config) {
  if (x.channels != w.cols()) {
    throw std::invalid_argument("simulate_layer '" + layer.name + "': activation channels " +
                                std::to_string(x.channels) + " != weight in_channels " + std::to_string(w.cols()));
  }
  const Matrix<double> reference = reference_matmul(x.values, w);

  Simulation sim;
  LayerReport& rep = sim.report;
  rep.name = layer.name;
  rep.scheme = to_string(layer.scheme);
  const OutlierProfile profile = outlier_profile(x.values);
  rep.fraction_over_5 = profile.fraction_over_5;
  rep.fraction_over_10 = profile.fraction_over_10;
  rep.fraction_over_100 = profile.fraction_over_100;
  rep.peak = profile.peak;

  if (layer.passthrough) {
    sim.output = reference_matmul(x.values, layer.float_weight);
    rep.plan = "skip";
    rep.output_rel_error = relative_frobenius_error(sim.output, reference);
    return sim;
  }

  rep.plan = to_string(layer.plan.kind);
  rep.J = layer.plan.J;

  const Matrix<float> smoothed = smooth_activations(x.values, layer.smoothing);
  const Matrix<float> rotated = apply_rotation(smoothed, layer.plan, Side::activations);
  const WeightMatrix w_deq = dequantized_weights(layer);

  if (config.bits_a >= kActivationPassthroughBits) {
    sim.output = reference_matmul(rotated, w_deq);
  } else {
    const RowQuantized xq = per_token_quantize(rotated, config.bits_a);
    if (layer.shift) {
      sim.output = shift_matmul(*layer.shift, TokenCodes::from(xq));
      const Matrix<double> float_path = reference_matmul(dequantize_rows(xq), w_deq);
      for (std::size_t i = 0; i < sim.output.size(); ++i) {
        rep.shift_max_deviation =
            std::max(rep.shift_max_deviation, std::fabs(sim.output.flat()[i] - float_path.flat()[i]));
      }
    } else if (layer.uniform) {
      sim.output = uniform_integer_matmul(*layer.uniform, xq);
    } else {
      throw std::invalid_argument("quantized layer '" + layer.name + "' holds no weights");
    }
  }
  rep.output_rel_error = relative_frobenius_error(sim.output, reference);

  if (!x.empty()) {
    const int bits_a = std::min(config.bits_a, kMaxUniformBits);
    rep.act_mse_pre = per_token_mse(smoothed, bits_a);
    rep.act_mse_post = per_token_mse(rotated, bits_a);
  }
  const int bits_w = config.bits_w;
  rep.weight_error_uniform = std::sqrt(squared_error(dequantize_rows(per_channel_quantize(w, bits_w)).flat(), w.flat()));
  if (bits_w <= kMaxTwinLogBits) {
    const WeightMatrix tlq = tlq_dequantize(tlq_quantize_matrix(w, bits_w, config.clip_grid()));
    rep.weight_error_tlq = std::sqrt(squared_error(tlq.flat(), w.flat()));
  }
  return sim;
}

Simulation run_layer(const CorpusLayer& layer, const QuantConfig& config) {
  const Calibration cal = calibrate_layer(layer.activations, layer.weight, config);
  const QuantizedLayer q = quantize_layer(layer.name, layer.weight, cal.smoothing, cal.plan, config);
  return simulate_layer(q, layer.weight, layer.activations, config);
}

std::vector<AblationRow> run_ablation(const CorpusLayer& layer, const QuantConfig& base) {
  std::vector<AblationRow> rows;
  for (const auto& [tlq, ars] : {std::pair{false, false}, {false, true}, {true, false}, {true, true}}) {
    QuantConfig c = base;
    c.scheme = tlq ? Scheme::tlq : Scheme::uniform;
    c.rotation_mode = ars ? RotationMode::adaptive : RotationMode::none;
    rows.push_back({layer.name, tlq, ars, run_layer(layer, c).report.output_rel_error});
  }
  return rows;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::jthread> workers;
  for (std::size_t j = 0; j < jobs; ++j) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  workers.clear();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void save_quantized_layer(const QuantizedLayer& layer, const fs::path& dir) {
  check_layer_name(layer.name);
  const fs::path d = dir / layer.name;
  fs::create_directories(d);
  json info = {{"name", layer.name}, {"scheme", to_string(layer.scheme)}, {"passthrough", layer.passthrough}};
  if (layer.passthrough) {
    ManifestWriter(d, "float_weight", "float_weight").add("weight", layer.float_weight).write();
  } else {
    save_artifact(layer.smoothing, d);
    save_artifact(layer.plan, d);
    if (layer.twinlog) save_artifact(*layer.twinlog, d);
    if (layer.shift) save_artifact(*layer.shift, d);
    if (layer.uniform) save_artifact(*layer.uniform, d);
  }
  std::ofstream out(d / "layer.json", std::ios::trunc);
  out << info.dump(2) << '\n';
  if (!out) throw IoError(IoError::Kind::write_failed, "failed writing " + (d / "layer.json").string());
}

QuantizedLayer load_quantized_layer(const fs::path& dir, const std::string& name) {
  check_layer_name(name);
  const fs::path d = dir / name;
  std::ifstream in(d / "layer.json");
  if (!in) throw IoError(IoError::Kind::missing_file, "no quantized layer '" + name + "' under " + dir.string());
  const json info = json::parse(in);
  QuantizedLayer q;
  q.name = info.at("name").get<std::string>();
  q.scheme = parse_scheme(info.at("scheme").get<std::string>());
  q.passthrough = info.at("passthrough").get<bool>();
  if (q.passthrough) {
    q.float_weight = load_tensor(d / "float_weight.manifest.json", "weight").real_matrix();
    q.smoothing = SmoothingVector::unit(q.float_weight.cols());
    q.plan = RotationPlan::identity(q.float_weight.cols());
    return q;
  }
  q.smoothing = load_smoothing(d / "smoothing.manifest.json");
  q.plan = load_rotation_plan(d / "rotation.manifest.json");
  if (q.scheme == Scheme::tlq) {
    q.twinlog = load_twinlog(d / "twinlog.manifest.json");
    q.shift = load_shift(d / "shift.manifest.json");
  } else {
    q.uniform = load_uniform(d / "uniform.manifest.json");
  }
  return q;
}

}  // namespace lrq
