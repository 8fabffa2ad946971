// lrq: batch front end for calibration, quantization, simulation and reports.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>

#include "lrq/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

lrq::ClipRange parse_range(const std::string& text) {
  lrq::ClipRange r;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> r.start >> c1 >> r.stop >> c2 >> r.step) || c1 != ':' || c2 != ':' || !in.eof()) {
    throw lrq::ConfigError("clip-grid expects START:STOP:STEP, got '" + text + "'");
  }
  return r;
}

std::string range_text(const lrq::ClipRange& r) {
  std::ostringstream out;
  out << r.start << ':' << r.stop << ':' << r.step;
  return out.str();
}

/// Optional flag values layered over the config file, which is layered over defaults.
struct ConfigFlags {
  std::string config_path;
  std::optional<int> bits_w, bits_a, shift_precision, steps_k;
  std::optional<std::string> scheme, rotation_mode, clip_grid;
  std::optional<double> threshold, migration_strength;
  std::optional<std::size_t> block_size, calibration_batches, jobs;
  std::optional<std::vector<std::string>> skip_layers;

  void attach(CLI::App& app) {
    const lrq::QuantConfig d;
    app.add_option("--config", config_path, "JSON config file (fallback: $LRQ_CONFIG)");
    app.add_option("--bits-w", bits_w, "weight bits")->default_str(std::to_string(d.bits_w));
    app.add_option("--bits-a", bits_a, "activation bits (16 disables activation quantization)")
        ->default_str(std::to_string(d.bits_a));
    app.add_option("--scheme", scheme, "weight quantizer: uniform | tlq")->default_str(lrq::to_string(d.scheme));
    app.add_option("--rotation-mode", rotation_mode, "none | hadamard | adaptive | dual")
        ->default_str(lrq::to_string(d.rotation_mode));
    app.add_option("--threshold", threshold, "J threshold for adaptive dispatch")
        ->default_str(CLI::detail::to_string(d.threshold));
    app.add_option("--migration-strength", migration_strength, "smoothing exponent in [0, 1]")
        ->default_str(CLI::detail::to_string(d.migration_strength));
    app.add_option("--shift-precision", shift_precision, "integerization bits I")
        ->default_str(std::to_string(d.shift_precision));
    app.add_option("--clip-grid", clip_grid,
                   "clip factor grid START:STOP:STEP for both factors, or ALPHA_RANGE,BETA_RANGE")
        ->default_str(range_text(d.clip_alpha));
    app.add_option("--block-size", block_size, "rotation block size (power of two)")
        ->default_str(std::to_string(d.block_size));
    app.add_option("--steps-k", steps_k, "greedy rotation step budget")->default_str(std::to_string(d.steps_k));
    std::string skips;
    for (const auto& s : d.skip_layers) skips += (skips.empty() ? "" : ",") + s;
    app.add_option("--skip-layers", skip_layers, "layer name substrings kept at full precision")
        ->delimiter(',')
        ->default_str(skips);
    app.add_option("--calibration-batches", calibration_batches, "batches used for calibration")
        ->default_str(std::to_string(d.calibration_batches));
    app.add_option("--jobs", jobs, "worker threads (0: all cores)")->default_str("0");
  }

  lrq::QuantConfig resolve() const {
    lrq::QuantConfig c;
    std::string path = config_path;
    if (path.empty()) {
      if (const char* env = std::getenv("LRQ_CONFIG"); env && *env) path = env;
    }
    if (!path.empty()) c = lrq::load_config(path);
    if (bits_w) c.bits_w = *bits_w;
    if (bits_a) c.bits_a = *bits_a;
    if (scheme) c.scheme = lrq::parse_scheme(*scheme);
    if (rotation_mode) c.rotation_mode = lrq::parse_rotation_mode(*rotation_mode);
    if (threshold) c.threshold = *threshold;
    if (migration_strength) c.migration_strength = *migration_strength;
    if (shift_precision) c.shift_precision = *shift_precision;
    if (clip_grid) {
      const auto comma = clip_grid->find(',');
      if (comma == std::string::npos) {
        c.clip_alpha = c.clip_beta = parse_range(*clip_grid);
      } else {
        c.clip_alpha = parse_range(clip_grid->substr(0, comma));
        c.clip_beta = parse_range(clip_grid->substr(comma + 1));
      }
    }
    if (block_size) c.block_size = *block_size;
    if (steps_k) c.steps_k = *steps_k;
    if (skip_layers) c.skip_layers = *skip_layers;
    if (calibration_batches) c.calibration_batches = *calibration_batches;
    if (jobs) c.jobs = *jobs;
    c.validate();
    return c;
  }
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw lrq::IoError(lrq::IoError::Kind::write_failed, "failed writing " + path.string());
}

void prepare_out(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) {
    throw lrq::IoError(lrq::IoError::Kind::write_failed, "cannot create output directory " + out.string());
  }
}

struct SynthArgs {
  std::size_t layers = 4, rows = 128, cols = 128, batches = 8, tokens = 64, outlier_channels = 2;
  double sigma = 0.02, tail_fraction = 0.01, tail_scale = 8.0, act_sigma = 1.0, outlier_scale = 50.0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  prepare_out(a.out);
  std::vector<lrq::CorpusLayer> layers;
  for (std::size_t i = 0; i < a.layers; ++i) {
    lrq::SyntheticSpec ws{a.rows, a.cols, a.sigma, a.tail_fraction, a.tail_scale, a.seed + i};
    ws.validate();
    lrq::ActivationSpec as{a.batches, a.tokens, a.cols, a.act_sigma, a.outlier_channels, a.outlier_scale,
                           a.seed + 0x10000 + i};
    layers.push_back({"layer" + std::to_string(i), lrq::gen_gaussian_longtail(ws), lrq::gen_activations(as)});
  }
  lrq::save_corpus(layers, a.out);
  return 0;
}

int cmd_calibrate(const std::string& corpus, const std::string& out, const lrq::QuantConfig& cfg) {
  const auto layers = lrq::load_corpus(corpus);
  prepare_out(out);
  std::vector<lrq::Calibration> cals(layers.size());
  lrq::parallel_for(layers.size(), cfg.jobs, [&](std::size_t i) {
    cals[i] = lrq::calibrate_layer(layers[i].activations, layers[i].weight, cfg);
  });
  json summary = json::object();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const fs::path d = fs::path(out) / layers[i].name;
    fs::create_directories(d);
    lrq::save_artifact(cals[i].smoothing, d);
    lrq::save_artifact(cals[i].plan, d);
    summary[layers[i].name] = {{"J", cals[i].stats.J}, {"plan", lrq::to_string(cals[i].plan.kind)}};
  }
  write_json(fs::path(out) / "calibration.json", {{"config", lrq::to_json(cfg)}, {"layers", summary}});
  return 0;
}

int cmd_quantize(const std::string& corpus, const std::string& out, const lrq::QuantConfig& cfg) {
  const auto layers = lrq::load_corpus(corpus);
  prepare_out(out);
  std::vector<lrq::QuantizedLayer> q(layers.size());
  lrq::parallel_for(layers.size(), cfg.jobs, [&](std::size_t i) {
    const auto cal = lrq::calibrate_layer(layers[i].activations, layers[i].weight, cfg);
    q[i] = lrq::quantize_layer(layers[i].name, layers[i].weight, cal.smoothing, cal.plan, cfg);
  });
  json names = json::array();
  for (const auto& l : q) {
    lrq::save_quantized_layer(l, out);
    names.push_back(l.name);
  }
  write_json(fs::path(out) / "quantized.json", {{"config", lrq::to_json(cfg)}, {"layers", names}});
  return 0;
}

int cmd_simulate(const std::string& corpus, const std::string& artifacts, const std::string& out,
                 const lrq::QuantConfig& cfg) {
  const auto layers = lrq::load_corpus(corpus);
  prepare_out(out);
  std::vector<lrq::Simulation> sims(layers.size());
  lrq::parallel_for(layers.size(), cfg.jobs, [&](std::size_t i) {
    const auto q = lrq::load_quantized_layer(artifacts, layers[i].name);
    sims[i] = lrq::simulate_layer(q, layers[i].weight, layers[i].activations, cfg);
  });
  lrq::ManifestWriter outputs(out, "outputs", "layer_outputs");
  std::vector<lrq::LayerReport> reports;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& y = sims[i].output;
    std::vector<float> values(y.flat().begin(), y.flat().end());
    outputs.add(layers[i].name, lrq::Matrix<float>(y.rows(), y.cols(), std::move(values)));
    reports.push_back(sims[i].report);
  }
  outputs.write();
  lrq::report_errors(reports, out);
  return 0;
}

int cmd_report(const std::string& corpus, const std::string& out, bool ablation, const lrq::QuantConfig& cfg) {
  const auto layers = lrq::load_corpus(corpus);
  std::vector<lrq::LayerReport> reports(layers.size());
  std::vector<std::vector<lrq::AblationRow>> rows(layers.size());
  lrq::parallel_for(layers.size(), cfg.jobs, [&](std::size_t i) {
    reports[i] = lrq::run_layer(layers[i], cfg).report;
    if (ablation) rows[i] = lrq::run_ablation(layers[i], cfg);
  });
  std::vector<lrq::AblationRow> flat;
  for (auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  lrq::report_errors(reports, out, flat);
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-bit post-training quantization toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "write a synthetic corpus of long-tail weights and activations");
  s->add_option("--out", synth.out, "output corpus directory")->required();
  s->add_option("--layers", synth.layers, "number of layers")->capture_default_str();
  s->add_option("--rows", synth.rows, "weight rows (out channels)")->capture_default_str();
  s->add_option("--cols", synth.cols, "weight cols (in channels)")->capture_default_str();
  s->add_option("--sigma", synth.sigma, "weight standard deviation")->capture_default_str();
  s->add_option("--tail-fraction", synth.tail_fraction, "fraction of long-tail weights")->capture_default_str();
  s->add_option("--tail-scale", synth.tail_scale, "long-tail multiplier")->capture_default_str();
  s->add_option("--batches", synth.batches, "activation batches")->capture_default_str();
  s->add_option("--tokens", synth.tokens, "tokens per batch")->capture_default_str();
  s->add_option("--act-sigma", synth.act_sigma, "activation standard deviation")->capture_default_str();
  s->add_option("--outlier-channels", synth.outlier_channels, "salient outlier channels")->capture_default_str();
  s->add_option("--outlier-scale", synth.outlier_scale, "outlier multiplier")->capture_default_str();
  s->add_option("--seed", synth.seed, "base seed")->capture_default_str();

  std::string corpus, out, artifacts;
  bool ablation = false;
  ConfigFlags flags;

  auto* cal = app.add_subcommand("calibrate", "compute smoothing vectors and rotation plans");
  auto* quant = app.add_subcommand("quantize", "calibrate and quantize every layer");
  auto* sim = app.add_subcommand("simulate", "run quantized layers on the corpus activations");
  auto* rep = app.add_subcommand("report", "full pipeline per layer with CSV/JSON error reports");
  for (auto* sub : {cal, quant, sim, rep}) {
    sub->add_option("--corpus", corpus, "input corpus directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--out", out, "output directory")->required();
    flags.attach(*sub);
  }
  sim->add_option("--artifacts", artifacts, "directory written by quantize")
      ->required()
      ->check(CLI::ExistingDirectory);
  rep->add_flag("--ablation", ablation, "add the TLQ x rotation ablation grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    const lrq::QuantConfig cfg = flags.resolve();
    if (cal->parsed()) return cmd_calibrate(corpus, out, cfg);
    if (quant->parsed()) return cmd_quantize(corpus, out, cfg);
    if (sim->parsed()) return cmd_simulate(corpus, artifacts, out, cfg);
    return cmd_report(corpus, out, ablation, cfg);
  } catch (const lrq::ConfigError& e) {
    std::cerr << "lrq: usage error: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "lrq: error: " << one_line(e.what()) << '\n';
    return 1;
  }
}
