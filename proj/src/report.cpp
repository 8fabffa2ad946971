#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "lrq/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lrq {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw IoError(IoError::Kind::write_failed, "failed writing " + path.string());
}

}  // namespace

void report_errors(std::vector<LayerReport> layers, const fs::path& out, std::vector<AblationRow> ablation) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IoError(IoError::Kind::write_failed, "cannot create " + out.string());

  std::stable_sort(layers.begin(), layers.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  for (const auto& l : layers) {
    for (double v : {l.J, l.weight_error_uniform, l.weight_error_tlq, l.act_mse_pre, l.act_mse_post, l.peak,
                     l.shift_max_deviation, l.output_rel_error}) {
      if (!std::isfinite(v) || v < 0.0) {
        throw std::invalid_argument("layer '" + l.name + "' has a non-finite or negative metric");
      }
    }
  }

  std::string csv =
      "layer,scheme,plan,J,weight_error_uniform,weight_error_tlq,act_mse_pre,act_mse_post,"
      "fraction_over_5,fraction_over_10,fraction_over_100,peak,shift_max_deviation,output_rel_error\n";
  json per_layer = json::array();
  std::size_t tlq_wins = 0;
  double mean_err = 0.0;
  for (const auto& l : layers) {
    csv += l.name + "," + l.scheme + "," + l.plan + "," + fmt(l.J) + "," + fmt(l.weight_error_uniform) + "," +
           fmt(l.weight_error_tlq) + "," + fmt(l.act_mse_pre) + "," + fmt(l.act_mse_post) + "," +
           fmt(l.fraction_over_5) + "," + fmt(l.fraction_over_10) + "," + fmt(l.fraction_over_100) + "," +
           fmt(l.peak) + "," + fmt(l.shift_max_deviation) + "," + fmt(l.output_rel_error) + "\n";
    tlq_wins += l.weight_error_tlq < l.weight_error_uniform;
    mean_err += l.output_rel_error;
    per_layer.push_back({{"name", l.name}, {"plan", l.plan}, {"output_rel_error", l.output_rel_error}});
  }
  if (!layers.empty()) mean_err /= static_cast<double>(layers.size());
  write_file(out / "layers.csv", csv);

  json summary = {{"layers", layers.size()},
                  {"tlq_beats_uniform_weight_error", tlq_wins},
                  {"mean_output_rel_error", mean_err},
                  {"per_layer", per_layer}};

  if (!ablation.empty()) {
    std::stable_sort(ablation.begin(), ablation.end(), [](const auto& a, const auto& b) { return a.layer < b.layer; });
    std::string acsv = "layer,tlq,ars,output_rel_error\n";
    json rows = json::array();
    for (const auto& r : ablation) {
      acsv += r.layer + "," + (r.tlq ? "on" : "off") + "," + (r.ars ? "on" : "off") + "," + fmt(r.output_rel_error) +
              "\n";
      rows.push_back({{"layer", r.layer}, {"tlq", r.tlq}, {"ars", r.ars}, {"output_rel_error", r.output_rel_error}});
    }
    write_file(out / "ablation.csv", acsv);
    summary["ablation"] = rows;
  }
  write_file(out / "summary.json", summary.dump(2) + "\n");
}

}  // namespace lrq
