#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lrq/intpipe.hpp"
#include "lrq/rotation.hpp"
#include "lrq/tensorio.hpp"
#include "lrq/twinlog.hpp"
#include "lrq/uniquant.hpp"

namespace lrq {

// Each save writes `<stem>.manifest.json` plus its tensor files into `dir`
// and returns the manifest path. Loads check the manifest's artifact tag.

std::filesystem::path save_artifact(const TwinLogArtifact& a, const std::filesystem::path& dir,
                                    const std::string& stem = "twinlog");
std::filesystem::path save_artifact(const ShiftArtifact& a, const std::filesystem::path& dir,
                                    const std::string& stem = "shift");
std::filesystem::path save_artifact(const RotationPlan& plan, const std::filesystem::path& dir,
                                    const std::string& stem = "rotation");
std::filesystem::path save_artifact(const SmoothingVector& s, const std::filesystem::path& dir,
                                    const std::string& stem = "smoothing");
std::filesystem::path save_artifact(const RowQuantized& q, const std::filesystem::path& dir,
                                    const std::string& stem = "uniform");

TwinLogArtifact load_twinlog(const std::filesystem::path& manifest_path);
ShiftArtifact load_shift(const std::filesystem::path& manifest_path);
RotationPlan load_rotation_plan(const std::filesystem::path& manifest_path);
SmoothingVector load_smoothing(const std::filesystem::path& manifest_path);
RowQuantized load_uniform(const std::filesystem::path& manifest_path);

/// Named layers with weights (out x in) and activations (B x N x in).
struct CorpusLayer {
  std::string name;
  WeightMatrix weight;
  ActivationBatch activations;
};

/// `corpus.manifest.json` with tensors `<name>.weight` and `<name>.act`.
std::filesystem::path save_corpus(const std::vector<CorpusLayer>& layers, const std::filesystem::path& dir);
std::vector<CorpusLayer> load_corpus(const std::filesystem::path& dir);

}  // namespace lrq
