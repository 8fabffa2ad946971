#include "lrq/artifact_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lrq {

namespace {

TensorManifest open(const fs::path& manifest_path, const std::string& artifact) {
  TensorManifest m = read_manifest(manifest_path);
  if (m.artifact != artifact) {
    throw IoError(IoError::Kind::malformed_manifest, manifest_path.string() + " holds a '" + m.artifact +
                                                         "' artifact, expected '" + artifact + "'");
  }
  return m;
}

template <class T>
T meta_value(const TensorManifest& m, const char* key) {
  try {
    return m.meta.at(key).get<T>();
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::malformed_manifest,
                  "manifest " + m.path.string() + " lacks meta key '" + key + "': " + e.what());
  }
}

Tensor bits_tensor(const BitMatrix& m) { return Tensor::bits({m.rows(), m.cols()}, m.values()); }

BitMatrix load_bits(const TensorManifest& m, const std::string& name) { return load_tensor(m, name).byte_matrix(); }

std::vector<float> row_reals(const std::vector<TwinLogChannelParams>& ch, float TwinLogChannelParams::*field) {
  std::vector<float> out;
  for (const auto& c : ch) out.push_back(c.*field);
  return out;
}

std::vector<std::int32_t> row_ints(const std::vector<TwinLogChannelParams>& ch,
                                   std::int32_t TwinLogChannelParams::*field) {
  std::vector<std::int32_t> out;
  for (const auto& c : ch) out.push_back(c.*field);
  return out;
}

void add_masks(ManifestWriter& w, const SignMasks& masks) {
  w.add("mask_pos", bits_tensor(masks.pos));
  w.add("mask_neg", bits_tensor(masks.neg));
  w.add("mask_zero", bits_tensor(masks.zero));
}

SignMasks load_masks(const TensorManifest& m) {
  return {load_bits(m, "mask_pos"), load_bits(m, "mask_neg"), load_bits(m, "mask_zero")};
}

void add_block_diagonal(ManifestWriter& w, const std::string& prefix, const BlockDiagonal& b) {
  std::vector<std::int32_t> sizes;
  std::vector<float> flat;
  for (std::size_t i = 0; i < b.blocks.size(); ++i) {
    sizes.push_back(static_cast<std::int32_t>(b.layout.sizes[i]));
    flat.insert(flat.end(), b.blocks[i].values().begin(), b.blocks[i].values().end());
  }
  w.add(prefix + "_block_sizes", Tensor::int32({sizes.size()}, sizes));
  w.add(prefix, Tensor::real({flat.size()}, flat));
}

BlockDiagonal load_block_diagonal(const TensorManifest& m, const std::string& prefix) {
  const auto sizes = load_tensor(m, prefix + "_block_sizes").ints();
  const auto flat = load_tensor(m, prefix).reals();
  BlockDiagonal b;
  std::size_t pos = 0;
  for (auto s : sizes) {
    const auto n = static_cast<std::size_t>(s);
    if (s <= 0 || pos + n * n > flat.size()) {
      throw IoError(IoError::Kind::size_mismatch, "block sizes of '" + prefix + "' exceed stored values");
    }
    b.layout.sizes.push_back(n);
    b.blocks.emplace_back(n, n, std::vector<float>(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                                                   flat.begin() + static_cast<std::ptrdiff_t>(pos + n * n)));
    pos += n * n;
  }
  if (pos != flat.size()) throw IoError(IoError::Kind::size_mismatch, "'" + prefix + "' has trailing values");
  return b;
}

}  // namespace

fs::path save_artifact(const TwinLogArtifact& a, const fs::path& dir, const std::string& stem) {
  a.validate();
  ManifestWriter w(dir, stem, "twinlog");
  w.meta({{"bits", a.bits}, {"rows", a.rows()}, {"cols", a.cols()}});
  w.add("codes", Tensor::uint8({a.rows(), a.cols()}, a.codes.values()));
  add_masks(w, a.masks);
  const std::vector<std::size_t> per_row{a.rows()};
  w.add("s_pos", Tensor::real(per_row, row_reals(a.channels, &TwinLogChannelParams::s_pos)));
  w.add("s_neg", Tensor::real(per_row, row_reals(a.channels, &TwinLogChannelParams::s_neg)));
  w.add("z_pos", Tensor::int32(per_row, row_ints(a.channels, &TwinLogChannelParams::z_pos)));
  w.add("z_neg", Tensor::int32(per_row, row_ints(a.channels, &TwinLogChannelParams::z_neg)));
  w.add("alpha", Tensor::real(per_row, row_reals(a.channels, &TwinLogChannelParams::alpha)));
  w.add("beta", Tensor::real(per_row, row_reals(a.channels, &TwinLogChannelParams::beta)));
  return w.write();
}

TwinLogArtifact load_twinlog(const fs::path& manifest_path) {
  const TensorManifest m = open(manifest_path, "twinlog");
  TwinLogArtifact a;
  a.bits = meta_value<int>(m, "bits");
  a.codes = load_tensor(m, "codes").byte_matrix();
  a.masks = load_masks(m);
  const auto s_pos = load_tensor(m, "s_pos").reals();
  const auto s_neg = load_tensor(m, "s_neg").reals();
  const auto z_pos = load_tensor(m, "z_pos").ints();
  const auto z_neg = load_tensor(m, "z_neg").ints();
  const auto alpha = load_tensor(m, "alpha").reals();
  const auto beta = load_tensor(m, "beta").reals();
  for (std::size_t r = 0; r < s_pos.size(); ++r) {
    a.channels.push_back({s_pos.at(r), s_neg.at(r), z_pos.at(r), z_neg.at(r), alpha.at(r), beta.at(r)});
  }
  a.validate();
  return a;
}

fs::path save_artifact(const ShiftArtifact& a, const fs::path& dir, const std::string& stem) {
  a.validate();
  ManifestWriter w(dir, stem, "shift");
  w.meta({{"shift_precision", a.config.shift_precision}, {"rows", a.rows()}, {"cols", a.cols()}});
  w.add("exponents", a.exponents);
  w.add("residuals", a.residuals);
  add_masks(w, a.masks);
  return w.write();
}

ShiftArtifact load_shift(const fs::path& manifest_path) {
  const TensorManifest m = open(manifest_path, "shift");
  ShiftArtifact a;
  a.config.shift_precision = meta_value<int>(m, "shift_precision");
  a.exponents = load_tensor(m, "exponents").int_matrix();
  a.residuals = load_tensor(m, "residuals").int_matrix();
  a.masks = load_masks(m);
  a.validate();
  return a;
}

fs::path save_artifact(const RotationPlan& plan, const fs::path& dir, const std::string& stem) {
  plan.validate();
  ManifestWriter w(dir, stem, "rotation");
  w.meta({{"kind", to_string(plan.kind)},
          {"channels", plan.channels},
          {"block_size", plan.block_size},
          {"threshold", plan.threshold},
          {"J", plan.J}});
  if (plan.kind != PlanKind::identity) add_block_diagonal(w, "r1", plan.r1);
  if (plan.kind == PlanKind::dual) {
    std::vector<std::int32_t> perm(plan.perm.source.begin(), plan.perm.source.end());
    w.add("perm", Tensor::int32({perm.size()}, perm));
    add_block_diagonal(w, "r2", plan.r2);
  }
  return w.write();
}

RotationPlan load_rotation_plan(const fs::path& manifest_path) {
  const TensorManifest m = open(manifest_path, "rotation");
  RotationPlan p;
  p.kind = parse_plan_kind(meta_value<std::string>(m, "kind"));
  p.channels = meta_value<std::size_t>(m, "channels");
  p.block_size = meta_value<std::size_t>(m, "block_size");
  p.threshold = meta_value<double>(m, "threshold");
  p.J = meta_value<double>(m, "J");
  if (p.kind != PlanKind::identity) p.r1 = load_block_diagonal(m, "r1");
  if (p.kind == PlanKind::dual) {
    const Tensor perm = load_tensor(m, "perm");
    for (auto v : perm.ints()) p.perm.source.push_back(static_cast<std::size_t>(v));
    p.r2 = load_block_diagonal(m, "r2");
  }
  p.validate();
  return p;
}

fs::path save_artifact(const SmoothingVector& s, const fs::path& dir, const std::string& stem) {
  ManifestWriter w(dir, stem, "smoothing");
  w.meta({{"migration_strength", s.migration_strength}});
  w.add("d", Tensor::real({s.d.size()}, s.d));
  return w.write();
}

SmoothingVector load_smoothing(const fs::path& manifest_path) {
  const TensorManifest m = open(manifest_path, "smoothing");
  return {load_tensor(m, "d").reals(), meta_value<double>(m, "migration_strength")};
}

fs::path save_artifact(const RowQuantized& q, const fs::path& dir, const std::string& stem) {
  ManifestWriter w(dir, stem, "uniform");
  const int bits = q.params.empty() ? 0 : q.params.front().bits;
  w.meta({{"bits", bits}, {"rows", q.codes.rows()}, {"cols", q.codes.cols()}});
  w.add("codes", q.codes);
  std::vector<float> scales;
  std::vector<std::int32_t> zeros;
  for (const auto& p : q.params) {
    scales.push_back(p.scale);
    zeros.push_back(p.zero_point);
  }
  w.add("scale", Tensor::real({scales.size()}, scales));
  w.add("zero_point", Tensor::int32({zeros.size()}, zeros));
  return w.write();
}

RowQuantized load_uniform(const fs::path& manifest_path) {
  const TensorManifest m = open(manifest_path, "uniform");
  RowQuantized q;
  const int bits = meta_value<int>(m, "bits");
  q.codes = load_tensor(m, "codes").int_matrix();
  const auto scales = load_tensor(m, "scale").reals();
  const auto zeros = load_tensor(m, "zero_point").ints();
  if (scales.size() != q.codes.rows() || zeros.size() != q.codes.rows()) {
    throw IoError(IoError::Kind::size_mismatch, "uniform artifact needs one scale per row");
  }
  for (std::size_t r = 0; r < scales.size(); ++r) {
    q.params.push_back({bits, scales[r], zeros[r], Granularity::per_channel});
  }
  return q;
}

fs::path save_corpus(const std::vector<CorpusLayer>& layers, const fs::path& dir) {
  ManifestWriter w(dir, "corpus", "corpus");
  json names = json::array();
  for (const auto& l : layers) {
    names.push_back(l.name);
    w.add(l.name + ".weight", l.weight);
    const auto& x = l.activations;
    w.add(l.name + ".act", Tensor::real({x.batches, x.tokens, x.channels}, x.values.values()));
  }
  w.meta({{"layers", names}});
  return w.write();
}

std::vector<CorpusLayer> load_corpus(const fs::path& dir) {
  const fs::path path = fs::is_directory(dir) ? dir / "corpus.manifest.json" : dir;
  const TensorManifest m = open(path, "corpus");
  std::vector<CorpusLayer> out;
  for (const auto& name : meta_value<std::vector<std::string>>(m, "layers")) {
    CorpusLayer l;
    l.name = name;
    l.weight = load_tensor(m, name + ".weight").real_matrix();
    const Tensor act = load_tensor(m, name + ".act");
    if (act.dims.size() != 3) {
      throw IoError(IoError::Kind::malformed_manifest, "activations of '" + name + "' must be B x N x C");
    }
    l.activations = ActivationBatch(act.dims[0], act.dims[1], act.dims[2], act.reals());
    if (l.activations.channels != l.weight.cols()) {
      throw IoError(IoError::Kind::size_mismatch, "layer '" + name + "': activation channels " +
                                                      std::to_string(l.activations.channels) +
                                                      " != weight in_channels " + std::to_string(l.weight.cols()));
    }
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace lrq
