#include "lrq/tensorio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <system_error>

namespace fs = std::filesystem;
using nlohmann::json;

namespace lrq {

namespace {

constexpr const char* kFormat = "lrq-tensors";
constexpr int kVersion = 1;

std::size_t product(const std::vector<std::size_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t dtype_bytes(DType dtype) {
  switch (dtype) {
    case DType::real32:
    case DType::int32:
      return 4;
    case DType::uint8:
      return 1;
    case DType::bit:
      return 0;
  }
  return 0;
}

void put_u32_le(std::uint32_t v, char* out) {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
}

std::uint32_t get_u32_le(const char* in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  return v;
}

std::string encode(const Tensor& t) {
  std::string out(expected_file_bytes(t.dims, t.dtype), '\0');
  switch (t.dtype) {
    case DType::real32: {
      const auto& v = t.reals();
      for (std::size_t i = 0; i < v.size(); ++i) put_u32_le(std::bit_cast<std::uint32_t>(v[i]), &out[4 * i]);
      break;
    }
    case DType::int32: {
      const auto& v = t.ints();
      for (std::size_t i = 0; i < v.size(); ++i) put_u32_le(static_cast<std::uint32_t>(v[i]), &out[4 * i]);
      break;
    }
    case DType::uint8: {
      const auto& v = t.bytes();
      std::memcpy(out.data(), v.data(), v.size());
      break;
    }
    case DType::bit: {
      const auto& v = t.bytes();
      const std::size_t cols = t.dims.empty() ? 0 : t.dims.back();
      const std::size_t row_bytes = (cols + 7) / 8;
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] == 0) continue;
        const std::size_t r = i / cols, c = i % cols;
        out[r * row_bytes + c / 8] = static_cast<char>(out[r * row_bytes + c / 8] | (1 << (c % 8)));
      }
      break;
    }
  }
  return out;
}

Tensor decode(const ManifestEntry& e, const std::string& raw) {
  const std::size_t n = product(e.dims);
  switch (e.dtype) {
    case DType::real32: {
      std::vector<float> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<float>(get_u32_le(&raw[4 * i]));
      return Tensor::real(e.dims, std::move(v));
    }
    case DType::int32: {
      std::vector<std::int32_t> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::int32_t>(get_u32_le(&raw[4 * i]));
      return Tensor::int32(e.dims, std::move(v));
    }
    case DType::uint8: {
      std::vector<std::uint8_t> v(raw.begin(), raw.end());
      return Tensor::uint8(e.dims, std::move(v));
    }
    case DType::bit: {
      std::vector<std::uint8_t> v(n);
      const std::size_t cols = e.dims.empty() ? 0 : e.dims.back();
      const std::size_t row_bytes = (cols + 7) / 8;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = i / cols, c = i % cols;
        v[i] = (static_cast<unsigned char>(raw[r * row_bytes + c / 8]) >> (c % 8)) & 1u;
      }
      return Tensor::bits(e.dims, std::move(v));
    }
  }
  throw IoError(IoError::Kind::unknown_dtype, "unknown dtype for entry '" + e.name + "'");
}

std::array<std::size_t, 2> matrix_shape(const Tensor& t) {
  if (t.dims.size() == 1) return {1, t.dims[0]};
  if (t.dims.size() == 2) return {t.dims[0], t.dims[1]};
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < t.dims.size(); ++i) rows *= t.dims[i];
  return {rows, t.dims.empty() ? 0 : t.dims.back()};
}

}  // namespace

std::string to_string(DType dtype) {
  switch (dtype) {
    case DType::real32:
      return "real32";
    case DType::int32:
      return "int32";
    case DType::uint8:
      return "uint8";
    case DType::bit:
      return "bit";
  }
  return "?";
}

DType parse_dtype(const std::string& name) {
  if (name == "real32") return DType::real32;
  if (name == "int32") return DType::int32;
  if (name == "uint8") return DType::uint8;
  if (name == "bit") return DType::bit;
  throw IoError(IoError::Kind::unknown_dtype, "unknown dtype '" + name + "'");
}

Tensor Tensor::real(std::vector<std::size_t> dims, std::vector<float> values) {
  Tensor t{std::move(dims), DType::real32, std::move(values)};
  if (t.element_count() != t.reals().size()) throw std::invalid_argument("tensor dims do not match data");
  return t;
}

Tensor Tensor::int32(std::vector<std::size_t> dims, std::vector<std::int32_t> values) {
  Tensor t{std::move(dims), DType::int32, std::move(values)};
  if (t.element_count() != t.ints().size()) throw std::invalid_argument("tensor dims do not match data");
  return t;
}

Tensor Tensor::uint8(std::vector<std::size_t> dims, std::vector<std::uint8_t> values) {
  Tensor t{std::move(dims), DType::uint8, std::move(values)};
  if (t.element_count() != t.bytes().size()) throw std::invalid_argument("tensor dims do not match data");
  return t;
}

Tensor Tensor::bits(std::vector<std::size_t> dims, std::vector<std::uint8_t> values) {
  for (auto& v : values) {
    if (v > 1) throw std::invalid_argument("bit tensor values must be 0 or 1");
  }
  Tensor t{std::move(dims), DType::bit, std::move(values)};
  if (t.element_count() != t.bytes().size()) throw std::invalid_argument("tensor dims do not match data");
  return t;
}

std::size_t Tensor::element_count() const { return product(dims); }

const std::vector<float>& Tensor::reals() const {
  if (const auto* v = std::get_if<std::vector<float>>(&data)) return *v;
  throw IoError(IoError::Kind::dtype_mismatch, "tensor is " + to_string(dtype) + ", expected real32");
}

const std::vector<std::int32_t>& Tensor::ints() const {
  if (const auto* v = std::get_if<std::vector<std::int32_t>>(&data)) return *v;
  throw IoError(IoError::Kind::dtype_mismatch, "tensor is " + to_string(dtype) + ", expected int32");
}

const std::vector<std::uint8_t>& Tensor::bytes() const {
  if (const auto* v = std::get_if<std::vector<std::uint8_t>>(&data)) return *v;
  throw IoError(IoError::Kind::dtype_mismatch, "tensor is " + to_string(dtype) + ", expected uint8 or bit");
}

Matrix<float> Tensor::real_matrix() const {
  const auto [r, c] = matrix_shape(*this);
  return Matrix<float>(r, c, reals());
}

Matrix<std::int32_t> Tensor::int_matrix() const {
  const auto [r, c] = matrix_shape(*this);
  return Matrix<std::int32_t>(r, c, ints());
}

Matrix<std::uint8_t> Tensor::byte_matrix() const {
  const auto [r, c] = matrix_shape(*this);
  return Matrix<std::uint8_t>(r, c, bytes());
}

std::size_t expected_file_bytes(const std::vector<std::size_t>& dims, DType dtype) {
  if (dtype != DType::bit) return product(dims) * dtype_bytes(dtype);
  if (dims.empty()) return 0;
  const std::size_t cols = dims.back();
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) rows *= dims[i];
  return rows * ((cols + 7) / 8);
}

const ManifestEntry* TensorManifest::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

TensorManifest read_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) {
    throw IoError(IoError::Kind::missing_file, "cannot open manifest " + manifest_path.string());
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::malformed_manifest,
                  "malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  TensorManifest m;
  m.path = manifest_path;
  try {
    m.artifact = doc.value("artifact", std::string{});
    if (doc.contains("meta")) m.meta = doc.at("meta");
    std::set<std::string> seen;
    for (const auto& je : doc.at("entries")) {
      ManifestEntry e;
      e.name = je.at("name").get<std::string>();
      e.dims = je.at("dims").get<std::vector<std::size_t>>();
      e.file = je.at("file").get<std::string>();
      const auto dtype = je.at("dtype").get<std::string>();
      try {
        e.dtype = parse_dtype(dtype);
      } catch (const IoError&) {
        throw IoError(IoError::Kind::unknown_dtype, "unknown dtype '" + dtype + "' for entry '" + e.name + "'");
      }
      if (je.value("byte_order", "little-endian") != "little-endian" || je.value("layout", "row-major") != "row-major") {
        throw IoError(IoError::Kind::malformed_manifest,
                      "entry '" + e.name + "' must be little-endian row-major");
      }
      for (auto d : e.dims) {
        if (d == 0) throw IoError(IoError::Kind::malformed_manifest, "entry '" + e.name + "' has a zero dimension");
      }
      if (!seen.insert(e.name).second) {
        throw IoError(IoError::Kind::malformed_manifest, "duplicate entry '" + e.name + "'");
      }
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::malformed_manifest,
                  "malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  return m;
}

Tensor load_tensor(const TensorManifest& manifest, const std::string& name) {
  const ManifestEntry* e = manifest.find(name);
  if (e == nullptr) {
    throw IoError(IoError::Kind::unknown_tensor,
                  "unknown tensor '" + name + "' in " + manifest.path.string());
  }
  const fs::path file = manifest.directory() / e->file;
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    throw IoError(IoError::Kind::missing_file,
                  "missing file for tensor '" + name + "': " + file.string());
  }
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t expected = expected_file_bytes(e->dims, e->dtype);
  if (raw.size() != expected) {
    throw IoError(IoError::Kind::size_mismatch,
                  "size mismatch for tensor '" + name + "': expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(raw.size()));
  }
  return decode(*e, raw);
}

Tensor load_tensor(const fs::path& manifest_path, const std::string& name) {
  return load_tensor(read_manifest(manifest_path), name);
}

ManifestWriter::ManifestWriter(fs::path dir, std::string stem, std::string artifact)
    : dir_(std::move(dir)), stem_(std::move(stem)), artifact_(std::move(artifact)) {}

ManifestWriter& ManifestWriter::meta(json meta) {
  meta_ = std::move(meta);
  return *this;
}

ManifestWriter& ManifestWriter::add(const std::string& name, const Tensor& tensor) {
  for (const auto& [n, t] : tensors_) {
    if (n == name) throw std::invalid_argument("duplicate tensor name '" + name + "'");
  }
  tensors_.emplace_back(name, tensor);
  return *this;
}

ManifestWriter& ManifestWriter::add(const std::string& name, const Matrix<float>& m) {
  return add(name, Tensor::real({m.rows(), m.cols()}, m.values()));
}

ManifestWriter& ManifestWriter::add(const std::string& name, const Matrix<std::int32_t>& m) {
  return add(name, Tensor::int32({m.rows(), m.cols()}, m.values()));
}

fs::path ManifestWriter::write() const {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec || !fs::is_directory(dir_)) {
    throw IoError(IoError::Kind::write_failed, "cannot create directory " + dir_.string() +
                                                   (ec ? ": " + ec.message() : ""));
  }

  json entries = json::array();
  for (const auto& [name, t] : tensors_) {
    const std::string file = stem_ + "." + name + ".bin";
    const std::string bytes = encode(t);
    std::ofstream out(dir_ / file, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(IoError::Kind::write_failed, "failed writing " + (dir_ / file).string());
    entries.push_back({{"name", name},
                       {"dims", t.dims},
                       {"dtype", to_string(t.dtype)},
                       {"file", file},
                       {"byte_order", "little-endian"},
                       {"layout", "row-major"}});
  }

  json doc = {{"format", kFormat},
              {"version", kVersion},
              {"artifact", artifact_},
              {"meta", meta_},
              {"entries", entries}};
  const fs::path manifest = dir_ / (stem_ + ".manifest.json");
  std::ofstream out(manifest, std::ios::trunc);
  out << doc.dump(2) << '\n';
  if (!out) throw IoError(IoError::Kind::write_failed, "failed writing " + manifest.string());
  return manifest;
}

}  // namespace lrq
