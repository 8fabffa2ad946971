#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lrq/tensor.hpp"

namespace lrq {

enum class DType { real32, int32, uint8, bit };

std::string to_string(DType dtype);
DType parse_dtype(const std::string& name);

class IoError : public std::runtime_error {
 public:
  enum class Kind {
    malformed_manifest,
    unknown_tensor,
    unknown_dtype,
    missing_file,
    size_mismatch,
    dtype_mismatch,
    write_failed,
  };

  IoError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// In-memory tensor. Bit tensors are unpacked to one 0/1 byte per element.
struct Tensor {
  std::vector<std::size_t> dims;
  DType dtype = DType::real32;
  std::variant<std::vector<float>, std::vector<std::int32_t>, std::vector<std::uint8_t>> data;

  static Tensor real(std::vector<std::size_t> dims, std::vector<float> values);
  static Tensor int32(std::vector<std::size_t> dims, std::vector<std::int32_t> values);
  static Tensor uint8(std::vector<std::size_t> dims, std::vector<std::uint8_t> values);
  static Tensor bits(std::vector<std::size_t> dims, std::vector<std::uint8_t> values);

  std::size_t element_count() const;

  const std::vector<float>& reals() const;
  const std::vector<std::int32_t>& ints() const;
  /// Backing store for uint8 and bit tensors.
  const std::vector<std::uint8_t>& bytes() const;

  /// Views a rank-2 tensor (or a rank-1 tensor as one row) as a matrix.
  Matrix<float> real_matrix() const;
  Matrix<std::int32_t> int_matrix() const;
  Matrix<std::uint8_t> byte_matrix() const;

  bool operator==(const Tensor&) const = default;
};

struct ManifestEntry {
  std::string name;
  std::vector<std::size_t> dims;
  DType dtype = DType::real32;
  std::string file;
};

/// JSON manifest describing raw little-endian row-major tensor files.
struct TensorManifest {
  std::filesystem::path path;
  std::string artifact;  // e.g. "twinlog", "shift", "rotation", "corpus"
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ManifestEntry> entries;

  const ManifestEntry* find(const std::string& name) const;
  std::filesystem::path directory() const { return path.parent_path(); }
};

/// Byte length of a tensor file: bit tensors pack 8 per byte, each row
/// (last dimension) padded to a byte boundary.
std::size_t expected_file_bytes(const std::vector<std::size_t>& dims, DType dtype);

TensorManifest read_manifest(const std::filesystem::path& manifest_path);
Tensor load_tensor(const TensorManifest& manifest, const std::string& name);
Tensor load_tensor(const std::filesystem::path& manifest_path, const std::string& name);

/// Accumulates tensors and writes them as `<stem>.manifest.json` plus one
/// `<stem>.<name>.bin` file per tensor.
class ManifestWriter {
 public:
  ManifestWriter(std::filesystem::path dir, std::string stem, std::string artifact);

  ManifestWriter& meta(nlohmann::json meta);
  ManifestWriter& add(const std::string& name, const Tensor& tensor);
  ManifestWriter& add(const std::string& name, const Matrix<float>& m);
  ManifestWriter& add(const std::string& name, const Matrix<std::int32_t>& m);

  /// Writes every file; returns the manifest path.
  std::filesystem::path write() const;

 private:
  std::filesystem::path dir_;
  std::string stem_;
  std::string artifact_;
  nlohmann::json meta_ = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors_;
};

// --- synthetic tensors ------------------------------------------------------

struct SyntheticSpec {
  std::size_t rows = 128;
  std::size_t cols = 128;
  double sigma = 0.02;
  double tail_fraction = 0.0;
  double tail_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Element i is sigma * z_i, with z_i standard normal from Philox stream 0;
/// it is additionally multiplied by tail_scale when the stream-1 uniform u_i
/// satisfies u_i < tail_fraction.
WeightMatrix gen_gaussian_longtail(const SyntheticSpec& spec);

/// Calibration-style activations with channel-confined salient outliers.
struct ActivationSpec {
  std::size_t batches = 1;
  std::size_t tokens = 64;
  std::size_t channels = 128;
  double sigma = 1.0;
  std::size_t outlier_channels = 0;
  double outlier_scale = 50.0;
  std::uint64_t seed = 0;
};

ActivationBatch gen_activations(const ActivationSpec& spec);

/// Channels carrying salient outliers for `spec`, ascending.
std::vector<std::size_t> outlier_channel_indices(const ActivationSpec& spec);

}  // namespace lrq
