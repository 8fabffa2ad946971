#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lrq {

/// Dense row-major matrix with value semantics.
template <class T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("matrix data size does not match " +
                                  std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// One linear layer's weights, out_channels x in_channels.
using WeightMatrix = Matrix<float>;
using BitMatrix = Matrix<std::uint8_t>;

/// B x N x C activations; stored as a (B*N) x C token matrix.
struct ActivationBatch {
  std::size_t batches = 0;
  std::size_t tokens = 0;
  std::size_t channels = 0;
  Matrix<float> values;

  ActivationBatch() = default;
  ActivationBatch(std::size_t b, std::size_t n, std::size_t c, float fill = 0.0f)
      : batches(b), tokens(n), channels(c), values(b * n, c, fill) {}
  ActivationBatch(std::size_t b, std::size_t n, std::size_t c, std::vector<float> data)
      : batches(b), tokens(n), channels(c), values(b * n, c, std::move(data)) {}

  /// Wrap a token matrix as a single batch.
  static ActivationBatch from_tokens(Matrix<float> m) {
    ActivationBatch x;
    x.batches = 1;
    x.tokens = m.rows();
    x.channels = m.cols();
    x.values = std::move(m);
    return x;
  }

  std::size_t token_count() const { return batches * tokens; }
  bool empty() const { return values.empty(); }
  bool operator==(const ActivationBatch&) const = default;
};

}  // namespace lrq
