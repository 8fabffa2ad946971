#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "lrq/rotation.hpp"

namespace lrq {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

Matrix<double> hadamard_matrix(std::size_t n) {
  if (!is_power_of_two(n)) {
    throw std::invalid_argument("hadamard_matrix: n=" + std::to_string(n) +
                                " is not a power of two; use BlockDiagonal::hadamard over "
                                "BlockLayout::for_channels for a block-diagonal fallback");
  }
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  Matrix<double> h(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) h(i, j) = (std::popcount(i & j) % 2 == 0) ? norm : -norm;
  }
  return h;
}

void hadamard_transform(std::span<double> v) {
  const std::size_t n = v.size();
  if (!is_power_of_two(n)) throw std::invalid_argument("hadamard_transform: length must be a power of two");
  for (std::size_t h = 1; h < n; h <<= 1) {
    for (std::size_t i = 0; i < n; i += 2 * h) {
      for (std::size_t j = i; j < i + h; ++j) {
        const double a = v[j], b = v[j + h];
        v[j] = a + b;
        v[j + h] = a - b;
      }
    }
  }
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  for (auto& x : v) x *= norm;
}

BlockLayout BlockLayout::for_channels(std::size_t channels, std::size_t block_size) {
  if (!is_power_of_two(block_size)) {
    throw std::invalid_argument("block size must be a power of two, got " + std::to_string(block_size));
  }
  BlockLayout layout;
  std::size_t rest = channels;
  while (rest >= block_size) {
    layout.sizes.push_back(block_size);
    rest -= block_size;
  }
  while (rest > 0) {
    const std::size_t p = std::bit_floor(rest);
    layout.sizes.push_back(p);
    rest -= p;
  }
  return layout;
}

std::size_t BlockLayout::channels() const { return std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}); }

std::vector<std::size_t> BlockLayout::offsets() const {
  std::vector<std::size_t> out(sizes.size());
  std::size_t off = 0;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    out[b] = off;
    off += sizes[b];
  }
  return out;
}

BlockDiagonal BlockDiagonal::identity(const BlockLayout& layout) {
  BlockDiagonal d{layout, {}};
  for (auto n : layout.sizes) {
    Matrix<float> m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
    d.blocks.push_back(std::move(m));
  }
  return d;
}

BlockDiagonal BlockDiagonal::hadamard(const BlockLayout& layout) {
  BlockDiagonal d{layout, {}};
  for (auto n : layout.sizes) {
    const auto h = hadamard_matrix(n);
    Matrix<float> m(n, n);
    for (std::size_t i = 0; i < h.size(); ++i) m.flat()[i] = static_cast<float>(h.flat()[i]);
    d.blocks.push_back(std::move(m));
  }
  return d;
}

bool BlockDiagonal::is_identity() const {
  for (const auto& b : blocks) {
    for (std::size_t i = 0; i < b.rows(); ++i) {
      for (std::size_t j = 0; j < b.cols(); ++j) {
        if (b(i, j) != (i == j ? 1.0f : 0.0f)) return false;
      }
    }
  }
  return true;
}

Matrix<double> BlockDiagonal::dense() const {
  const std::size_t n = dim();
  Matrix<double> out(n, n);
  const auto offs = layout.offsets();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t i = 0; i < blocks[b].rows(); ++i) {
      for (std::size_t j = 0; j < blocks[b].cols(); ++j) out(offs[b] + i, offs[b] + j) = blocks[b](i, j);
    }
  }
  return out;
}

double BlockDiagonal::orthogonality_error() const {
  double worst = 0.0;
  for (const auto& b : blocks) {
    const std::size_t n = b.rows();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += static_cast<double>(b(i, k)) * b(j, k);
        worst = std::max(worst, std::fabs(dot - (i == j ? 1.0 : 0.0)));
      }
    }
  }
  return worst;
}

Permutation Permutation::identity(std::size_t n) {
  Permutation p;
  p.source.resize(n);
  std::iota(p.source.begin(), p.source.end(), 0);
  return p;
}

bool Permutation::is_identity() const {
  for (std::size_t j = 0; j < source.size(); ++j) {
    if (source[j] != j) return false;
  }
  return true;
}

bool Permutation::is_valid() const {
  std::vector<bool> seen(source.size(), false);
  for (auto s : source) {
    if (s >= source.size() || seen[s]) return false;
    seen[s] = true;
  }
  return true;
}

Matrix<double> Permutation::dense() const {
  Matrix<double> out(source.size(), source.size());
  for (std::size_t j = 0; j < source.size(); ++j) out(source[j], j) = 1.0;
  return out;
}

Matrix<float> multiply_right(const Matrix<float>& x, const BlockDiagonal& b) {
  if (x.cols() != b.dim()) {
    throw std::invalid_argument("transform dim " + std::to_string(b.dim()) + " != input width " +
                                std::to_string(x.cols()));
  }
  Matrix<float> out(x.rows(), x.cols());
  const auto offs = b.layout.offsets();
  std::vector<double> acc;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    auto dst = out.row(r);
    for (std::size_t k = 0; k < b.blocks.size(); ++k) {
      const auto& m = b.blocks[k];
      const std::size_t n = m.rows(), off = offs[k];
      acc.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double v = in[off + i];
        if (v == 0.0) continue;
        const auto mrow = m.row(i);
        for (std::size_t j = 0; j < n; ++j) acc[j] += v * static_cast<double>(mrow[j]);
      }
      for (std::size_t j = 0; j < n; ++j) dst[off + j] = static_cast<float>(acc[j]);
    }
  }
  return out;
}

Matrix<float> multiply_right(const Matrix<float>& x, const Permutation& p) {
  if (x.cols() != p.source.size()) throw std::invalid_argument("permutation size != input width");
  Matrix<float> out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < x.cols(); ++j) out(r, j) = x(r, p.source[j]);
  }
  return out;
}

}  // namespace lrq
