#pragma once

#include <array>
#include <cstdint>

namespace lrq {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// Every output block is a pure function of (key, counter), so synthetic
/// tensors are reproducible element by element regardless of traversal
/// order or thread count.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;

  explicit Philox4x32(std::uint64_t seed)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  Block operator()(const Block& counter) const;

  /// Block at counter (index_lo, index_hi, stream, 0).
  Block at(std::uint64_t index, std::uint32_t stream) const {
    return (*this)({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    stream, 0u});
  }

 private:
  std::array<std::uint32_t, 2> key_;
};

/// Uniform double in [0, 1) from the top 53 bits of (hi, lo).
double uniform_from_bits(std::uint32_t hi, std::uint32_t lo);

/// Uniform double in (0, 1], safe as a logarithm argument.
double uniform_open_zero(std::uint32_t hi, std::uint32_t lo);

/// Two standard normals from one Philox block via Box-Muller.
std::array<double, 2> normal_pair(const Philox4x32::Block& block);

}  // namespace lrq
