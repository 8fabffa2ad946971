#include <algorithm>
#include <numeric>

#include "lrq/rng.hpp"
#include "lrq/tensorio.hpp"

namespace lrq {

namespace {

enum Stream : std::uint32_t {
  kWeightNormal = 0,
  kWeightTail = 1,
  kOutlierPick = 2,
  kActivationNormal = 3,
};

/// Standard normal for flat element `index`; two elements share one block.
double normal_at(const Philox4x32& rng, std::uint64_t index, std::uint32_t stream) {
  const auto pair = normal_pair(rng.at(index / 2, stream));
  return pair[index % 2];
}

}  // namespace

void SyntheticSpec::validate() const {
  if (rows == 0 || cols == 0) throw std::invalid_argument("synthetic rows and cols must be positive");
  if (!(sigma > 0.0)) throw std::invalid_argument("synthetic sigma must be positive");
  if (!(tail_fraction >= 0.0 && tail_fraction <= 1.0)) {
    throw std::invalid_argument("tail_fraction must lie in [0, 1]");
  }
  if (!(tail_scale >= 1.0)) throw std::invalid_argument("tail_scale must be >= 1");
}

WeightMatrix gen_gaussian_longtail(const SyntheticSpec& spec) {
  spec.validate();
  const Philox4x32 rng(spec.seed);
  WeightMatrix w(spec.rows, spec.cols);
  auto flat = w.flat();
  for (std::uint64_t i = 0; i < flat.size(); ++i) {
    double v = spec.sigma * normal_at(rng, i, kWeightNormal);
    const auto block = rng.at(i, kWeightTail);
    if (uniform_from_bits(block[0], block[1]) < spec.tail_fraction) v *= spec.tail_scale;
    flat[i] = static_cast<float>(v);
  }
  return w;
}

std::vector<std::size_t> outlier_channel_indices(const ActivationSpec& spec) {
  const std::size_t k = std::min(spec.outlier_channels, spec.channels);
  std::vector<std::size_t> order(spec.channels);
  std::iota(order.begin(), order.end(), 0);
  const Philox4x32 rng(spec.seed);
  for (std::size_t i = 0; i < k; ++i) {
    const auto block = rng.at(i, kOutlierPick);
    const double u = uniform_from_bits(block[0], block[1]);
    const auto j = i + static_cast<std::size_t>(u * static_cast<double>(spec.channels - i));
    std::swap(order[i], order[j]);
  }
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

ActivationBatch gen_activations(const ActivationSpec& spec) {
  if (spec.batches == 0 || spec.tokens == 0 || spec.channels == 0) {
    throw std::invalid_argument("activation dims must be positive");
  }
  const Philox4x32 rng(spec.seed);
  std::vector<double> channel_scale(spec.channels, 1.0);
  for (auto c : outlier_channel_indices(spec)) channel_scale[c] = spec.outlier_scale;

  ActivationBatch x(spec.batches, spec.tokens, spec.channels);
  auto flat = x.values.flat();
  for (std::uint64_t i = 0; i < flat.size(); ++i) {
    const double z = normal_at(rng, i, kActivationNormal);
    flat[i] = static_cast<float>(spec.sigma * channel_scale[i % spec.channels] * z);
  }
  return x;
}

}  // namespace lrq
