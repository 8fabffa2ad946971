#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>

#include "lrq/artifact_io.hpp"
#include "lrq/rng.hpp"
#include "lrq/tensorio.hpp"
#include "oracle.hpp"

using namespace lrq;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lrq_tensorio_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

IoError::Kind load_error(const fs::path& manifest, const std::string& name) {
  try {
    load_tensor(manifest, name);
  } catch (const IoError& e) {
    return e.kind();
  }
  FAIL("expected IoError");
  return IoError::Kind::write_failed;
}

}  // namespace

TEST_CASE("philox matches the published known-answer vectors") {
  const Philox4x32 zero(0);
  CHECK(zero({0, 0, 0, 0}) == Philox4x32::Block{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  const Philox4x32 ones(~std::uint64_t{0});
  const std::uint32_t f = 0xffffffffu;
  CHECK(ones({f, f, f, f}) == Philox4x32::Block{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
}

TEST_CASE("real, int and bit tensors round-trip through a manifest") {
  const fs::path dir = scratch("roundtrip");
  const Matrix<float> r(2, 3, std::vector<float>{1.5f, -2.0f, 0.0f, 3.25f, 1e-30f, -7.0f});
  const Matrix<std::int32_t> i(1, 4, std::vector<std::int32_t>{-5, 0, 7, 2147483647});
  const Tensor bits = Tensor::bits({3, 10}, {1, 0, 1, 1, 0, 0, 0, 0, 1, 1,  //
                                             0, 0, 0, 0, 0, 0, 0, 0, 0, 1,  //
                                             1, 1, 1, 1, 1, 1, 1, 1, 1, 1});
  const Tensor bytes = Tensor::uint8({5}, {0, 1, 128, 254, 255});
  const fs::path m = ManifestWriter(dir, "t", "test").add("r", r).add("i", i).add("b", bits).add("u", bytes).write();

  CHECK(load_tensor(m, "r").real_matrix() == r);
  CHECK(load_tensor(m, "i").int_matrix() == i);
  CHECK(load_tensor(m, "b") == bits);
  CHECK(load_tensor(m, "u") == bytes);

  // Row padding: 10 bits per row occupy 2 bytes, LSB first.
  const auto raw = slurp(dir / "t.b.bin");
  REQUIRE(raw.size() == 6);
  CHECK(static_cast<unsigned char>(raw[0]) == 0b00001101);
  CHECK(static_cast<unsigned char>(raw[1]) == 0b00000011);
  CHECK(static_cast<unsigned char>(raw[3]) == 0b00000010);
  CHECK(expected_file_bytes({3, 10}, DType::bit) == 6);
  CHECK(expected_file_bytes({2, 3}, DType::real32) == 24);

  const auto rf = slurp(dir / "t.r.bin");
  REQUIRE(rf.size() == 24);
  float first;
  std::memcpy(&first, rf.data(), 4);
  CHECK(first == 1.5f);
}

TEST_CASE("loader errors are specific") {
  const fs::path dir = scratch("errors");
  const fs::path m = ManifestWriter(dir, "t", "test").add("w", Matrix<float>(4, 4, 1.0f)).write();

  CHECK(load_error(m, "nope") == IoError::Kind::unknown_tensor);

  std::ofstream(dir / "t.w.bin", std::ios::binary | std::ios::trunc).write("abc", 3);
  CHECK(load_error(m, "w") == IoError::Kind::size_mismatch);
  try {
    load_tensor(m, "w");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("expected 64 bytes, got 3") != std::string::npos);
  }

  fs::remove(dir / "t.w.bin");
  CHECK(load_error(m, "w") == IoError::Kind::missing_file);

  std::ofstream(dir / "bad.manifest.json") << "{ not json";
  CHECK_THROWS_AS(read_manifest(dir / "bad.manifest.json"), IoError);

  std::ofstream(dir / "dt.manifest.json")
      << R"({"format":"lrq-tensors","version":1,"artifact":"x","meta":{},"entries":[{"name":"a","dims":[2],"dtype":"float16","file":"a.bin"}]})";
  try {
    read_manifest(dir / "dt.manifest.json");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.kind() == IoError::Kind::unknown_dtype);
  }
}

TEST_CASE("writing under an unwritable location fails cleanly") {
  const fs::path dir = scratch("unwritable");
  std::ofstream(dir / "file") << "x";
  ManifestWriter w(dir / "file" / "sub", "t", "test");
  w.add("a", Matrix<float>(1, 1, 0.0f));
  CHECK_THROWS_AS(w.write(), IoError);
}

TEST_CASE("synthetic generator is deterministic and matches its parameters") {
  const SyntheticSpec spec{128, 128, 0.02, 0.01, 8.0, 42};
  const WeightMatrix a = gen_gaussian_longtail(spec), b = gen_gaussian_longtail(spec);
  CHECK(a == b);
  SyntheticSpec other = spec;
  other.seed = 43;
  CHECK_FALSE(gen_gaussian_longtail(other) == a);

  // Without a tail the sample standard deviation is sigma within sampling error.
  SyntheticSpec plain = spec;
  plain.tail_fraction = 0.0;
  double sq = 0.0;
  const WeightMatrix p = gen_gaussian_longtail(plain);
  for (float v : p.flat()) sq += static_cast<double>(v) * v;
  CHECK(std::sqrt(sq / p.size()) == doctest::Approx(0.02).epsilon(0.03));

  // The tail multiplies exactly the elements selected by the stream-1 uniforms.
  std::size_t scaled = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.flat()[i] != p.flat()[i]) {
      CHECK(a.flat()[i] == doctest::Approx(8.0 * p.flat()[i]));
      ++scaled;
    }
  }
  CHECK(scaled > 100);
  CHECK(scaled < 230);

  SyntheticSpec bad = spec;
  bad.sigma = 0.0;
  CHECK_THROWS_AS(gen_gaussian_longtail(bad), std::invalid_argument);
}

TEST_CASE("activations carry outliers only in the chosen channels") {
  ActivationSpec spec;
  spec.batches = 2;
  spec.tokens = 16;
  spec.channels = 64;
  spec.outlier_channels = 3;
  spec.seed = 5;
  const ActivationBatch x = gen_activations(spec);
  CHECK(x == gen_activations(spec));
  const auto idx = outlier_channel_indices(spec);
  REQUIRE(idx.size() == 3);
  std::vector<double> peak(64, 0.0);
  for (std::size_t t = 0; t < x.token_count(); ++t)
    for (std::size_t c = 0; c < 64; ++c) peak[c] = std::max(peak[c], std::fabs(double(x.values(t, c))));
  double plain = 0.0, salient = 1e9;
  for (std::size_t c = 0; c < 64; ++c) {
    if (std::find(idx.begin(), idx.end(), c) != idx.end()) {
      salient = std::min(salient, peak[c]);
    } else {
      plain = std::max(plain, peak[c]);
    }
  }
  CHECK(salient > 5.0 * plain);
}

TEST_CASE("artifacts round-trip through files") {
  const fs::path dir = scratch("artifacts");
  std::mt19937_64 rng(3);
  const WeightMatrix w = oracle::gaussian(6, 32, 0.02, rng);

  const TwinLogArtifact tl = tlq_quantize_matrix(w, 3, ClipGrid::default_grid());
  save_artifact(tl, dir);
  CHECK(load_twinlog(dir / "twinlog.manifest.json") == tl);

  const ShiftArtifact sh = integerize(tl, ShiftConfig{});
  save_artifact(sh, dir);
  CHECK(load_shift(dir / "shift.manifest.json") == sh);

  const RowQuantized u = per_channel_quantize(w, 4);
  save_artifact(u, dir);
  const RowQuantized u2 = load_uniform(dir / "uniform.manifest.json");
  CHECK(u2.codes == u.codes);
  CHECK(u2.params == u.params);

  const Matrix<float> x = oracle::gaussian(40, 32, 1.0, rng);
  for (const RotationPlan& plan :
       {RotationPlan::identity(32), hadamard_plan(32, RotationConfig{16, 4}), dual_plan(x, RotationConfig{16, 4})}) {
    save_artifact(plan, dir, "plan_" + to_string(plan.kind));
    CHECK(load_rotation_plan(dir / ("plan_" + to_string(plan.kind) + ".manifest.json")) == plan);
  }

  const SmoothingVector s = compute_smoothing(x, w, 0.5);
  save_artifact(s, dir);
  CHECK(load_smoothing(dir / "smoothing.manifest.json") == s);

  // Loading with the wrong artifact kind is rejected.
  CHECK_THROWS_AS(load_shift(dir / "twinlog.manifest.json"), IoError);
}

TEST_CASE("corpus round-trip keeps batch structure") {
  const fs::path dir = scratch("corpus");
  ActivationSpec as;
  as.batches = 3;
  as.tokens = 5;
  as.channels = 8;
  std::vector<CorpusLayer> layers{{"b.attn", gen_gaussian_longtail({4, 8, 0.02, 0.0, 1.0, 1}), gen_activations(as)},
                                  {"a.mlp", gen_gaussian_longtail({2, 8, 0.02, 0.0, 1.0, 2}), gen_activations(as)}};
  save_corpus(layers, dir);
  const auto back = load_corpus(dir);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].name == layers[i].name);
    CHECK(back[i].weight == layers[i].weight);
    CHECK(back[i].activations == layers[i].activations);
  }
}
